#include <gtest/gtest.h>

#include "knnres/optim.hpp"

using namespace knnres;

TEST(Adam, ZeroGradientLeavesParameters) {
  Vector p(3);
  p << 1, -2, 3;
  AdamState st;
  const Vector before = p;
  adam_step(p, Vector::Zero(3), st);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  Vector p = Vector::Zero(1);
  AdamState st;
  st.lr = 0.1;
  adam_step(p, Vector::Ones(1), st);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  EXPECT_NEAR(p(0), -0.1 / (1 + 1e-8), 1e-15);
}

TEST(Adam, DeterministicTrajectories) {
  auto run = [] {
    Vector p = Vector::LinSpaced(4, -1, 1);
    AdamState st;
    for (int i = 0; i < 50; ++i) adam_step(p, p.cwiseProduct(p) - Vector::Constant(4, 0.3), st);
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ScaleEquivariance) {
  Vector a = Vector::Zero(3), b = Vector::Zero(3);
  Vector g(3);
  g << 0.5, -2.0, 1e-3;
  AdamState sa, sb;
  for (int i = 0; i < 200; ++i) {
    adam_step(a, g, sa);
    adam_step(b, 1000.0 * g, sb);
  }
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(std::signbit(a(i)), std::signbit(b(i)));
    EXPECT_NEAR(a(i), b(i), 1e-4);
  }
  // constant gradients saturate the moments: each step is ~lr
  Vector c = Vector::Zero(1);
  AdamState sc;
  for (int i = 0; i < 1000; ++i) adam_step(c, Vector::Constant(1, 3.0), sc);
  EXPECT_NEAR(c(0), -1000 * sc.lr, 1e-3);
}

TEST(Adam, WeightDecayPullsTowardZero) {
  Vector p = Vector::Constant(1, 2.0);
  AdamState st;
  st.weight_decay = 0.1;
  adam_step(p, Vector::Zero(1), st);
  EXPECT_LT(p(0), 2.0);
}

TEST(Adam, ShapeMismatch) {
  Vector p = Vector::Zero(2);
  AdamState st;
  EXPECT_THROW(adam_step(p, Vector::Zero(3), st), InvalidArgument);
}

TEST(Adam, NetOverloadUpdatesEveryLayer) {
  auto net = init_net(2, {3}, 0.01, 1);
  auto g = ParamGradient::zeros_like(net);
  for (auto& l : g.layers) {
    l.weight.setOnes();
    l.bias.setOnes();
  }
  AdamState st;
  const Vector before = flatten(net);
  adam_step(net, g, st);
  EXPECT_NEAR((flatten(net) - before).maxCoeff(), -st.lr / (1 + 1e-8), 1e-12);
}

TEST(Plateau, DecreasingLossNeverReduces) {
  PlateauState st;
  for (int i = 0; i < 500; ++i) EXPECT_EQ(plateau_step(st, 1.0 / (i + 1)), 0.01);
}

TEST(Plateau, ConstantLossReducesAfterPatience) {
  PlateauState st;
  st.patience = 5;
  plateau_step(st, 1.0);  // establishes best
  for (int i = 0; i < 5; ++i) EXPECT_EQ(plateau_step(st, 1.0), 0.01);
  EXPECT_NEAR(plateau_step(st, 1.0), 0.007, 1e-15);
}

TEST(Plateau, FloorsAtMinLr) {
  PlateauState st;
  st.lr = 5e-5;
  st.patience = 0;
  for (int i = 0; i < 10; ++i) EXPECT_EQ(plateau_step(st, 1.0), 5e-5);
}

TEST(Plateau, LrIsMonotoneAndBounded) {
  PlateauState st;
  st.patience = 3;
  double prev = st.lr;
  for (int i = 0; i < 400; ++i) {
    const double lr = plateau_step(st, 1.0 + 0.1 * std::sin(i));
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, st.min_lr);
    prev = lr;
  }
}
