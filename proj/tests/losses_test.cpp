#include <gtest/gtest.h>

#include <cmath>

#include "knnres/losses.hpp"
#include "test_support.hpp"

using namespace knnres;
using knnres::testing::central_fd;
using knnres::testing::random_points;
using knnres::testing::rel_error;

namespace {

SinkhornConfig tight(double sigma) {
  SinkhornConfig c;
  c.sigma = sigma;
  c.tol = 1e-13;
  c.max_iters = 20000;
  return c;
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

// Primal entropic OT by plain (non-log) matrix scaling:
// <pi, C> + eps KL(pi | a x b), independent of the log-domain solver.
double primal_ot_oracle(const Matrix& x, const Matrix& y, double eps) {
  const Eigen::Index n = x.rows(), m = y.rows();
  Matrix c(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) c(i, j) = 0.5 * (x.row(i) - y.row(j)).squaredNorm();
  const Matrix k = (-c / eps).array().exp();
  const Vector a = Vector::Constant(n, 1.0 / n), b = Vector::Constant(m, 1.0 / m);
  Vector u = Vector::Ones(n), v = Vector::Ones(m);
  for (int it = 0; it < 100000; ++it) {
    u = a.cwiseQuotient(k * v);
    v = b.cwiseQuotient(k.transpose() * u);
  }
  const Matrix pi = u.asDiagonal() * k * v.asDiagonal();
  double value = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (pi(i, j) > 0) value += pi(i, j) * c(i, j) + eps * pi(i, j) * std::log(pi(i, j) / (a(i) * b(j)));
  return value;
}

}  // namespace

TEST(GaussianKernel, Values) {
  RowVector x(2), y(2);
  x << 0.3, -0.2;
  EXPECT_DOUBLE_EQ(gaussian_kernel(x, x, 0.5), 1.0);
  const double sigma = 0.7;
  y = x;
  y(0) += sigma * std::sqrt(2 * std::log(2.0));
  EXPECT_NEAR(gaussian_kernel(x, y, sigma), 0.5, 1e-15);
  double prev = 1.0;
  for (double r = 0.1; r < 10; r += 0.5) {
    y = x;
    y(1) += r;
    const double kv = gaussian_kernel(x, y, sigma);
    EXPECT_LT(kv, prev);
    EXPECT_GE(kv, 0.0);
    prev = kv;
  }
}

TEST(Mmd, SelfDistanceIsZero) {
  const auto x = random_points(12, 3, 1);
  const auto r = mmd(x, x, {0.3});
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  EXPECT_LT(r.grad.colwise().sum().cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Mmd, Singletons) {
  const auto x = random_points(1, 2, 2), y = random_points(1, 2, 3);
  const double sigma = 0.4;
  const double want = 1.0 - std::exp(-(x.matrix() - y.matrix()).squaredNorm() / (2 * sigma * sigma));
  EXPECT_NEAR(mmd(x, y, {sigma}).value, want, 1e-15);
}

TEST(Mmd, MatchesDirectDoubleSum) {
  const auto x = random_points(9, 2, 4), y = random_points(13, 2, 5);
  const double sigma = 0.25;
  const double want = kernel_mmd_value(x.matrix(), y.matrix(), [&](const auto& a, const auto& b) {
    return gaussian_kernel(a, b, sigma);
  });
  EXPECT_NEAR(mmd(x, y, {sigma}).value, want, 1e-14);
}

TEST(Mmd, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = random_points(10, 3, 10 + s), y = random_points(8, 3, 20 + s);
    const MmdConfig cfg{0.3};
    const auto r = mmd(x, y, cfg);
    auto f = [&](const Vector& v) { return mmd(x, PointSet(Eigen::Map<const Matrix>(v.data(), 8, 3)), cfg).value; };
    EXPECT_LT(rel_error(flat(r.grad), central_fd(f, flat(y.matrix()), 1e-6)), 1e-6);
  }
}

TEST(Mmd, NonNegative) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = random_points(7, 2, s), y = random_points(11, 2, 100 + s);
    EXPECT_GE(mmd(x, y, {0.2}).value, -1e-12);
  }
}

TEST(Sinkhorn, SingletonForcedCoupling) {
  const auto x = random_points(1, 3, 1), y = random_points(1, 3, 2);
  const double half_sq = 0.5 * (x.matrix() - y.matrix()).squaredNorm();
  for (double eps : {1e-4, 1e-2, 1.0, 100.0}) {
    EXPECT_NEAR(ot_eps(x, y, eps), half_sq, 1e-12) << "eps " << eps;
    SinkhornConfig c;
    c.sigma = std::sqrt(eps);
    EXPECT_NEAR(sinkhorn_divergence(x, y, c).value, half_sq, 1e-8);
  }
}

TEST(Sinkhorn, SelfDivergenceVanishes) {
  const auto x = random_points(25, 2, 3);
  for (double sigma : {0.05, 0.2, 1.0}) {
    SinkhornConfig c;
    c.sigma = sigma;
    EXPECT_LE(std::abs(sinkhorn_divergence(x, x, c).value), 1e-6);
  }
}

TEST(Sinkhorn, SelfPotentialsSymmetric) {
  const auto x = random_points(10, 2, 30);
  const auto p = sinkhorn_potentials(x, x, 0.05, 5000, 1e-12);
  EXPECT_TRUE(p.converged);
  EXPECT_LT((p.f - p.g).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GE(ot_eps(x, x, 0.05), 0.0);
}

TEST(Sinkhorn, Symmetric) {
  const auto x = random_points(14, 2, 4), y = random_points(19, 2, 5);
  const auto c = tight(0.2);
  EXPECT_LT(std::abs(sinkhorn_divergence(x, y, c).value - sinkhorn_divergence(y, x, c).value), 1e-8);
}

TEST(Sinkhorn, MatchesPrimalScalingOracle) {
  const auto x = random_points(8, 2, 6), y = random_points(6, 2, 7);
  for (double eps : {0.05, 0.2, 1.0}) EXPECT_NEAR(ot_eps(x, y, eps, 20000, 1e-14), primal_ot_oracle(x.matrix(), y.matrix(), eps), 1e-10);
}

TEST(Sinkhorn, PotentialsTranslateWithGauge) {
  const auto x = random_points(10, 2, 8), y = random_points(12, 2, 9);
  Matrix xs = x.matrix(), ys = y.matrix();
  xs.rowwise() += RowVector::Constant(2, 3.0);
  ys.rowwise() += RowVector::Constant(2, 3.0);
  const auto p = sinkhorn_potentials(x, y, 0.1, 5000, 1e-13);
  const auto q = sinkhorn_potentials(PointSet(xs), PointSet(ys), 0.1, 5000, 1e-13);
  // f + g is gauge invariant on every pair.
  const Matrix sp = p.f.replicate(1, 12) + p.g.transpose().replicate(10, 1);
  const Matrix sq = q.f.replicate(1, 12) + q.g.transpose().replicate(10, 1);
  EXPECT_LT((sp - sq).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Sinkhorn, GradientTranslationInvariant) {
  const auto x = random_points(10, 2, 10), y = random_points(10, 2, 11);
  Matrix xs = x.matrix(), ys = y.matrix();
  xs.rowwise() += RowVector::Constant(2, -2.0);
  ys.rowwise() += RowVector::Constant(2, -2.0);
  const auto c = tight(0.2);
  const auto a = sinkhorn_divergence(x, y, c), b = sinkhorn_divergence(PointSet(xs), PointSet(ys), c);
  EXPECT_NEAR(a.value, b.value, 1e-10);
  EXPECT_LT((a.grad - b.grad).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Sinkhorn, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const int n = 6 + static_cast<int>(s), m = 9 - static_cast<int>(s), d = 2 + static_cast<int>(s % 3);
    const auto x = random_points(n, d, 40 + s), y = random_points(m, d, 50 + s);
    const auto c = tight(0.3);
    const auto r = sinkhorn_divergence(x, y, c);
    auto f = [&](const Vector& v) {
      return sinkhorn_divergence(x, PointSet(Eigen::Map<const Matrix>(v.data(), m, d)), c).value;
    };
    EXPECT_LT(rel_error(flat(r.grad), central_fd(f, flat(y.matrix()), 1e-6)), 1e-5) << "seed " << s;
  }
}

TEST(Sinkhorn, NonNegative) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = random_points(8, 2, s), y = random_points(12, 2, 500 + s);
    SinkhornConfig c;
    c.sigma = 0.1;
    EXPECT_GE(sinkhorn_divergence(x, y, c).value, -1e-8);
  }
}

TEST(Sinkhorn, ApproachesNegativeCostMmdForLargeEps) {
  const auto x = random_points(30, 2, 60), y = random_points(30, 2, 61, 0.2, 1.2);
  const double limit = kernel_mmd_value(x.matrix(), y.matrix(), [](const auto& a, const auto& b) {
    return -0.5 * (a - b).squaredNorm();
  });
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.01, 0.1, 1.0, 10.0}) {
    SinkhornConfig c = tight(std::sqrt(eps));
    const double gap = std::abs(sinkhorn_divergence(x, y, c).value - limit) / limit;
    EXPECT_LT(gap, prev) << "eps " << eps;
    prev = gap;
  }
}

TEST(Sinkhorn, NonConvergenceIsFlaggedNotThrown) {
  const auto x = random_points(20, 2, 70), y = random_points(20, 2, 71);
  SinkhornConfig c;
  c.sigma = 1e-3;
  c.max_iters = 1;
  c.tol = 1e-15;
  const auto r = sinkhorn_divergence(x, y, c);
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Sinkhorn, RejectsBadWeights) {
  const auto x = random_points(3, 2, 1), y = random_points(3, 2, 2);
  EXPECT_THROW(sinkhorn_potentials(x, y, 0.1, 10, 1e-6, Vector::Constant(3, 0.5)), InvalidArgument);
  EXPECT_THROW(sinkhorn_potentials(x, random_points(3, 3, 2), 0.1, 10, 1e-6), InvalidArgument);
}
