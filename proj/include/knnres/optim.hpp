#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"
#include "knnres/net.hpp"

namespace knnres {

struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // added to the gradient as weight_decay * theta
  long t = 0;
  Vector m;
  Vector v;
};

/// One bias-corrected Adam update on a flat parameter vector. Moments are
/// sized lazily on the first call.
inline void adam_step(Vector& params, const Vector& grad, AdamState& st) {
  detail::require(params.size() == grad.size(), "adam_step: parameter/gradient size mismatch");
  if (st.m.size() == 0) {
    st.m = Vector::Zero(params.size());
    st.v = Vector::Zero(params.size());
  }
  detail::require(st.m.size() == params.size(), "adam_step: state does not match parameters");
  Vector g = grad;
  if (st.weight_decay != 0.0) g += st.weight_decay * params;
  ++st.t;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * g;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  params.array() -= st.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.eps);
}

inline void adam_step(ResidualNet& net, const ParamGradient& grad, AdamState& st) {
  Vector theta = flatten(net);
  adam_step(theta, flatten(grad), st);
  unflatten(net, theta);
}

/// Reduce-on-plateau: an epoch improves if loss < best * (1 - threshold)
/// (absolute comparison when best <= 0). After more than `patience`
/// non-improving epochs the rate is multiplied by `factor`, floored at
/// min_lr, and the counter restarts.
struct PlateauState {
  double lr = 0.01;
  double factor = 0.7;
  int patience = 50;
  double min_lr = 5e-5;
  double threshold = 1e-6;
  double best_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
};

inline double plateau_step(PlateauState& st, double current_loss) {
  const double bar = st.best_loss > 0 ? st.best_loss * (1.0 - st.threshold) : st.best_loss - st.threshold;
  if (current_loss < bar) {
    st.best_loss = current_loss;
    st.epochs_since_improvement = 0;
  } else if (++st.epochs_since_improvement > st.patience) {
    st.lr = std::max(st.lr * st.factor, st.min_lr);
    st.epochs_since_improvement = 0;
  }
  return st.lr;
}

}  // namespace knnres
