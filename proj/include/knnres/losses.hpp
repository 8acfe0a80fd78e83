#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"
#include "knnres/parallel.hpp"

namespace knnres {

struct MmdConfig {
  double sigma = 0.04;  // Gaussian kernel bandwidth
};

/// Debiased entropic OT with cost C(x, y) = |x - y|^2 / 2 and eps = sigma^2.
struct SinkhornConfig {
  double sigma = 0.01;
  int max_iters = 500;
  double tol = 1e-6;
  // Annealing: eps starts at the squared diameter of the data and shrinks by
  // scaling^2 per iteration until it reaches sigma^2. Set anneal=false to
  // iterate at the target eps from a cold start.
  bool anneal = true;
  double scaling = 0.5;

  double eps() const { return sigma * sigma; }
};

/// Entropic dual potentials: f lives on the first measure, g on the second.
struct DualPotentials {
  Vector f;
  Vector g;
  int iterations = 0;
  bool converged = false;
};

/// A scalar loss with its gradient with respect to the moving points.
struct LossValue {
  double value = 0.0;
  Matrix grad;
  bool converged = true;
};

inline double gaussian_kernel(const Eigen::Ref<const RowVector>& x, const Eigen::Ref<const RowVector>& y, double sigma) {
  return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
}

/// Half the squared kernel norm of alpha - beta for uniform empirical
/// measures on the rows of x and y (V-statistic, diagonal terms included).
/// `kernel(a, b)` takes two row vectors.
template <typename Kernel>
double kernel_mmd_value(const Matrix& x, const Matrix& y, Kernel&& kernel) {
  detail::require(x.cols() == y.cols(), "kernel_mmd_value: dimension mismatch");
  const double n = static_cast<double>(x.rows()), m = static_cast<double>(y.rows());
  double kxx = 0, kyy = 0, kxy = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j) kxx += kernel(x.row(i), x.row(j));
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) kyy += kernel(y.row(i), y.row(j));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) kxy += kernel(x.row(i), y.row(j));
  return 0.5 * (kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m));
}

/// Gaussian-kernel MMD between reference X and moving Y_hat, with the exact
/// gradient with respect to Y_hat.
inline LossValue mmd(const PointSet& x, const PointSet& y_hat, const MmdConfig& cfg) {
  detail::require(x.dim() == y_hat.dim(), "mmd: dimension mismatch");
  detail::require(cfg.sigma > 0, "mmd: sigma must be positive");
  const Matrix& X = x.matrix();
  const Matrix& Y = y_hat.matrix();
  const Eigen::Index n = X.rows(), m = Y.rows();
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  const double inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);

  // Row-wise partial sums keep the result independent of the thread count.
  Vector row_xx(n), row_yy(m), row_xy(m);
  Matrix grad(m, X.cols());
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
    const auto i = static_cast<Eigen::Index>(ui);
    double s = 0;
    for (Eigen::Index j = 0; j < n; ++j) s += std::exp(-(X.row(i) - X.row(j)).squaredNorm() * inv2s2);
    row_xx(i) = s;
  }, 16);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t uj) {
    const auto j = static_cast<Eigen::Index>(uj);
    RowVector gy = RowVector::Zero(X.cols());
    RowVector gx = RowVector::Zero(X.cols());
    double syy = 0, sxy = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      const RowVector diff = Y.row(j) - Y.row(k);
      const double kv = std::exp(-diff.squaredNorm() * inv2s2);
      syy += kv;
      gy -= kv * diff;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const RowVector diff = Y.row(j) - X.row(i);
      const double kv = std::exp(-diff.squaredNorm() * inv2s2);
      sxy += kv;
      gx -= kv * diff;
    }
    row_yy(j) = syy;
    row_xy(j) = sxy;
    grad.row(j) = inv_s2 * (gy / (double(m) * m) - gx / (double(n) * m));
  }, 16);

  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  LossValue out;
  out.value = 0.5 * (row_xx.sum() / (nn * nn) + row_yy.sum() / (mm * mm) - 2.0 * row_xy.sum() / (nn * mm));
  out.grad = std::move(grad);
  return out;
}

namespace detail {

// cost(i, j) = |a_i - b_j|^2 / 2, formed from explicit differences.
inline Matrix half_sq_cost(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  parallel_for(static_cast<std::size_t>(b.rows()), [&](std::size_t uj) {
    const auto j = static_cast<Eigen::Index>(uj);
    for (Eigen::Index i = 0; i < a.rows(); ++i) c(i, j) = 0.5 * (a.row(i) - b.row(j)).squaredNorm();
  }, 8);
  return c;
}

// out_j = -eps * log sum_i exp(log_w_i + (h_i - cost(i, j)) / eps)
inline Vector softmin(double eps, const Matrix& cost, const Vector& log_w, const Vector& h) {
  Vector out(cost.cols());
  const Vector base = log_w + h / eps;
  parallel_for(static_cast<std::size_t>(cost.cols()), [&](std::size_t uj) {
    const auto j = static_cast<Eigen::Index>(uj);
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < cost.rows(); ++i) mx = std::max(mx, base(i) - cost(i, j) / eps);
    double s = 0;
    for (Eigen::Index i = 0; i < cost.rows(); ++i) s += std::exp(base(i) - cost(i, j) / eps - mx);
    out(j) = -eps * (mx + std::log(s));
  }, 8);
  return out;
}

inline double squared_diameter(const Matrix& a, const Matrix& b) {
  const RowVector lo = a.colwise().minCoeff().cwiseMin(b.colwise().minCoeff());
  const RowVector hi = a.colwise().maxCoeff().cwiseMax(b.colwise().maxCoeff());
  return (hi - lo).squaredNorm();
}

inline Vector uniform_log_weights(Eigen::Index n) { return Vector::Constant(n, -std::log(static_cast<double>(n))); }

inline void check_log_weights(const Vector& log_w, Eigen::Index n, const char* who) {
  require(log_w.size() == n, std::string(who) + ": weight count does not match point count");
  const double total = log_w.array().exp().sum();
  require(std::abs(total - 1.0) < 1e-9, std::string(who) + ": weights must sum to 1");
}

// Annealed eps values ending at the target.
inline std::vector<double> eps_schedule(double eps, double diameter2, const SinkhornConfig& cfg) {
  std::vector<double> sched;
  if (cfg.anneal && diameter2 > eps) {
    const double ratio = cfg.scaling * cfg.scaling;
    for (double e = diameter2; e > eps; e *= ratio) sched.push_back(e);
  }
  sched.push_back(eps);
  return sched;
}

// Symmetric Sinkhorn between two measures given the cost matrix (rows = a).
inline DualPotentials solve_pair(const Matrix& cost, const Vector& log_a, const Vector& log_b, double eps,
                                 double diameter2, const SinkhornConfig& cfg) {
  const Matrix cost_t = cost.transpose();
  const auto sched = eps_schedule(eps, diameter2, cfg);
  DualPotentials p;
  p.f = softmin(sched.front(), cost_t, log_b, Vector::Zero(cost.cols()));
  p.g = softmin(sched.front(), cost, log_a, Vector::Zero(cost.rows()));
  for (std::size_t s = 0; s + 1 < sched.size(); ++s) {
    const Vector ft = softmin(sched[s], cost_t, log_b, p.g);
    const Vector gt = softmin(sched[s], cost, log_a, p.f);
    p.f = 0.5 * (p.f + ft);
    p.g = 0.5 * (p.g + gt);
  }
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Vector ft = softmin(eps, cost_t, log_b, p.g);
    const Vector gt = softmin(eps, cost, log_a, p.f);
    const Vector fn = 0.5 * (p.f + ft), gn = 0.5 * (p.g + gt);
    const double change = std::max((fn - p.f).cwiseAbs().maxCoeff(), (gn - p.g).cwiseAbs().maxCoeff());
    p.f = fn;
    p.g = gn;
    p.iterations = it + 1;
    if (change < cfg.tol) {
      p.converged = true;
      break;
    }
  }
  // Final full (unaveraged) update.
  const Vector ft = softmin(eps, cost_t, log_b, p.g);
  const Vector gt = softmin(eps, cost, log_a, p.f);
  p.f = ft;
  p.g = gt;
  return p;
}

// Self-transport: a single potential, f == g.
inline DualPotentials solve_self(const Matrix& cost, const Vector& log_w, double eps, double diameter2,
                                 const SinkhornConfig& cfg) {
  const auto sched = eps_schedule(eps, diameter2, cfg);
  DualPotentials p;
  p.f = softmin(sched.front(), cost, log_w, Vector::Zero(cost.rows()));
  for (std::size_t s = 0; s + 1 < sched.size(); ++s) p.f = 0.5 * (p.f + softmin(sched[s], cost, log_w, p.f));
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Vector fn = 0.5 * (p.f + softmin(eps, cost, log_w, p.f));
    const double change = (fn - p.f).cwiseAbs().maxCoeff();
    p.f = fn;
    p.iterations = it + 1;
    if (change < cfg.tol) {
      p.converged = true;
      break;
    }
  }
  p.f = softmin(eps, cost, log_w, p.f);
  p.g = p.f;
  return p;
}

// Dual objective <a,f> + <b,g> - eps <a x b, exp((f + g - C)/eps) - 1>.
// Returns the value and, optionally, the plan pi(i, j).
inline double dual_objective(const Matrix& cost, const Vector& log_a, const Vector& log_b, const DualPotentials& p,
                             double eps, Matrix* plan) {
  const Vector a = log_a.array().exp();
  const Vector b = log_b.array().exp();
  double value = a.dot(p.f) + b.dot(p.g);
  Vector col_terms(cost.cols());
  if (plan) plan->resize(cost.rows(), cost.cols());
  parallel_for(static_cast<std::size_t>(cost.cols()), [&](std::size_t uj) {
    const auto j = static_cast<Eigen::Index>(uj);
    double s = 0;
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
      const double pij = std::exp(log_a(i) + log_b(j) + (p.f(i) + p.g(j) - cost(i, j)) / eps);
      if (plan) (*plan)(i, j) = pij;
      s += pij - a(i) * b(j);
    }
    col_terms(j) = s;
  }, 8);
  return value - eps * col_terms.sum();
}

}  // namespace detail

/// Log-domain Sinkhorn potentials between two weighted point clouds. Weights
/// default to uniform and must sum to one. Non-convergence is reported via
/// the `converged` flag, not an exception.
inline DualPotentials sinkhorn_potentials(const PointSet& a, const PointSet& b, double eps, int max_iters, double tol,
                                          const std::optional<Vector>& weights_a = std::nullopt,
                                          const std::optional<Vector>& weights_b = std::nullopt) {
  detail::require(a.dim() == b.dim(), "sinkhorn_potentials: dimension mismatch");
  detail::require(eps > 0, "sinkhorn_potentials: eps must be positive");
  detail::require(max_iters >= 1, "sinkhorn_potentials: max_iters must be >= 1");
  const Vector log_a = weights_a ? Vector(weights_a->array().log()) : detail::uniform_log_weights(a.size());
  const Vector log_b = weights_b ? Vector(weights_b->array().log()) : detail::uniform_log_weights(b.size());
  detail::check_log_weights(log_a, a.size(), "sinkhorn_potentials");
  detail::check_log_weights(log_b, b.size(), "sinkhorn_potentials");
  SinkhornConfig cfg;
  cfg.max_iters = max_iters;
  cfg.tol = tol;
  return detail::solve_pair(detail::half_sq_cost(a.matrix(), b.matrix()), log_a, log_b, eps,
                            detail::squared_diameter(a.matrix(), b.matrix()), cfg);
}

/// Entropic OT value with uniform weights, read off the dual objective at
/// the computed potentials.
inline double ot_eps(const PointSet& a, const PointSet& b, double eps, int max_iters = 500, double tol = 1e-6) {
  detail::require(a.dim() == b.dim(), "ot_eps: dimension mismatch");
  detail::require(eps > 0, "ot_eps: eps must be positive");
  const Vector log_a = detail::uniform_log_weights(a.size());
  const Vector log_b = detail::uniform_log_weights(b.size());
  const Matrix cost = detail::half_sq_cost(a.matrix(), b.matrix());
  SinkhornConfig cfg;
  cfg.max_iters = max_iters;
  cfg.tol = tol;
  const auto p = detail::solve_pair(cost, log_a, log_b, eps, detail::squared_diameter(a.matrix(), b.matrix()), cfg);
  return detail::dual_objective(cost, log_a, log_b, p, eps, nullptr);
}

/// S_eps(alpha, beta) = OT(alpha, beta) - (OT(alpha, alpha) + OT(beta, beta)) / 2
/// with uniform weights; gradient with respect to the rows of y_hat with
/// the potentials held fixed.
inline LossValue sinkhorn_divergence(const PointSet& x, const PointSet& y_hat, const SinkhornConfig& cfg) {
  detail::require(x.dim() == y_hat.dim(), "sinkhorn_divergence: dimension mismatch");
  detail::require(cfg.sigma > 0, "sinkhorn_divergence: sigma must be positive");
  detail::require(cfg.max_iters >= 1, "sinkhorn_divergence: max_iters must be >= 1");
  const double eps = cfg.eps();
  const Matrix& X = x.matrix();
  const Matrix& Y = y_hat.matrix();
  const Vector log_a = detail::uniform_log_weights(X.rows());
  const Vector log_b = detail::uniform_log_weights(Y.rows());
  const double diam2 = detail::squared_diameter(X, Y);

  const Matrix c_xy = detail::half_sq_cost(X, Y);
  const Matrix c_xx = detail::half_sq_cost(X, X);
  const Matrix c_yy = detail::half_sq_cost(Y, Y);

  const auto p_xy = detail::solve_pair(c_xy, log_a, log_b, eps, diam2, cfg);
  const auto p_xx = detail::solve_self(c_xx, log_a, eps, diam2, cfg);
  const auto p_yy = detail::solve_self(c_yy, log_b, eps, diam2, cfg);

  Matrix plan_xy, plan_yy;
  const double ot_xy = detail::dual_objective(c_xy, log_a, log_b, p_xy, eps, &plan_xy);
  const double ot_xx = detail::dual_objective(c_xx, log_a, log_a, p_xx, eps, nullptr);
  const double ot_yy = detail::dual_objective(c_yy, log_b, log_b, p_yy, eps, &plan_yy);

  // d OT_xy / d y_j = sum_i pi_ij (y_j - x_i)
  // d OT_yy / d y_j = 2 sum_k pi_kj (y_j - y_k)
  // Both terms use the same reductions, so the gradient is exactly zero
  // when x and y_hat are bitwise equal (pi_yy is then bitwise pi_xy).
  const Vector mass_xy = plan_xy.colwise().sum().transpose();
  const Vector mass_yy = plan_yy.colwise().sum().transpose();
  Matrix grad = mass_xy.asDiagonal() * Y - plan_xy.transpose() * X;
  grad -= mass_yy.asDiagonal() * Y - plan_yy.transpose() * Y;

  LossValue out;
  out.value = ot_xy - 0.5 * (ot_xx + ot_yy);
  out.grad = std::move(grad);
  out.converged = p_xy.converged && p_xx.converged && p_yy.converged;
  return out;
}

}  // namespace knnres
