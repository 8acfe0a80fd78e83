#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"
#include "knnres/net.hpp"

// Jacobian-orthogonality penalties on the full warp phi = id + delta.
//
// Both penalties evaluate delta on a stacked batch made of the base points and
// their perturbations; phi(y + r) - phi(y) is formed as r + delta(y + r) -
// delta(y) so the skip path is exact. Since the stack does not depend on
// theta, the parameter gradient is a single reverse pass of the net over the
// stack with the penalty's cotangent.

namespace knnres {

struct FdConfig {
  double epsilon = 0.005;
};

enum class HutchinsonMode {
  QuadraticForm,  // per-point variance of |phi(y + r) - phi(y)|^2 over directions
  Alg3Literal,    // per-coordinate variance of the scaled differences, max-reduced
};

struct HutchinsonConfig {
  double epsilon = 0.05;
  int k = 5;
  HutchinsonMode mode = HutchinsonMode::QuadraticForm;
};

struct PenaltyValue {
  double value = 0.0;
  ParamGradient grad;
};

/// Forward-difference Jacobians of a row-wise map at each row of y.
/// Column i of J is (map(y + eps e_i) - map(y)) / eps. `map` takes and
/// returns an m x d matrix.
template <typename Map>
std::vector<Matrix> fd_jacobian(Map&& map, const Matrix& y, double epsilon) {
  detail::require(epsilon > 0, "fd_jacobian: epsilon must be positive");
  const Eigen::Index m = y.rows(), d = y.cols();
  const Matrix base = map(y);
  std::vector<Matrix> jac(static_cast<std::size_t>(m), Matrix(d, d));
  for (Eigen::Index i = 0; i < d; ++i) {
    Matrix shifted = y;
    shifted.col(i).array() += epsilon;
    const Matrix col = (map(shifted) - base) / epsilon;
    for (Eigen::Index p = 0; p < m; ++p) jac[static_cast<std::size_t>(p)].col(i) = col.row(p).transpose();
  }
  return jac;
}

/// For a net the skip path contributes I exactly: J = I + FD(delta).
inline std::vector<Matrix> fd_jacobian(const ResidualNet& net, const PointSet& y, double epsilon) {
  detail::check_net_input(net, y.dim());
  auto jac = fd_jacobian([&net](const Matrix& z) { return residual_matrix(net, z); }, y.matrix(), epsilon);
  for (auto& j : jac) j.diagonal().array() += 1.0;
  return jac;
}

namespace detail {

// Blocks of a stacked evaluation: block 0 is y itself, block s >= 1 is y + dirs[s-1].
inline Matrix stack_perturbed(const Matrix& y, const std::vector<Matrix>& dirs) {
  const Eigen::Index m = y.rows();
  Matrix z(m * static_cast<Eigen::Index>(dirs.size() + 1), y.cols());
  z.topRows(m) = y;
  for (std::size_t s = 0; s < dirs.size(); ++s) z.middleRows(m * static_cast<Eigen::Index>(s + 1), m) = y + dirs[s];
  return z;
}

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace detail

/// Mean over points of the mean absolute entry of J^T J - I, with forward
/// differences of step cfg.epsilon, and its gradient in theta.
inline PenaltyValue orth_penalty_fd(const ResidualNet& net, const PointSet& y, const FdConfig& cfg) {
  detail::check_net_input(net, y.dim());
  detail::require(cfg.epsilon > 0, "orth_penalty_fd: epsilon must be positive");
  const Eigen::Index m = y.size(), d = y.dim();
  const double eps = cfg.epsilon;

  std::vector<Matrix> dirs;
  dirs.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    Matrix e = Matrix::Zero(m, d);
    e.col(i).setConstant(eps);
    dirs.push_back(std::move(e));
  }
  const Matrix z = detail::stack_perturbed(y.matrix(), dirs);
  const Matrix dlt = residual_matrix(net, z);

  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(d * d));
  Matrix cot = Matrix::Zero(z.rows(), d);
  double total = 0.0;
  Matrix jac(d, d);
  for (Eigen::Index p = 0; p < m; ++p) {
    for (Eigen::Index i = 0; i < d; ++i) jac.col(i) = ((dlt.row((i + 1) * m + p) - dlt.row(p)) / eps).transpose();
    jac.diagonal().array() += 1.0;
    Matrix dev = jac.transpose() * jac;
    dev.diagonal().array() -= 1.0;
    total += dev.cwiseAbs().sum();

    // d/dc_i sum_ab |M_ab| = sum_j (S_ij + S_ji) c_j, with S = sign(M).
    const Matrix s = dev.unaryExpr([](double v) { return detail::sign(v); });
    const Matrix g = jac * (s + s.transpose()) * scale;  // column i = dvalue/dc_i
    for (Eigen::Index i = 0; i < d; ++i) {
      cot.row((i + 1) * m + p) += g.col(i).transpose() / eps;
      cot.row(p) -= g.col(i).transpose() / eps;
    }
  }
  return {total * scale, backward(net, z, cot).params};
}

namespace detail {

// Shared kernel of the Hutchinson penalties. dirs[s] is an m x d matrix of
// scaled signs; ddof = 1 gives the unbiased sample variance.
inline PenaltyValue hutchinson_from_dirs(const ResidualNet& net, const Matrix& y, const std::vector<Matrix>& dirs,
                                         double eps, HutchinsonMode mode, int ddof) {
  const Eigen::Index m = y.rows(), d = y.cols();
  const auto k = static_cast<Eigen::Index>(dirs.size());
  const double denom = static_cast<double>(k - ddof);
  const Matrix z = stack_perturbed(y, dirs);
  const Matrix dlt = residual_matrix(net, z);
  const Matrix base = dlt.topRows(m);
  // u_s = phi(y + r_s) - phi(y)
  auto diff = [&](Eigen::Index s) -> Matrix {
    return dirs[static_cast<std::size_t>(s)] + (dlt.middleRows((s + 1) * m, m) - base);
  };
  Matrix cot = Matrix::Zero(z.rows(), d);

  if (mode == HutchinsonMode::QuadraticForm) {
    // q_s = |phi(y + r_s) - phi(y)|^2; value = mean_p Var_s(q_s) / (4 eps^4).
    Matrix q(m, k);
    for (Eigen::Index s = 0; s < k; ++s) q.col(s) = diff(s).rowwise().squaredNorm();
    const Vector qbar = q.rowwise().mean();
    const Matrix qc = q.colwise() - qbar;
    const double scale = 1.0 / (static_cast<double>(m) * 4.0 * std::pow(eps, 4));
    const double value = qc.rowwise().squaredNorm().sum() / denom * scale;
    for (Eigen::Index s = 0; s < k; ++s) {
      const Matrix u = diff(s);
      const Vector dq = qc.col(s) * (2.0 / denom * scale);
      const Matrix c = (2.0 * u).array().colwise() * dq.array();
      cot.middleRows((s + 1) * m, m) += c;
      cot.topRows(m) -= c;
    }
    return {value, backward(net, z, cot).params};
  }

  // Alg3Literal: sfd_s = (phi(y + r_s) - phi(y)) / eps, elementwise variance
  // over s, then the max over all points and coordinates.
  std::vector<Matrix> sfd(static_cast<std::size_t>(k));
  Matrix mean = Matrix::Zero(m, d);
  for (Eigen::Index s = 0; s < k; ++s) {
    sfd[static_cast<std::size_t>(s)] = diff(s) / eps;
    mean += sfd[static_cast<std::size_t>(s)];
  }
  mean /= static_cast<double>(k);
  Matrix var = Matrix::Zero(m, d);
  for (const auto& v : sfd) var += (v - mean).cwiseAbs2();
  var /= denom;

  Eigen::Index bp = 0, bc = 0;
  double best = var(0, 0);
  for (Eigen::Index p = 0; p < m; ++p)
    for (Eigen::Index c = 0; c < d; ++c)
      if (var(p, c) > best) {
        best = var(p, c);
        bp = p;
        bc = c;
      }
  for (Eigen::Index s = 0; s < k; ++s) {
    const double g = 2.0 * (sfd[static_cast<std::size_t>(s)](bp, bc) - mean(bp, bc)) / denom / eps;
    cot((s + 1) * m + bp, bc) += g;
    cot(bp, bc) -= g;
  }
  return {best, backward(net, z, cot).params};
}

// k independent m x d matrices of +-eps, drawn in (s, p, c) order.
inline std::vector<Matrix> rademacher_dirs(Eigen::Index m, Eigen::Index d, int k, double eps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Matrix> dirs;
  dirs.reserve(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) {
    Matrix r(m, d);
    std::uint64_t bits = 0;
    int left = 0;
    for (Eigen::Index p = 0; p < m; ++p)
      for (Eigen::Index c = 0; c < d; ++c) {
        if (left == 0) {
          bits = rng();
          left = 64;
        }
        r(p, c) = (bits & 1u) ? eps : -eps;
        bits >>= 1;
        --left;
      }
    dirs.push_back(std::move(r));
  }
  return dirs;
}

}  // namespace detail

/// Stochastic orthogonality penalty with k fresh Rademacher directions per
/// point (entries +-epsilon). Sample variances are unbiased (divide by k-1).
///
/// QuadraticForm estimates sum_{i<j} (J^T J)_ij^2, which vanishes for any
/// scaled-orthogonal Jacobian. Alg3Literal reproduces the max-of-coordinate-
/// variance statistic; it does not vanish on the identity (value ~1).
inline PenaltyValue orth_penalty_hutchinson(const ResidualNet& net, const PointSet& y, const HutchinsonConfig& cfg,
                                            std::uint64_t seed) {
  detail::check_net_input(net, y.dim());
  detail::require(cfg.epsilon > 0, "orth_penalty_hutchinson: epsilon must be positive");
  detail::require(cfg.k >= 2, "orth_penalty_hutchinson: k must be >= 2 for a sample variance");
  const auto dirs = detail::rademacher_dirs(y.size(), y.dim(), cfg.k, cfg.epsilon, seed);
  return detail::hutchinson_from_dirs(net, y.matrix(), dirs, cfg.epsilon, cfg.mode, 1);
}

/// The same statistics evaluated over all 2^d sign vectors (shared by every
/// point) with population variance: the exact expectation of the random
/// estimator. Limited to d <= 16.
inline PenaltyValue orth_penalty_hutchinson_exhaustive(const ResidualNet& net, const PointSet& y, double epsilon,
                                                       HutchinsonMode mode) {
  detail::check_net_input(net, y.dim());
  detail::require(epsilon > 0, "orth_penalty_hutchinson_exhaustive: epsilon must be positive");
  const Eigen::Index m = y.size(), d = y.dim();
  detail::require(d <= 16, "orth_penalty_hutchinson_exhaustive: d must be <= 16");
  std::vector<Matrix> dirs;
  const std::uint64_t count = std::uint64_t{1} << d;
  dirs.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    RowVector r(d);
    for (Eigen::Index c = 0; c < d; ++c) r(c) = (mask >> c) & 1u ? epsilon : -epsilon;
    dirs.push_back(r.replicate(m, 1));
  }
  return detail::hutchinson_from_dirs(net, y.matrix(), dirs, epsilon, mode, 0);
}

}  // namespace knnres
