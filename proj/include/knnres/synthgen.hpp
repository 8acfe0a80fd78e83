#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"

namespace knnres {

enum class DeformKind { Rbf, Scale, Rotate, Translate };

struct RbfParams {
  int n_centers = 25;
  double kernel_width = 0.3;
  double coeff_std = 0.04;
};

/// A seeded synthetic deformation. Only the block matching `kind` is used.
struct DeformSpec {
  DeformKind kind = DeformKind::Rbf;
  RbfParams rbf;
  double scale = 1.0;
  double angle = 0.0;  // radians, in the plane of the first two coordinates
  std::optional<RowVector> center;  // scale/rotate pivot; centroid when unset
  RowVector translation;
  std::uint64_t seed = 0;
};

/// Coefficient std for deformation levels 0..5 on unit-box shapes.
inline double level_coeff_std(int level) {
  static constexpr std::array<double, 6> table{0.0, 0.02, 0.04, 0.06, 0.08, 0.10};
  detail::require(level >= 0 && level <= 5, "deformation level must be in 0..5");
  return table[static_cast<std::size_t>(level)];
}

inline DeformSpec level_spec(int level, std::uint64_t seed) {
  DeformSpec s;
  s.kind = DeformKind::Rbf;
  s.rbf.coeff_std = level_coeff_std(level);
  s.seed = seed;
  return s;
}

/// y' = y + sum_k c_k exp(-|y - mu_k|^2 / (2 w^2)). Centres are uniform over
/// the bounding box, coefficients N(0, coeff_std^2) per output coordinate.
/// Row i of the output corresponds to row i of the input.
inline PointSet rbf_deform(const PointSet& ps, const DeformSpec& spec) {
  detail::require(spec.kind == DeformKind::Rbf, "rbf_deform: spec is not an RBF deformation");
  detail::require(spec.rbf.n_centers >= 1, "rbf_deform: n_centers must be >= 1");
  detail::require(spec.rbf.kernel_width > 0, "rbf_deform: kernel_width must be positive");
  detail::require(spec.rbf.coeff_std >= 0, "rbf_deform: coeff_std must be >= 0");
  const Eigen::Index d = ps.dim();
  const RowVector lo = ps.matrix().colwise().minCoeff();
  const RowVector hi = ps.matrix().colwise().maxCoeff();

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix centers(spec.rbf.n_centers, d), coeffs(spec.rbf.n_centers, d);
  for (int k = 0; k < spec.rbf.n_centers; ++k)
    for (Eigen::Index c = 0; c < d; ++c) centers(k, c) = lo(c) + unit(rng) * (hi(c) - lo(c));
  for (int k = 0; k < spec.rbf.n_centers; ++k)
    for (Eigen::Index c = 0; c < d; ++c) coeffs(k, c) = spec.rbf.coeff_std * gauss(rng);

  const double inv = 1.0 / (2.0 * spec.rbf.kernel_width * spec.rbf.kernel_width);
  Matrix out = ps.matrix();
  for (Eigen::Index p = 0; p < out.rows(); ++p)
    for (int k = 0; k < spec.rbf.n_centers; ++k)
      out.row(p) += coeffs.row(k) * std::exp(-(ps.point(p) - centers.row(k)).squaredNorm() * inv);
  return PointSet(std::move(out));
}

inline RowVector centroid(const PointSet& ps) { return ps.matrix().colwise().mean(); }

/// y' = c + s (y - c), c the spec centre or the centroid.
inline PointSet scale_deform(const PointSet& ps, const DeformSpec& spec) {
  detail::require(spec.kind == DeformKind::Scale, "scale_deform: spec is not a scaling");
  const RowVector c = spec.center ? *spec.center : centroid(ps);
  detail::require(c.size() == ps.dim(), "scale_deform: centre dimension mismatch");
  return PointSet((spec.scale * (ps.matrix().rowwise() - c)).rowwise() + c);
}

/// Rotation by spec.angle in the (x0, x1) plane about the centre.
inline PointSet rotate_deform(const PointSet& ps, const DeformSpec& spec) {
  detail::require(spec.kind == DeformKind::Rotate, "rotate_deform: spec is not a rotation");
  detail::require(ps.dim() >= 2, "rotate_deform: needs d >= 2");
  const RowVector c = spec.center ? *spec.center : centroid(ps);
  detail::require(c.size() == ps.dim(), "rotate_deform: centre dimension mismatch");
  Matrix out = ps.matrix().rowwise() - c;
  const double cs = std::cos(spec.angle), sn = std::sin(spec.angle);
  for (Eigen::Index p = 0; p < out.rows(); ++p) {
    const double x = out(p, 0), y = out(p, 1);
    out(p, 0) = cs * x - sn * y;
    out(p, 1) = sn * x + cs * y;
  }
  return PointSet(out.rowwise() + c);
}

inline PointSet translate_deform(const PointSet& ps, const DeformSpec& spec) {
  detail::require(spec.kind == DeformKind::Translate, "translate_deform: spec is not a translation");
  detail::require(spec.translation.size() == ps.dim(), "translate_deform: vector dimension mismatch");
  return PointSet(ps.matrix().rowwise() + spec.translation);
}

inline PointSet deform(const PointSet& ps, const DeformSpec& spec) {
  switch (spec.kind) {
    case DeformKind::Rbf: return rbf_deform(ps, spec);
    case DeformKind::Scale: return scale_deform(ps, spec);
    case DeformKind::Rotate: return rotate_deform(ps, spec);
    case DeformKind::Translate: return translate_deform(ps, spec);
  }
  throw InvalidArgument("deform: unknown kind");
}

enum class ShapeKind { Ring, Grid, TwoMoons, GaussianMixture };

struct ShapeOptions {
  double noise = 0.0;        // isotropic Gaussian jitter before normalisation
  int mixture_components = 3;
  double mixture_spread = 0.05;  // per-coordinate component std; means are uniform in [0, 1]^d
};

/// Per-column min-max scaling to [0, 1]; constant columns map to 0.5.
inline PointSet minmax_normalize(const PointSet& ps) {
  Matrix out = ps.matrix();
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double lo = out.col(c).minCoeff(), hi = out.col(c).maxCoeff();
    if (hi > lo)
      out.col(c) = (out.col(c).array() - lo) / (hi - lo);
    else
      out.col(c).setConstant(0.5);
  }
  return PointSet(std::move(out));
}

namespace detail {

// The unnormalised constructions; ring points sit at radius 0.5 about (0.5, 0.5).
inline Matrix raw_shape(ShapeKind kind, int m, int d, std::uint64_t seed, const ShapeOptions& opt,
                        std::vector<int>* labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix x = Matrix::Zero(m, d);
  switch (kind) {
    case ShapeKind::Ring: {
      require(d >= 2, "ring needs d >= 2");
      for (int p = 0; p < m; ++p) {
        const double t = 2.0 * std::numbers::pi * p / m;
        x(p, 0) = 0.5 + 0.5 * std::cos(t);
        x(p, 1) = 0.5 + 0.5 * std::sin(t);
      }
      break;
    }
    case ShapeKind::Grid: {
      require(d == 2, "grid needs d == 2");
      const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
      require(side * side == m, "grid needs a square point count");
      for (int p = 0; p < m; ++p) {
        x(p, 0) = side > 1 ? static_cast<double>(p % side) / (side - 1) : 0.5;
        x(p, 1) = side > 1 ? static_cast<double>(p / side) / (side - 1) : 0.5;
      }
      break;
    }
    case ShapeKind::TwoMoons: {
      require(d >= 2, "two-moons needs d >= 2");
      for (int p = 0; p < m; ++p) {
        const bool upper = p < (m + 1) / 2;
        const int idx = upper ? p : p - (m + 1) / 2;
        const int cnt = upper ? (m + 1) / 2 : m / 2;
        const double t = std::numbers::pi * (cnt > 1 ? static_cast<double>(idx) / (cnt - 1) : 0.5);
        x(p, 0) = upper ? std::cos(t) : 1.0 - std::cos(t);
        x(p, 1) = upper ? std::sin(t) : 0.5 - std::sin(t);
      }
      break;
    }
    case ShapeKind::GaussianMixture: {
      require(opt.mixture_components >= 1, "mixture needs >= 1 component");
      Matrix means(opt.mixture_components, d);
      for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = unit(rng);
      for (int p = 0; p < m; ++p) {
        const int comp = p % opt.mixture_components;
        if (labels) labels->push_back(comp);
        for (int c = 0; c < d; ++c) x(p, c) = means(comp, c) + opt.mixture_spread * gauss(rng);
      }
      break;
    }
  }
  if (opt.noise > 0)
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += opt.noise * gauss(rng);
  return x;
}

}  // namespace detail

/// Seeded synthetic shape, min-max normalised to the unit box. Mixture
/// points cycle through the components in row order.
inline PointSet make_shape(ShapeKind kind, int m, int d, std::uint64_t seed, const ShapeOptions& opt = {}) {
  detail::require(m >= 1 && d >= 1, "make_shape: m and d must be >= 1");
  return minmax_normalize(PointSet(detail::raw_shape(kind, m, d, seed, opt, nullptr)));
}

/// Like make_shape for a Gaussian mixture, also returning component labels.
inline std::pair<PointSet, std::vector<int>> make_mixture(int m, int d, std::uint64_t seed, const ShapeOptions& opt = {}) {
  detail::require(m >= 1 && d >= 1, "make_mixture: m and d must be >= 1");
  std::vector<int> labels;
  auto x = detail::raw_shape(ShapeKind::GaussianMixture, m, d, seed, opt, &labels);
  return {minmax_normalize(PointSet(std::move(x))), std::move(labels)};
}

/// Unnormalised ring of radius 0.5 (construction check).
inline PointSet raw_ring(int m) { return PointSet(detail::raw_shape(ShapeKind::Ring, m, 2, 0, {}, nullptr)); }

}  // namespace knnres
