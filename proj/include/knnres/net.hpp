#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"

namespace knnres {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Residual warp phi(y) = y + delta(y), where delta is an MLP with leaky
/// rectifiers between affine layers and a plain affine output layer.
struct ResidualNet {
  int dim = 0;
  std::vector<int> hidden;
  double leaky_slope = 0.01;
  std::vector<DenseLayer> layers;

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
};

/// dL/dtheta, laid out exactly like ResidualNet::layers.
struct ParamGradient {
  std::vector<DenseLayer> layers;

  static ParamGradient zeros_like(const ResidualNet& net) {
    ParamGradient g;
    g.layers.reserve(net.layers.size());
    for (const auto& l : net.layers)
      g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return g;
  }

  ParamGradient& operator+=(const ParamGradient& o) {
    detail::require(o.layers.size() == layers.size(), "ParamGradient shape mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += o.layers[i].weight;
      layers[i].bias += o.layers[i].bias;
    }
    return *this;
  }

  ParamGradient& operator*=(double s) {
    for (auto& l : layers) {
      l.weight *= s;
      l.bias *= s;
    }
    return *this;
  }
};

namespace detail {

template <typename Layers>
Vector flatten_layers(const Layers& layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Vector out(n);
  Eigen::Index off = 0;
  for (const auto& l : layers) {
    out.segment(off, l.weight.size()) = Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    off += l.weight.size();
    out.segment(off, l.bias.size()) = l.bias;
    off += l.bias.size();
  }
  return out;
}

template <typename Layers>
void unflatten_layers(Layers& layers, const Vector& flat) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  require(flat.size() == n, "flat parameter vector has the wrong length");
  Eigen::Index off = 0;
  for (auto& l : layers) {
    Eigen::Map<Vector>(l.weight.data(), l.weight.size()) = flat.segment(off, l.weight.size());
    off += l.weight.size();
    l.bias = flat.segment(off, l.bias.size());
    off += l.bias.size();
  }
}

inline void check_net_input(const ResidualNet& net, Eigen::Index cols) {
  require(cols == net.dim, "input has " + std::to_string(cols) + " columns, net expects " + std::to_string(net.dim));
}

}  // namespace detail

inline Vector flatten(const ResidualNet& net) { return detail::flatten_layers(net.layers); }
inline Vector flatten(const ParamGradient& g) { return detail::flatten_layers(g.layers); }
inline void unflatten(ResidualNet& net, const Vector& flat) { detail::unflatten_layers(net.layers, flat); }
inline void unflatten(ParamGradient& g, const Vector& flat) { detail::unflatten_layers(g.layers, flat); }

/// An empty width list gives a single affine layer.
/// Hidden layers get U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases;
/// the output layer is all zeros so the fresh warp is the identity.
inline ResidualNet init_net(int d, const std::vector<int>& hidden_widths, double leaky_slope, std::uint64_t seed) {
  detail::require(d >= 1, "init_net: d must be >= 1");
  for (int w : hidden_widths) detail::require(w >= 1, "init_net: hidden widths must be >= 1");
  detail::require(std::isfinite(leaky_slope), "init_net: leaky_slope must be finite");

  ResidualNet net;
  net.dim = d;
  net.hidden = hidden_widths;
  net.leaky_slope = leaky_slope;

  std::mt19937_64 rng(seed);
  int fan_in = d;
  for (int width : hidden_widths) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l{Matrix(width, fan_in), Vector(width)};
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);
    net.layers.push_back(std::move(l));
    fan_in = width;
  }
  net.layers.push_back({Matrix::Zero(d, fan_in), Vector::Zero(d)});
  return net;
}

/// Net whose residual is exactly delta(y) = A y + b (no hidden layers).
inline ResidualNet make_affine_net(const Matrix& a, const Vector& b, double leaky_slope = 0.01) {
  detail::require(a.rows() == a.cols() && a.rows() == b.size(), "make_affine_net: A must be d x d and b length d");
  ResidualNet net;
  net.dim = static_cast<int>(a.rows());
  net.leaky_slope = leaky_slope;
  net.layers.push_back({a, b});
  return net;
}

namespace detail {

// Column-per-point activations of every layer; acts[0] is the input.
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> acts;
};

inline ForwardTrace trace_forward(const ResidualNet& net, const Matrix& y) {
  ForwardTrace t;
  t.acts.reserve(net.layers.size() + 1);
  t.pre.reserve(net.layers.size());
  t.acts.push_back(y.transpose());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Matrix z = layer.weight * t.acts.back();
    z.colwise() += layer.bias;
    if (l + 1 < net.layers.size()) {
      const double a = net.leaky_slope;
      t.acts.push_back(z.unaryExpr([a](double v) { return v >= 0.0 ? v : a * v; }));
    } else {
      t.acts.push_back(z);
    }
    t.pre.push_back(std::move(z));
  }
  return t;
}

}  // namespace detail

/// The residual delta applied row-wise to a raw matrix (m x d).
inline Matrix residual_matrix(const ResidualNet& net, const Matrix& y) {
  detail::check_net_input(net, y.cols());
  Matrix h = y.transpose();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Matrix z = layer.weight * h;
    z.colwise() += layer.bias;
    if (l + 1 < net.layers.size()) {
      const double a = net.leaky_slope;
      z = z.unaryExpr([a](double v) { return v >= 0.0 ? v : a * v; });
    }
    h = std::move(z);
  }
  return h.transpose();
}

/// phi applied row-wise to a raw matrix; no finiteness check.
inline Matrix forward_matrix(const ResidualNet& net, const Matrix& y) { return y + residual_matrix(net, y); }

inline PointSet forward(const ResidualNet& net, const PointSet& y) {
  return PointSet(forward_matrix(net, y.matrix()));
}

struct BackwardResult {
  ParamGradient params;
  Matrix input_grad;  // m x d, includes the skip path
};

/// Reverse-mode pass for a downstream cotangent dL/dphi(Y). Leaky-rectifier
/// derivative is 1 for pre-activation >= 0 and leaky_slope below.
inline BackwardResult backward(const ResidualNet& net, const Matrix& y, const Matrix& cotangent) {
  detail::check_net_input(net, y.cols());
  detail::require(cotangent.rows() == y.rows() && cotangent.cols() == y.cols(), "backward: cotangent shape mismatch");

  const auto t = detail::trace_forward(net, y);
  BackwardResult out{ParamGradient::zeros_like(net), Matrix()};

  Matrix delta = cotangent.transpose();  // dL/d(pre-activation), out x m
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    auto& g = out.params.layers[li];
    g.weight.noalias() = delta * t.acts[li].transpose();
    g.bias = delta.rowwise().sum();
    Matrix up = net.layers[li].weight.transpose() * delta;
    if (li > 0) {
      const Matrix& z = t.pre[li - 1];
      const double a = net.leaky_slope;
      up = up.cwiseProduct(z.unaryExpr([a](double v) { return v >= 0.0 ? 1.0 : a; }));
    }
    delta = std::move(up);
  }
  out.input_grad = cotangent + delta.transpose();
  return out;
}

inline BackwardResult backward(const ResidualNet& net, const PointSet& y, const Matrix& cotangent) {
  return backward(net, y.matrix(), cotangent);
}

// Text format, one record per line:
//   knnres-net 1
//   dim <d>
//   hidden <n> <w1> ... <wn>
//   leaky_slope <hexfloat>
//   layer <rows> <cols>
//   <rows*cols weights, row-major, hexfloat>
//   <rows biases, hexfloat>
// Hexfloat makes the round trip bit-exact.
inline void save_net(const ResidualNet& net, std::ostream& os) {
  auto hex = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return std::string(buf);
  };
  os << "knnres-net 1\n";
  os << "dim " << net.dim << "\n";
  os << "hidden " << net.hidden.size();
  for (int w : net.hidden) os << ' ' << w;
  os << "\nleaky_slope " << hex(net.leaky_slope) << "\n";
  for (const auto& l : net.layers) {
    os << "layer " << l.weight.rows() << ' ' << l.weight.cols() << "\n";
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) os << (c ? " " : "") << hex(l.weight(r, c));
      os << "\n";
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) os << (r ? " " : "") << hex(l.bias(r));
    os << "\n";
  }
}

inline ResidualNet load_net(std::istream& is) {
  auto fail = [](const std::string& why) -> void { throw InvalidData("load_net: " + why); };
  auto number = [&](std::istream& in) {
    std::string tok;
    if (!(in >> tok)) fail("truncated stream");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') fail("bad number '" + tok + "'");
    return v;
  };
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "knnres-net") fail("missing header");
  if (version != 1) fail("unsupported version " + std::to_string(version));

  ResidualNet net;
  std::size_t nh = 0;
  if (!(is >> tag >> net.dim) || tag != "dim") fail("expected dim");
  if (!(is >> tag >> nh) || tag != "hidden") fail("expected hidden");
  net.hidden.resize(nh);
  for (auto& w : net.hidden)
    if (!(is >> w)) fail("bad hidden width");
  if (!(is >> tag) || tag != "leaky_slope") fail("expected leaky_slope");
  net.leaky_slope = number(is);

  for (std::size_t l = 0; l <= nh; ++l) {
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> tag >> rows >> cols) || tag != "layer") fail("expected layer " + std::to_string(l));
    const Eigen::Index want_rows = l < nh ? net.hidden[l] : net.dim;
    const Eigen::Index want_cols = l == 0 ? net.dim : net.hidden[l - 1];
    if (rows != want_rows || cols != want_cols) fail("layer " + std::to_string(l) + " has inconsistent shape");
    DenseLayer layer{Matrix(rows, cols), Vector(rows)};
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = number(is);
    for (Eigen::Index r = 0; r < rows; ++r) layer.bias(r) = number(is);
    net.layers.push_back(std::move(layer));
  }
  for (const auto& l : net.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) fail("non-finite parameter");
  return net;
}

}  // namespace knnres
