#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "knnres/errors.hpp"
#include "knnres/parallel.hpp"

namespace knnres {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// An m x d table of finite coordinates, one point per row. Shape is fixed
/// at construction.
class PointSet {
 public:
  PointSet() = default;

  explicit PointSet(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw InvalidArgument("PointSet needs at least one row and one column");
    if (!data_.allFinite()) throw InvalidData("PointSet contains non-finite entries");
  }

  Eigen::Index size() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  bool empty() const { return data_.size() == 0; }

  const Matrix& matrix() const { return data_; }
  auto point(Eigen::Index i) const { return data_.row(i); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return data_(i, j); }

  /// Rows selected by index, in the given order.
  PointSet rows(const std::vector<Eigen::Index>& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), dim());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = data_.row(idx[r]);
    return PointSet(std::move(out));
  }

 private:
  Matrix data_;
};

/// Directed k-regular neighbourhood graph. neighbors(i) holds the k nearest
/// indices of point i, nearest first.
class KnnGraph {
 public:
  KnnGraph() = default;

  KnnGraph(int k, std::vector<std::vector<int>> neighbors) : k_(k), nbrs_(std::move(neighbors)) {
    const auto m = static_cast<int>(nbrs_.size());
    detail::require(k_ >= 1 && k_ < m, "KnnGraph requires 1 <= k < m");
    for (int i = 0; i < m; ++i) {
      const auto& row = nbrs_[static_cast<std::size_t>(i)];
      detail::require(static_cast<int>(row.size()) == k_, "KnnGraph row " + std::to_string(i) + " does not have k entries");
      std::vector<int> sorted = row;
      std::sort(sorted.begin(), sorted.end());
      detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "KnnGraph row has duplicate edges");
      for (int j : sorted) {
        detail::require(j >= 0 && j < m, "KnnGraph edge index out of range");
        detail::require(j != i, "KnnGraph has a self-edge");
      }
    }
  }

  int k() const { return k_; }
  int size() const { return static_cast<int>(nbrs_.size()); }
  const std::vector<int>& neighbors(int i) const { return nbrs_[static_cast<std::size_t>(i)]; }

  bool has_edge(int i, int j) const {
    const auto& row = neighbors(i);
    return std::find(row.begin(), row.end(), j) != row.end();
  }

  /// Dense m x m adjacency; only sensible for small m.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> adjacency() const {
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> a =
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(size(), size(), false);
    for (int i = 0; i < size(); ++i)
      for (int j : neighbors(i)) a(i, j) = true;
    return a;
  }

 private:
  int k_ = 0;
  std::vector<std::vector<int>> nbrs_;
};

/// Exact brute-force kNN graph under Euclidean distance. Ties go to the
/// smaller index.
inline KnnGraph build_knn_graph(const PointSet& ps, int k) {
  const auto m = static_cast<int>(ps.size());
  if (k < 1 || k >= m) throw InvalidArgument("build_knn_graph: need 1 <= k < m (k=" + std::to_string(k) + ", m=" + std::to_string(m) + ")");
  if (!ps.matrix().allFinite()) throw InvalidData("build_knn_graph: non-finite input");

  const Matrix& x = ps.matrix();
  std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t ui) {
    const auto i = static_cast<int>(ui);
    std::vector<std::pair<double, int>> cand;
    cand.reserve(static_cast<std::size_t>(m - 1));
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      cand.emplace_back((x.row(i) - x.row(j)).squaredNorm(), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    auto& row = nbrs[ui];
    row.reserve(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) row.push_back(cand[static_cast<std::size_t>(r)].second);
  }, 16);
  return KnnGraph(k, std::move(nbrs));
}

/// Number of adjacency cells (i, j) that differ between two graphs.
inline long hamming_loss(const KnnGraph& a, const KnnGraph& b) {
  if (a.size() != b.size() || a.k() != b.k())
    throw InvalidArgument("hamming_loss: graphs differ in size or k");
  long diff = 0;
  for (int i = 0; i < a.size(); ++i) {
    std::vector<int> ra = a.neighbors(i), rb = b.neighbors(i);
    std::sort(ra.begin(), ra.end());
    std::sort(rb.begin(), rb.end());
    std::vector<int> common;
    std::set_intersection(ra.begin(), ra.end(), rb.begin(), rb.end(), std::back_inserter(common));
    diff += static_cast<long>(ra.size() + rb.size() - 2 * common.size());
  }
  return diff;
}

/// Hamming loss divided by 2*m*k, the largest possible count.
inline double hamming_loss_normalized(const KnnGraph& a, const KnnGraph& b) {
  return static_cast<double>(hamming_loss(a, b)) / (2.0 * a.size() * a.k());
}

/// Row-wise root-mean-squared Euclidean error.
inline double rmse(const PointSet& y_hat, const PointSet& y_true) {
  if (y_hat.size() != y_true.size() || y_hat.dim() != y_true.dim())
    throw InvalidArgument("rmse: shape mismatch");
  return std::sqrt((y_hat.matrix() - y_true.matrix()).rowwise().squaredNorm().mean());
}

struct PcaResult {
  PointSet projected;
  Matrix basis;                 // d x n_components, orthonormal columns
  Vector explained_variance;    // descending
  RowVector mean;
};

/// Projects centred data onto the leading eigenvectors of the covariance.
/// Each basis vector is signed so its largest-magnitude entry is positive.
/// A rank-deficient covariance still yields an orthonormal basis (the
/// eigensolver completes it).
inline PcaResult pca_project(const PointSet& ps, int n_components) {
  const auto d = static_cast<int>(ps.dim());
  if (n_components < 1 || n_components > d) throw InvalidArgument("pca_project: need 1 <= n_components <= d");

  RowVector mean = ps.matrix().colwise().mean();
  Matrix centred = ps.matrix().rowwise() - mean;
  const double denom = ps.size() > 1 ? static_cast<double>(ps.size() - 1) : 1.0;
  Matrix cov = (centred.transpose() * centred) / denom;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector& evals = eig.eigenvalues();   // ascending
  const Matrix& evecs = eig.eigenvectors();

  Matrix basis(d, n_components);
  Vector var(n_components);
  for (int c = 0; c < n_components; ++c) {
    const int src = d - 1 - c;
    Vector v = evecs.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
    var(c) = std::max(0.0, evals(src));
  }
  return {PointSet(centred * basis), std::move(basis), std::move(var), std::move(mean)};
}

}  // namespace knnres
