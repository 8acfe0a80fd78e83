#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "knnres/core.hpp"
#include "test_support.hpp"

using namespace knnres;
using knnres::testing::brute_knn;
using knnres::testing::random_points;

namespace {

PointSet from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) x(r, c++) = v;
    ++r;
  }
  return PointSet(x);
}

}  // namespace

TEST(PointSet, RejectsNonFinite) {
  Matrix x(2, 2);
  x << 0, 1, std::numeric_limits<double>::quiet_NaN(), 2;
  EXPECT_THROW(PointSet{x}, InvalidData);
  EXPECT_THROW(PointSet{Matrix(0, 2)}, InvalidArgument);
}

TEST(Knn, OneDimensionalExample) {
  const auto g = build_knn_graph(from_rows({{0}, {1}, {10}}), 1);
  EXPECT_EQ(g.neighbors(0), std::vector<int>{1});
  EXPECT_EQ(g.neighbors(1), std::vector<int>{0});
  EXPECT_EQ(g.neighbors(2), std::vector<int>{1});
}

TEST(Knn, DuplicatePointsBreakTiesByIndex) {
  const auto g = build_knn_graph(from_rows({{0, 0}, {0, 0}, {5, 5}}), 1);
  EXPECT_EQ(g.neighbors(0), std::vector<int>{1});
  EXPECT_EQ(g.neighbors(1), std::vector<int>{0});
}

TEST(Knn, FullNeighbourhoodIsCompleteGraph) {
  const auto ps = random_points(7, 3, 1);
  const auto a = build_knn_graph(ps, 6).adjacency();
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_EQ(a(i, j), i != j);
}

TEST(Knn, RejectsBadK) {
  const auto ps = random_points(5, 2, 2);
  EXPECT_THROW(build_knn_graph(ps, 5), InvalidArgument);
  EXPECT_THROW(build_knn_graph(ps, 0), InvalidArgument);
}

TEST(Knn, MatchesBruteForceOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = 2 + static_cast<int>(rng() % 49);
    const int d = 1 + static_cast<int>(rng() % 10);
    const int k = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(m - 1));
    const auto ps = random_points(m, d, rng());
    const auto g = build_knn_graph(ps, k);
    const auto want = brute_knn(ps.matrix(), k);
    for (int i = 0; i < m; ++i) ASSERT_EQ(g.neighbors(i), want[static_cast<std::size_t>(i)]) << "trial " << trial;
  }
}

TEST(Knn, InvariantUnderIsometry) {
  const auto ps = random_points(40, 2, 11);
  const double t = 0.7;
  Eigen::Matrix2d r;
  r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  Matrix moved = ps.matrix() * r.transpose();
  moved.rowwise() += RowVector::Constant(2, 3.5);
  const auto a = build_knn_graph(ps, 5);
  const auto b = build_knn_graph(PointSet(moved), 5);
  EXPECT_EQ(hamming_loss(a, b), 0);
}

TEST(Hamming, HandCountedExample) {
  KnnGraph g1(1, {{1}, {0}, {1}});
  KnnGraph g2(1, {{2}, {0}, {1}});
  EXPECT_EQ(hamming_loss(g1, g1), 0);
  EXPECT_EQ(hamming_loss(g1, g2), 2);
  EXPECT_DOUBLE_EQ(hamming_loss_normalized(g1, g2), 2.0 / 6.0);
}

TEST(Hamming, DisjointGraphsDifferInTwoMCells) {
  // i -> i+1 versus i -> i+2 (mod m)
  const int m = 6;
  std::vector<std::vector<int>> a, b;
  for (int i = 0; i < m; ++i) {
    a.push_back({(i + 1) % m});
    b.push_back({(i + 2) % m});
  }
  EXPECT_EQ(hamming_loss(KnnGraph(1, a), KnnGraph(1, b)), 2 * m);
}

TEST(Hamming, SymmetricAndTriangle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g1 = build_knn_graph(random_points(20, 2, rng()), 3);
    const auto g2 = build_knn_graph(random_points(20, 2, rng()), 3);
    const auto g3 = build_knn_graph(random_points(20, 2, rng()), 3);
    EXPECT_EQ(hamming_loss(g1, g2), hamming_loss(g2, g1));
    EXPECT_LE(hamming_loss(g1, g3), hamming_loss(g1, g2) + hamming_loss(g2, g3));
  }
}

TEST(Hamming, ShapeMismatch) {
  KnnGraph g1(1, {{1}, {0}, {1}});
  KnnGraph g2(1, {{1}, {0}});
  EXPECT_THROW(hamming_loss(g1, g2), InvalidArgument);
}

TEST(KnnGraph, ValidatesRows) {
  EXPECT_THROW(KnnGraph(1, {{0}, {0}}), InvalidArgument);      // self edge
  EXPECT_THROW(KnnGraph(2, {{1, 1}, {0, 2}, {0, 1}}), InvalidArgument);
}

TEST(Rmse, Examples) {
  const auto a = from_rows({{0}, {0}});
  const auto b = from_rows({{1}, {3}});
  EXPECT_DOUBLE_EQ(rmse(a, a), 0.0);
  EXPECT_DOUBLE_EQ(rmse(a, b), std::sqrt(5.0));
  const auto p = random_points(10, 2, 5);
  Matrix shifted = p.matrix();
  shifted.col(0).array() += 1.0;
  EXPECT_NEAR(rmse(PointSet(shifted), p), 1.0, 1e-12);
  EXPECT_THROW(rmse(a, p), InvalidArgument);
}

TEST(Rmse, SymmetricAndPermutationInvariant) {
  const auto a = random_points(15, 3, 8), b = random_points(15, 3, 9);
  EXPECT_DOUBLE_EQ(rmse(a, b), rmse(b, a));
  std::vector<Eigen::Index> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  EXPECT_NEAR(rmse(a.rows(perm), b.rows(perm)), rmse(a, b), 1e-14);
}

TEST(Pca, RecoversAxisAlignedLine) {
  Matrix x = Matrix::Zero(5, 2);
  x.col(0) << -2, -1, 0, 1, 2;
  const auto r = pca_project(PointSet(x), 1);
  EXPECT_NEAR(std::abs(r.basis(0, 0)), 1.0, 1e-12);
  EXPECT_GT(r.basis(0, 0), 0.0);  // sign convention
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(r.projected(i, 0), x(i, 0), 1e-12);
}

TEST(Pca, IsotropicGaussianHasEqualVariances) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  Matrix x(10000, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const auto r = pca_project(PointSet(x), 3);
  EXPECT_LE(r.explained_variance(0) / r.explained_variance(2), 1.1);
  EXPECT_GE(r.explained_variance(0), r.explained_variance(1));
  EXPECT_GE(r.explained_variance(1), r.explained_variance(2));
}

TEST(Pca, FullBasisReconstructs) {
  const auto ps = random_points(30, 4, 12);
  const auto r = pca_project(ps, 4);
  const Matrix centred = ps.matrix().rowwise() - r.mean;
  EXPECT_LT((centred * r.basis * r.basis.transpose() - centred).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(pca_project(ps, 5), InvalidArgument);
}

TEST(Pca, DegenerateCovarianceStillOrthonormal) {
  Matrix x = Matrix::Constant(6, 3, 1.0);
  const auto r = pca_project(PointSet(x), 3);
  EXPECT_LT((r.basis.transpose() * r.basis - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}
