#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ong/matrix.hpp"
#include "test_util.hpp"

using namespace ong;
using ong::testing::matmul_oracle;
using ong::testing::max_abs_diff;
using ong::testing::random_matrix;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix a = random_matrix(3, 3, 1);
  EXPECT_EQ(matmul(Matrix::identity(3), a), a);
}

TEST(Matmul, HandComputed) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0}, {1}};
  EXPECT_EQ(matmul(a, b), (Matrix{{2}, {4}}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  const Matrix a = random_matrix(5, 4, 2);
  const Matrix b = random_matrix(4, 3, 3);
  const Matrix c = matmul(a, b);
  ASSERT_EQ(c.rows(), 5u);
  ASSERT_EQ(c.cols(), 3u);
  EXPECT_LE(max_abs_diff(c, matmul_oracle(a, b)), 1e-12);
}

TEST(Matmul, RandomShapesMatchOracle) {
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    const Matrix a = random_matrix(m, k, 100 + trial);
    const Matrix b = random_matrix(k, n, 200 + trial);
    EXPECT_LE(max_abs_diff(matmul(a, b), matmul_oracle(a, b)), 1e-12);
    EXPECT_LE(max_abs_diff(matmul_nt(a, transpose(b)), matmul_oracle(a, b)), 1e-12);
    EXPECT_LE(max_abs_diff(matmul_tn(transpose(a), b), matmul_oracle(a, b)), 1e-12);
  }
}

TEST(Matmul, DimensionMismatchIsRejected) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Elementwise, Identities) {
  const Matrix a = random_matrix(4, 3, 5);
  EXPECT_EQ(elementwise(a, Matrix(4, 3, 1.0), ElementwiseOp::mul), a);
  EXPECT_EQ(elementwise(a, a, ElementwiseOp::sub), Matrix(4, 3));
  EXPECT_EQ(elementwise(a, Matrix(4, 3), ElementwiseOp::add), a);
}

TEST(Elementwise, HandComputedMul) {
  EXPECT_EQ(elementwise(Matrix{{2, 0}, {0, 3}}, Matrix{{1, 1}, {1, 1}}, ElementwiseOp::mul),
            (Matrix{{2, 0}, {0, 3}}));
}

TEST(Elementwise, ShapeMismatchIsRejected) {
  EXPECT_THROW(elementwise(Matrix(2, 2), Matrix(2, 3), ElementwiseOp::add), ShapeError);
  Matrix a(2, 2);
  EXPECT_THROW(hadamard_inplace(a, Matrix(3, 2)), ShapeError);
}

TEST(AbsMap, StripsSigns) {
  EXPECT_EQ(abs_map(Matrix{{-1, 2}, {0, -3}}), (Matrix{{1, 2}, {0, 3}}));
  const Matrix nonneg{{0, 1}, {2, 3}};
  EXPECT_EQ(abs_map(nonneg), nonneg);
}

TEST(AbsMap, IdempotentAndNonNegative) {
  const Matrix a = random_matrix(6, 7, 8);
  const Matrix once = abs_map(a);
  EXPECT_EQ(abs_map(once), once);
  for (double v : once.data()) EXPECT_GE(v, 0.0);
}

TEST(Stats, ConstantInput) {
  const auto s = stats(Matrix{{1, 1}, {1, 1}});
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_EQ(s.median, 1.0);
  EXPECT_EQ(s.mad, 0.0);
}

TEST(Stats, OddLengthHandComputed) {
  const auto s = stats(Matrix{{1, 2, 3, 4, 5}});
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(2.0));
  EXPECT_EQ(s.median, 3.0);
  EXPECT_EQ(s.mad, 1.0);
}

TEST(Stats, EvenLengthUsesLowerMedian) {
  const auto s = stats(Matrix{{4, 1, 3, 2}});
  EXPECT_EQ(s.median, 2.0);
  // |x - 2| = {2, 1, 1, 0} -> lower median 1
  EXPECT_EQ(s.mad, 1.0);
}

TEST(Stats, MatchesSortAndScanOracle) {
  const Matrix a = random_matrix(5, 10, 11, -3.0, 7.0);
  std::vector<double> v(a.data().begin(), a.data().end());
  std::sort(v.begin(), v.end());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double median = v[(v.size() - 1) / 2];
  std::vector<double> dev;
  for (double x : v) dev.push_back(std::fabs(x - median));
  std::sort(dev.begin(), dev.end());

  const auto s = stats(a);
  EXPECT_NEAR(s.mean, mean, 1e-12);
  EXPECT_NEAR(s.std, std::sqrt(var / static_cast<double>(v.size())), 1e-12);
  EXPECT_NEAR(s.median, median, 1e-12);
  EXPECT_NEAR(s.mad, dev[(dev.size() - 1) / 2], 1e-12);
}

TEST(Stats, EmptyIsRejected) { EXPECT_THROW(stats(Matrix()), ValueError); }

TEST(FrobeniusSq, Examples) {
  EXPECT_EQ(frobenius_sq(Matrix(3, 4)), 0.0);
  EXPECT_EQ(frobenius_sq(Matrix{{3, 4}}), 25.0);
  const Matrix a = random_matrix(7, 3, 12);
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  EXPECT_NEAR(frobenius_sq(a), s, 1e-12);
}

TEST(MatrixType, RejectsBadConstruction) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Matrix(1, 2, std::vector<double>{1, NAN}), NumericalError);
  EXPECT_THROW((Matrix{{1, 2}, {3}}), ShapeError);
}

TEST(MatrixType, OperationsStayFinite) {
  const Matrix a = random_matrix(8, 8, 13, -1e3, 1e3);
  EXPECT_TRUE(all_finite(matmul(a, a)));
  EXPECT_TRUE(all_finite(abs_map(a)));
  EXPECT_TRUE(all_finite(elementwise(a, a, ElementwiseOp::mul)));
  const auto s = stats(a);
  EXPECT_TRUE(std::isfinite(s.mean) && std::isfinite(s.std) && std::isfinite(s.median) && std::isfinite(s.mad));
}
