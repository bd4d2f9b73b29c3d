#include <gtest/gtest.h>

#include "ong/nmf.hpp"
#include "test_util.hpp"

using namespace ong;
using ong::testing::random_matrix;

namespace {

// u v^T with strictly positive factors.
Matrix rank_one(std::size_t m, std::size_t p, std::uint64_t seed) {
  const Matrix u = random_matrix(m, 1, seed, 0.1, 1.0);
  const Matrix v = random_matrix(1, p, seed + 1, 0.1, 1.0);
  return matmul(u, v);
}

NmfConfig config(std::size_t k, std::uint64_t seed = 7) {
  NmfConfig c;
  c.components = k;
  c.iterations = 200;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Factorize, RankOneInputIsRecovered) {
  const Matrix w = rank_one(12, 9, 3);
  const NmfResult r = factorize(w, config(1));
  ASSERT_EQ(r.objective_trace.size(), 201u);
  EXPECT_LE(r.objective_trace.back(), 1e-6 * frobenius_sq(w));
}

TEST(Factorize, ZeroMatrix) {
  const NmfResult r = factorize(Matrix(4, 5), config(2));
  for (double o : r.objective_trace) EXPECT_EQ(o, 0.0);
  EXPECT_EQ(matmul(r.basis, r.coefficients), Matrix(4, 5));
}

TEST(Factorize, ObjectiveIsNonIncreasing) {
  const Matrix w = random_matrix(8, 6, 21, 0.0, 1.0);
  const NmfResult r = factorize(w, config(3));
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
    EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1] + 1e-9) << "iteration " << i;
  EXPECT_LT(r.objective_trace.back(), r.objective_trace.front());
}

TEST(Factorize, TraceMatchesDirectResidual) {
  const Matrix w = random_matrix(7, 5, 4, 0.0, 2.0);
  const NmfResult r = factorize(w, config(2));
  const Matrix diff = elementwise(w, matmul(r.basis, r.coefficients), ElementwiseOp::sub);
  EXPECT_NEAR(r.objective_trace.back(), frobenius_sq(diff), 1e-12);
}

TEST(Factorize, FactorsStayNonNegative) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Matrix w = random_matrix(10, 7, 50 + s, 0.0, 1.0);
    // Exercise dead rows/columns too.
    for (std::size_t j = 0; j < w.cols(); ++j) w(2, j) = 0.0;
    const NmfResult r = factorize(w, config(4, s));
    for (double v : r.basis.data()) EXPECT_GE(v, 0.0);
    for (double v : r.coefficients.data()) EXPECT_GE(v, 0.0);
    EXPECT_TRUE(all_finite(r.basis));
    EXPECT_TRUE(all_finite(r.coefficients));
  }
}

TEST(Factorize, DeterministicUnderFixedSeed) {
  const Matrix w = random_matrix(9, 11, 5, 0.0, 1.0);
  const NmfResult a = factorize(w, config(3, 42));
  const NmfResult b = factorize(w, config(3, 42));
  EXPECT_EQ(a.basis, b.basis);
  EXPECT_EQ(a.coefficients, b.coefficients);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
  const NmfResult c = factorize(w, config(3, 43));
  EXPECT_NE(a.basis, c.basis);
}

TEST(Factorize, RankIsClampedToMatrixDimensions) {
  const NmfResult r = factorize(random_matrix(3, 8, 6, 0.0, 1.0), config(6));
  EXPECT_EQ(r.effective_rank, 3u);
  EXPECT_TRUE(r.rank_clamped(6));
  EXPECT_EQ(r.basis.cols(), 3u);
  EXPECT_EQ(r.coefficients.rows(), 3u);
}

TEST(Factorize, RejectsInvalidInput) {
  EXPECT_THROW(factorize(Matrix{{1, -0.5}}, config(1)), ValueError);
  NmfConfig bad = config(0);
  EXPECT_THROW(factorize(Matrix{{1}}, bad), ValueError);
  bad = config(1);
  bad.epsilon = 0.0;
  EXPECT_THROW(factorize(Matrix{{1}}, bad), ValueError);
}

TEST(ScoreLayer, RankOneMagnitudesScoreNearZero) {
  Matrix w = rank_one(10, 8, 9);
  // Random signs: |w| stays rank-1.
  Rng rng(1);
  for (double& v : w.data())
    if (rng.uniform01() < 0.5) v = -v;
  const ScoreMatrix s = score_layer("fc", w, config(1));
  EXPECT_LE(max_abs(s.scores), 1e-3 * max_abs(w));
}

TEST(ScoreLayer, ZeroWeightsScoreExactlyZero) {
  const ScoreMatrix s = score_layer("fc", Matrix(5, 4), config(2));
  EXPECT_EQ(s.scores, Matrix(5, 4));
}

TEST(ScoreLayer, DependsOnlyOnMagnitudes) {
  const Matrix w = random_matrix(6, 9, 31);
  Matrix neg = w;
  for (double& v : neg.data()) v = -v;
  const auto a = score_layer("fc", w, config(3));
  const auto b = score_layer("fc", neg, config(3));
  EXPECT_EQ(a.scores, b.scores);
}

TEST(ScoreLayer, DoesNotModifyWeightsAndIsNonNegative) {
  const Matrix w = random_matrix(6, 9, 32);
  const Matrix copy = w;
  NmfResult nmf;
  const auto s = score_layer("conv0", w, config(3), &nmf);
  EXPECT_EQ(w, copy);
  EXPECT_EQ(s.layer_id, "conv0");
  EXPECT_TRUE(s.scores.same_shape(w));
  for (double v : s.scores.data()) EXPECT_GE(v, 0.0);
  EXPECT_EQ(nmf.effective_rank, 3u);
}

TEST(ScoreMagnitude, IsAbsoluteValue) {
  EXPECT_EQ(score_magnitude("fc", Matrix{{-2, 1}}).scores, (Matrix{{2, 1}}));
}

TEST(LayerSeeds, DifferPerLayerButAreStable) {
  NmfConfig base = config(2, 1234);
  EXPECT_EQ(layer_nmf_config(base, "linear0").seed, layer_nmf_config(base, "linear0").seed);
  EXPECT_NE(layer_nmf_config(base, "linear0").seed, layer_nmf_config(base, "linear2").seed);
}
