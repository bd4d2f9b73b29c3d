#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ong/error.hpp"
#include "ong/matrix.hpp"
#include "ong/random.hpp"

namespace ong {

struct NmfConfig {
  std::size_t components = 6;
  std::size_t iterations = 200;
  std::uint64_t seed = 0;
  double epsilon = 1e-12;  // added to multiplicative-update denominators

  void validate() const {
    if (components < 1) throw ValueError("NmfConfig: components must be >= 1");
    if (iterations < 1) throw ValueError("NmfConfig: iterations must be >= 1");
    if (!(epsilon > 0.0)) throw ValueError("NmfConfig: epsilon must be > 0");
  }
};

struct NmfResult {
  Matrix basis;         // m x k_eff, non-negative
  Matrix coefficients;  // k_eff x p, non-negative
  std::vector<double> objective_trace;  // ||W - FG||_F^2, initial value then one entry per iteration
  std::size_t effective_rank = 0;

  bool rank_clamped(std::size_t requested) const { return effective_rank < requested; }
};

/// Per-layer importance scores, same shape as the layer's flattened weights.
struct ScoreMatrix {
  std::string layer_id;
  Matrix scores;
};

using ScoreSet = std::vector<ScoreMatrix>;

namespace detail {

inline double reconstruction_error(const Matrix& target, const Matrix& basis,
                                   const Matrix& coefficients) {
  const Matrix approx = matmul(basis, coefficients);
  double s = 0.0;
  auto t = target.data();
  auto a = approx.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = t[i] - a[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Lee-Seung multiplicative updates for min ||W - FG||_F^2 with F, G >= 0.
/// The requested rank is clamped to min(rows, cols); callers can detect that
/// through NmfResult::rank_clamped.
inline NmfResult factorize(const Matrix& w_abs, const NmfConfig& cfg) {
  cfg.validate();
  if (w_abs.rows() == 0 || w_abs.cols() == 0) throw ShapeError("factorize: empty matrix");
  for (double v : w_abs.data()) {
    if (v < 0.0) throw ValueError("factorize: input contains a negative element");
    if (!std::isfinite(v)) throw NumericalError("factorize: input contains a non-finite element");
  }

  const std::size_t m = w_abs.rows();
  const std::size_t p = w_abs.cols();
  const std::size_t k = std::min({cfg.components, m, p});

  double mean = 0.0;
  for (double v : w_abs.data()) mean += v;
  mean /= static_cast<double>(w_abs.size());
  const double scale = std::sqrt(mean / static_cast<double>(k));

  Rng rng(cfg.seed);
  NmfResult result;
  result.effective_rank = k;
  result.basis = Matrix(m, k);
  result.coefficients = Matrix(k, p);
  for (double& v : result.basis.data()) v = rng.uniform_open_closed() * scale;
  for (double& v : result.coefficients.data()) v = rng.uniform_open_closed() * scale;

  Matrix& f = result.basis;
  Matrix& g = result.coefficients;
  const double eps = cfg.epsilon;

  result.objective_trace.reserve(cfg.iterations + 1);
  result.objective_trace.push_back(detail::reconstruction_error(w_abs, f, g));

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    // F <- F .* (W G^T) ./ (F G G^T + eps)
    {
      const Matrix numer = matmul_nt(w_abs, g);   // m x k
      const Matrix ggt = matmul_nt(g, g);         // k x k
      const Matrix denom = matmul(f, ggt);        // m x k
      auto fd = f.data();
      auto nd = numer.data();
      auto dd = denom.data();
      for (std::size_t i = 0; i < fd.size(); ++i) fd[i] *= nd[i] / (dd[i] + eps);
    }
    // G <- G .* (F^T W) ./ (F^T F G + eps)
    {
      const Matrix numer = matmul_tn(f, w_abs);   // k x p
      const Matrix ftf = matmul_tn(f, f);         // k x k
      const Matrix denom = matmul(ftf, g);        // k x p
      auto gd = g.data();
      auto nd = numer.data();
      auto dd = denom.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= nd[i] / (dd[i] + eps);
    }
    result.objective_trace.push_back(detail::reconstruction_error(w_abs, f, g));
  }
  return result;
}

/// Delta-based importance: |(|W|) - FG| elementwise. Reads `weights` only.
/// `factorization`, when given, receives the NMF result the scores came from.
inline ScoreMatrix score_layer(std::string layer_id, const Matrix& weights, const NmfConfig& cfg,
                               NmfResult* factorization = nullptr) {
  const Matrix w_abs = abs_map(weights);
  NmfResult nmf = factorize(w_abs, cfg);
  const Matrix approx = matmul(nmf.basis, nmf.coefficients);
  ScoreMatrix out{std::move(layer_id), abs_map(elementwise(w_abs, approx, ElementwiseOp::sub))};
  if (factorization) *factorization = std::move(nmf);
  return out;
}

/// Baseline scorer: scores are |W|.
inline ScoreMatrix score_magnitude(std::string layer_id, const Matrix& weights) {
  return {std::move(layer_id), abs_map(weights)};
}

/// Each layer factorizes with its own seed derived from the global NMF seed and its id.
inline NmfConfig layer_nmf_config(const NmfConfig& base, const std::string& layer_id) {
  NmfConfig cfg = base;
  cfg.seed = derive_seed(base.seed, layer_id);
  return cfg;
}

}  // namespace ong
