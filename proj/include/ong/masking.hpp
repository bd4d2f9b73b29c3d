#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ong/error.hpp"
#include "ong/matrix.hpp"
#include "ong/nmf.hpp"

namespace ong {

enum class ThresholdType { STD, MAD };

inline std::string_view to_string(ThresholdType t) { return t == ThresholdType::STD ? "STD" : "MAD"; }

inline ThresholdType parse_threshold_type(std::string_view s) {
  if (s == "STD" || s == "std") return ThresholdType::STD;
  if (s == "MAD" || s == "mad") return ThresholdType::MAD;
  throw ConfigError("unknown threshold type '" + std::string(s) + "' (expected STD or MAD)");
}

struct ThresholdConfig {
  ThresholdType type = ThresholdType::STD;
  double gamma = 1.5;
};

/// Binary keep-mask (1 = keep, 0 = pruned) for one layer.
struct Mask {
  std::string layer_id;
  Matrix bits;
};

using MaskSet = std::vector<Mask>;

struct GammaSearchConfig {
  double target_sparsity = 0.8;
  double sparsity_tolerance = 0.005;
  std::size_t max_iterations = 30;
  double gamma_min = 0.01;
  double gamma_max = 10.0;
  double gamma_guess = 1.0;
  double convergence_tolerance = 1e-4;  // relative bracket width

  void validate() const {
    if (!(target_sparsity > 0.0 && target_sparsity < 1.0))
      throw ValueError("GammaSearchConfig: target sparsity must lie in (0, 1)");
    if (!(sparsity_tolerance > 0.0 && sparsity_tolerance < 1.0))
      throw ValueError("GammaSearchConfig: sparsity tolerance must lie in (0, 1)");
    if (max_iterations < 1) throw ValueError("GammaSearchConfig: max iterations must be >= 1");
    if (!(gamma_min < gamma_max)) throw ValueError("GammaSearchConfig: gamma_min must be < gamma_max");
    if (!(convergence_tolerance > 0.0))
      throw ValueError("GammaSearchConfig: convergence tolerance must be > 0");
  }
};

struct LayerSparsity {
  std::string layer_id;
  std::size_t zeros = 0;
  std::size_t total = 0;
  double sparsity = 0.0;
  bool degenerate = false;  // zero dispersion: thresholding can never prune this layer
};

struct SparsityReport {
  std::vector<LayerSparsity> per_layer;
  std::size_t global_zeros = 0;
  std::size_t global_total = 0;
  double global_sparsity = 0.0;

  const LayerSparsity* find(std::string_view id) const {
    for (const auto& l : per_layer)
      if (l.layer_id == id) return &l;
    return nullptr;
  }
};

struct GammaProbe {
  std::size_t iteration = 0;  // 1-based
  double gamma = 0.0;
  double achieved = 0.0;
  double gamma_low = 0.0;   // bracket after this probe
  double gamma_high = 0.0;
};

struct GammaSearchResult {
  double gamma_star = 0.0;
  double achieved = 0.0;
  bool reached_tolerance = false;
  bool bracket_converged = false;
  std::vector<GammaProbe> trace;

  bool warning() const { return !reached_tolerance; }
};

inline std::ostream& operator<<(std::ostream& os, const GammaProbe& p) {
  return os << "iter=" << p.iteration << " gamma=" << p.gamma << " achieved=" << p.achieved
            << " bracket=[" << p.gamma_low << ", " << p.gamma_high << "]";
}

/// Line-oriented dump of a search, one probe per line.
inline void write_trace(std::ostream& os, const GammaSearchResult& r) {
  for (const auto& p : r.trace) os << p << '\n';
  os << "gamma*=" << r.gamma_star << " achieved=" << r.achieved
     << (r.warning() ? " WARNING: tolerance not reached" : "") << '\n';
}

/// tau = center + gamma * spread, from precomputed statistics.
inline double threshold_from_stats(const SummaryStats& s, ThresholdType type, double gamma) {
  return type == ThresholdType::STD ? s.mean + gamma * s.std : s.median + gamma * s.mad;
}

inline double layer_threshold(const ScoreMatrix& scores, const ThresholdConfig& cfg) {
  if (scores.scores.empty()) throw ValueError("layer_threshold: empty scores for " + scores.layer_id);
  return threshold_from_stats(stats(scores.scores), cfg.type, cfg.gamma);
}

/// Keep where score >= threshold (ties kept).
inline Mask generate_mask(const ScoreMatrix& scores, double threshold) {
  if (!std::isfinite(threshold)) throw ValueError("generate_mask: non-finite threshold");
  Mask m{scores.layer_id, Matrix(scores.scores.rows(), scores.scores.cols())};
  auto s = scores.scores.data();
  auto b = m.bits.data();
  for (std::size_t i = 0; i < s.size(); ++i) b[i] = s[i] >= threshold ? 1.0 : 0.0;
  return m;
}

inline MaskSet generate_all_masks(const ScoreSet& all_scores, const ThresholdConfig& cfg) {
  MaskSet masks;
  masks.reserve(all_scores.size());
  for (const auto& s : all_scores) masks.push_back(generate_mask(s, layer_threshold(s, cfg)));
  return masks;
}

inline SparsityReport global_sparsity(const MaskSet& masks) {
  if (masks.empty()) throw ValueError("global_sparsity: empty mask set");
  SparsityReport r;
  for (const auto& m : masks) {
    LayerSparsity l{m.layer_id, count_zeros(m.bits), m.bits.size(), 0.0, false};
    l.sparsity = l.total ? static_cast<double>(l.zeros) / static_cast<double>(l.total) : 0.0;
    r.global_zeros += l.zeros;
    r.global_total += l.total;
    r.per_layer.push_back(std::move(l));
  }
  r.global_sparsity = r.global_total
                          ? static_cast<double>(r.global_zeros) / static_cast<double>(r.global_total)
                          : 0.0;
  return r;
}

/// Per-layer statistics computed once, then reused for every gamma probe.
class SparsityProbe {
 public:
  SparsityProbe(const ScoreSet& all_scores, ThresholdType type) : scores_(all_scores), type_(type) {
    stats_.reserve(all_scores.size());
    for (const auto& s : all_scores) {
      if (s.scores.empty()) throw ValueError("tune_gamma: empty scores for " + s.layer_id);
      stats_.push_back(stats(s.scores));
      total_ += s.scores.size();
    }
  }

  std::vector<double> thresholds(double gamma) const {
    std::vector<double> t;
    t.reserve(stats_.size());
    for (const auto& s : stats_) t.push_back(threshold_from_stats(s, type_, gamma));
    return t;
  }

  /// Global sparsity of the temporary masks at this gamma.
  double sparsity(double gamma) const {
    std::size_t zeros = 0;
    for (std::size_t l = 0; l < stats_.size(); ++l) {
      const double tau = threshold_from_stats(stats_[l], type_, gamma);
      for (double v : scores_[l].scores.data()) zeros += v >= tau ? 0 : 1;
    }
    return static_cast<double>(zeros) / static_cast<double>(total_);
  }

  bool degenerate(std::size_t layer) const {
    const auto& s = stats_[layer];
    return type_ == ThresholdType::STD ? s.std == 0.0 : s.mad == 0.0;
  }

 private:
  const ScoreSet& scores_;
  ThresholdType type_;
  std::vector<SummaryStats> stats_;
  std::size_t total_ = 0;
};

/// Bisection on gamma so that the global sparsity of the generated masks lands
/// within the tolerance of the target. One gamma is shared by every layer.
inline GammaSearchResult tune_gamma(const ScoreSet& all_scores, ThresholdType type,
                                    const GammaSearchConfig& cfg) {
  cfg.validate();
  if (all_scores.empty()) throw ValueError("tune_gamma: no score matrices");
  const SparsityProbe probe(all_scores, type);

  GammaSearchResult r;
  double low = cfg.gamma_min;
  double high = cfg.gamma_max;
  double best_gamma = cfg.gamma_guess;
  double closest = -1.0;
  double best_achieved = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    double gamma = (low + high) / 2.0;
    if (gamma < 1e-6) gamma = 1e-6;
    const double achieved = probe.sparsity(gamma);
    const double err = std::fabs(achieved - cfg.target_sparsity);

    if (err < std::fabs(closest - cfg.target_sparsity)) {
      closest = achieved;
      best_gamma = gamma;
      best_achieved = achieved;
    }
    if (err <= cfg.sparsity_tolerance) {
      r.trace.push_back({it, gamma, achieved, low, high});
      r.gamma_star = gamma;
      r.achieved = achieved;
      r.reached_tolerance = true;
      return r;
    }
    if (achieved < cfg.target_sparsity) {
      low = gamma;
    } else {
      high = gamma;
    }
    r.trace.push_back({it, gamma, achieved, low, high});
    if ((high - low) / ((high + low) / 2.0 + 1e-9) < cfg.convergence_tolerance) {
      r.bracket_converged = true;
      break;
    }
  }

  r.gamma_star = best_gamma;
  r.achieved = std::isnan(best_achieved) ? probe.sparsity(best_gamma) : best_achieved;
  return r;
}

/// Flags layers whose score dispersion is zero under `type`; such layers are never pruned.
inline void mark_degenerate_layers(SparsityReport& report, const ScoreSet& all_scores,
                                   ThresholdType type) {
  const SparsityProbe probe(all_scores, type);
  for (std::size_t i = 0; i < all_scores.size(); ++i) {
    for (auto& l : report.per_layer)
      if (l.layer_id == all_scores[i].layer_id) l.degenerate = probe.degenerate(i);
  }
}

/// W <- W (.) M. Masked positions hold exactly zero afterwards.
inline void apply_initial_pruning(Matrix& weights, const Mask& mask) {
  if (!weights.same_shape(mask.bits)) {
    throw ShapeError("apply_initial_pruning: mask " + mask.bits.shape_string() + " for layer " +
                     mask.layer_id + " does not match weights " + weights.shape_string());
  }
  hadamard_inplace(weights, mask.bits);
}

inline const Mask* find_mask(const MaskSet& masks, std::string_view layer_id) {
  for (const auto& m : masks)
    if (m.layer_id == layer_id) return &m;
  return nullptr;
}

}  // namespace ong
