#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ong/checkpoint.hpp"
#include "ong/config.hpp"
#include "ong/data.hpp"
#include "ong/masking.hpp"
#include "ong/network.hpp"
#include "ong/nmf.hpp"
#include "ong/trainer.hpp"

namespace ong {

/// A failure inside one pipeline stage ("data", "model", "scoring", "masking", "training", "output").
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause, bool invariant)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)), invariant_(invariant) {}

  const std::string& stage() const noexcept { return stage_; }
  bool invariant_violation() const noexcept { return invariant_; }

 private:
  std::string stage_;
  bool invariant_;
};

struct LayerScoringInfo {
  std::string layer_id;
  std::size_t requested_rank = 0;
  std::size_t effective_rank = 0;
  double final_objective = 0.0;
};

struct MaskingOutcome {
  bool target_mode = false;
  double gamma_star = 0.0;
  std::optional<GammaSearchResult> search;
  MaskSet masks;
  SparsityReport report;
};

struct StageTimes {
  double data = 0.0;
  double scoring = 0.0;
  double masking = 0.0;
  double training = 0.0;
  double total = 0.0;
};

struct RunReport {
  bool complete = false;
  std::string failed_stage;
  std::string error;
  bool target_mode = false;
  std::optional<double> target_sparsity;
  double gamma_star = 0.0;
  std::optional<GammaSearchResult> gamma_search;
  std::vector<LayerScoringInfo> scoring;
  SparsityReport mask_report;      // counted on the generated masks
  SparsityReport sparsity_report;  // recounted on the final weights
  std::vector<EpochMetrics> epochs;
  FlopsEstimate flops;
  double final_test_accuracy = 0.0;
  StageTimes wall_times;
};

/// Sub-seeds fanned out from the single run seed.
struct RunSeeds {
  std::uint64_t split, model, nmf, train;

  static RunSeeds from(std::uint64_t seed) {
    return {derive_seed(seed, "split"), derive_seed(seed, "model"), derive_seed(seed, "nmf"),
            derive_seed(seed, "train")};
  }
};

using LogSink = std::function<void(const nlohmann::json&)>;

namespace detail {

template <typename F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const InvariantViolation& e) {
    throw StageError(stage, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), false);
  }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline DatasetSplit load_run_data(const RunConfig& cfg) {
  DatasetSplit split = load_dataset(cfg.dataset, RunSeeds::from(cfg.seed).split, cfg.dataset_classes);
  if (split.train.features.cols() != cfg.input_shape.size())
    throw ShapeError("dataset samples have " + std::to_string(split.train.features.cols()) +
                     " features, model input is " + cfg.input_shape.to_string());
  return split;
}

inline Network build_run_network(const RunConfig& cfg) {
  return Network(cfg.input_shape, cfg.model, RunSeeds::from(cfg.seed).model);
}

/// Scores every prunable layer of `net` without touching its weights.
inline ScoreSet score_network(const Network& net, const RunConfig& cfg,
                              std::vector<LayerScoringInfo>* info = nullptr) {
  NmfConfig base = cfg.nmf;
  base.seed = RunSeeds::from(cfg.seed).nmf;
  ScoreSet scores;
  for (const auto& l : net.layers()) {
    if (!l.prunable) continue;
    if (cfg.scorer == ScorerKind::magnitude) {
      scores.push_back(score_magnitude(l.id, l.weights));
      continue;
    }
    const NmfConfig lc = layer_nmf_config(base, l.id);
    NmfResult nmf;
    scores.push_back(score_layer(l.id, l.weights, lc, &nmf));
    if (info) info->push_back({l.id, lc.components, nmf.effective_rank, nmf.objective_trace.back()});
  }
  if (scores.empty()) throw ValueError("model has no prunable layers");
  return scores;
}

/// Target-sparsity mode runs the gamma search; fixed mode uses threshold.gamma as is.
inline MaskingOutcome determine_masks(const ScoreSet& scores, const RunConfig& cfg) {
  MaskingOutcome out;
  out.target_mode = cfg.gamma_search.has_value();
  if (out.target_mode) {
    out.search = tune_gamma(scores, cfg.threshold.type, *cfg.gamma_search);
    out.gamma_star = out.search->gamma_star;
  } else {
    out.gamma_star = cfg.threshold.gamma;
  }
  out.masks = generate_all_masks(scores, {cfg.threshold.type, out.gamma_star});
  out.report = global_sparsity(out.masks);
  mark_degenerate_layers(out.report, scores, cfg.threshold.type);
  return out;
}

inline nlohmann::json to_json(const SparsityReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.per_layer)
    layers.push_back({{"layer", l.layer_id}, {"zeros", l.zeros}, {"total", l.total}, {"sparsity", l.sparsity},
                      {"degenerate", l.degenerate}});
  return {{"global_zeros", r.global_zeros}, {"global_total", r.global_total},
          {"global_sparsity", r.global_sparsity}, {"per_layer", layers}};
}

inline nlohmann::json to_json(const GammaProbe& p) {
  return {{"iteration", p.iteration}, {"gamma", p.gamma}, {"achieved", p.achieved},
          {"gamma_low", p.gamma_low}, {"gamma_high", p.gamma_high}};
}

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"lr", m.lr}, {"train_loss", m.train_loss}, {"train_accuracy", m.train_accuracy},
          {"test_accuracy", m.test_accuracy}, {"achieved_sparsity", m.achieved_sparsity},
          {"zero_count", m.zero_count}};
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["complete"] = r.complete;
  if (!r.complete) {
    j["failed_stage"] = r.failed_stage;
    j["error"] = r.error;
  }
  j["mode"] = r.target_mode ? "target-sparsity" : "fixed-gamma";
  if (r.target_sparsity) j["target_sparsity"] = *r.target_sparsity;
  j["gamma_star"] = r.gamma_star;
  if (r.gamma_search) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& p : r.gamma_search->trace) trace.push_back(to_json(p));
    j["gamma_search"] = {{"reached_tolerance", r.gamma_search->reached_tolerance},
                         {"bracket_converged", r.gamma_search->bracket_converged},
                         {"achieved", r.gamma_search->achieved},
                         {"trace", trace}};
  }
  nlohmann::json scoring = nlohmann::json::array();
  for (const auto& s : r.scoring)
    scoring.push_back({{"layer", s.layer_id}, {"requested_rank", s.requested_rank},
                       {"effective_rank", s.effective_rank}, {"final_objective", s.final_objective}});
  j["scoring"] = scoring;
  j["mask_report"] = to_json(r.mask_report);
  j["sparsity_report"] = to_json(r.sparsity_report);
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) epochs.push_back(to_json(e));
  j["epochs"] = epochs;
  j["flops"] = {{"dense", r.flops.dense}, {"sparse", r.flops.sparse},
                {"convention", "2 FLOPs per multiply-accumulate, batch of 1"}};
  j["final_test_accuracy"] = r.final_test_accuracy;
  j["wall_times"] = {{"data", r.wall_times.data}, {"scoring", r.wall_times.scoring},
                     {"masking", r.wall_times.masking}, {"training", r.wall_times.training},
                     {"total", r.wall_times.total}};
  return j;
}

struct PipelineOptions {
  bool write_outputs = true;
  LogSink log;  // extra sink, called for every log record
};

inline constexpr const char* kCheckpointFile = "model.ongc";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kLogFile = "log.jsonl";

/// Scoring, mask determination (+ one-shot pruning) and masked training, with
/// report, JSON-lines log and final checkpoint written to cfg.output_dir.
/// On failure the partial report is written with complete=false and a StageError is thrown.
inline RunReport run_pipeline(const RunConfig& cfg, const PipelineOptions& opts = {}) {
  namespace fs = std::filesystem;
  const auto t_start = std::chrono::steady_clock::now();
  RunReport report;
  report.target_mode = cfg.gamma_search.has_value();
  if (cfg.gamma_search) report.target_sparsity = cfg.gamma_search->target_sparsity;

  std::ofstream log_file;
  if (opts.write_outputs) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    log_file.open(fs::path(cfg.output_dir) / kLogFile, std::ios::trunc);
    if (!log_file) throw StageError("output", "cannot write to " + cfg.output_dir, false);
  }
  const auto log = [&](const nlohmann::json& j) {
    if (log_file) log_file << j.dump() << '\n' << std::flush;
    if (opts.log) opts.log(j);
  };
  const auto write_report = [&] {
    if (!opts.write_outputs) return;
    std::ofstream out(fs::path(cfg.output_dir) / kReportFile, std::ios::trunc);
    out << to_json(report).dump(2) << '\n';
  };

  try {
    auto t0 = std::chrono::steady_clock::now();
    const DatasetSplit data = detail::run_stage("data", [&] { return load_run_data(cfg); });
    Network net = detail::run_stage("model", [&] { return build_run_network(cfg); });
    report.wall_times.data = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    const ScoreSet scores = detail::run_stage("scoring", [&] { return score_network(net, cfg, &report.scoring); });
    for (const auto& s : report.scoring) {
      log({{"event", "scoring"}, {"layer", s.layer_id}, {"requested_rank", s.requested_rank},
           {"effective_rank", s.effective_rank}, {"rank_clamped", s.effective_rank < s.requested_rank},
           {"final_objective", s.final_objective}});
    }
    report.wall_times.scoring = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    MaskingOutcome masking = detail::run_stage("masking", [&] {
      MaskingOutcome m = determine_masks(scores, cfg);
      net.convert_to_masked(m.masks);
      verify_masked_nullity(net);
      return m;
    });
    report.gamma_star = masking.gamma_star;
    report.gamma_search = masking.search;
    report.mask_report = masking.report;
    if (masking.search) {
      for (const auto& p : masking.search->trace) {
        auto j = to_json(p);
        j["event"] = "gamma_search";
        log(j);
      }
      if (masking.search->warning())
        log({{"event", "warning"}, {"message", "gamma search did not reach the sparsity tolerance"},
             {"gamma_star", masking.gamma_star}, {"achieved", masking.search->achieved}});
    }
    log({{"event", "masks"}, {"gamma_star", masking.gamma_star},
         {"global_sparsity", masking.report.global_sparsity}, {"global_zeros", masking.report.global_zeros},
         {"global_total", masking.report.global_total}});
    report.wall_times.masking = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    TrainConfig tc = cfg.train;
    tc.seed = RunSeeds::from(cfg.seed).train;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m) {
      auto j = to_json(m);
      j["event"] = "epoch";
      log(j);
    };
    report.epochs = detail::run_stage("training", [&] { return run_training(net, data.train, data.test, tc, hooks); });
    report.wall_times.training = detail::seconds_since(t0);

    detail::run_stage("output", [&] {
      report.sparsity_report = weight_sparsity(net);
      report.flops = net.flops_estimate();
      report.final_test_accuracy =
          report.epochs.empty() ? evaluate(net, data.test).accuracy : report.epochs.back().test_accuracy;
      if (opts.write_outputs) save_checkpoint(net, (fs::path(cfg.output_dir) / kCheckpointFile).string());
      return 0;
    });
    report.complete = true;
  } catch (const StageError& e) {
    report.failed_stage = e.stage();
    report.error = e.what();
    report.wall_times.total = detail::seconds_since(t_start);
    log({{"event", "failure"}, {"stage", e.stage()}, {"error", e.what()}});
    write_report();
    throw;
  }
  report.wall_times.total = detail::seconds_since(t_start);
  write_report();
  return report;
}

}  // namespace ong
