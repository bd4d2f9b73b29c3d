// ong: one-shot NMF scoring, gamma-tuned masking and masked training from a config file.
//
// Exit codes: 0 success, 1 config/validation error, 2 runtime stage failure,
// 3 invariant violation (a masked weight became non-zero).

#include <cstdio>
#include <filesystem>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ong/ong.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitInvariant = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::optional<double> target_sparsity;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "run configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override [run] seed");
  cmd->add_option("--output", o.output, "override [run] output directory");
  cmd->add_option("--target-sparsity", o.target_sparsity, "enable/override target-sparsity mode")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_flag("--quiet", o.quiet, "print only the final summary");
}

ong::RunConfig load_config(const CommonOptions& o) {
  ong::RunConfig cfg = ong::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.output) cfg.output_dir = *o.output;
  if (o.target_sparsity) {
    if (!cfg.gamma_search) cfg.gamma_search = ong::GammaSearchConfig{};
    cfg.gamma_search->target_sparsity = *o.target_sparsity;
  }
  try {
    cfg.validate();
  } catch (const ong::ConfigError&) {
    throw;
  } catch (const ong::Error& e) {
    throw ong::ConfigError(e.what());
  }
  return cfg;
}

void print_sparsity(std::ostream& os, const ong::SparsityReport& r) {
  for (const auto& l : r.per_layer) {
    os << "  " << std::left << std::setw(12) << l.layer_id << std::right << std::setw(9) << l.zeros << " / "
       << std::setw(9) << l.total << "  sparsity " << std::fixed << std::setprecision(4) << l.sparsity
       << (l.degenerate ? "  (degenerate scores)" : "") << '\n';
  }
  os << "  global      " << std::setw(9) << r.global_zeros << " / " << std::setw(9) << r.global_total
     << "  sparsity " << std::fixed << std::setprecision(4) << r.global_sparsity << '\n';
}

int cmd_run(const CommonOptions& o) {
  const ong::RunConfig cfg = load_config(o);
  ong::PipelineOptions opts;
  if (!o.quiet) {
    opts.log = [](const nlohmann::json& j) {
      const auto ev = j.value("event", "");
      if (ev == "epoch") {
        std::cout << "epoch " << j["epoch"] << "  lr " << j["lr"].get<double>() << "  loss "
                  << j["train_loss"].get<double>() << "  train_acc " << j["train_accuracy"].get<double>()
                  << "  test_acc " << j["test_accuracy"].get<double>() << "  sparsity "
                  << j["achieved_sparsity"].get<double>() << '\n';
      } else if (ev == "gamma_search") {
        std::cout << "gamma search iter " << j["iteration"] << "  gamma " << j["gamma"].get<double>()
                  << "  achieved " << j["achieved"].get<double>() << '\n';
      } else if (ev == "warning") {
        std::cout << "warning: " << j["message"].get<std::string>() << '\n';
      }
    };
  }
  const ong::RunReport r = ong::run_pipeline(cfg, opts);
  std::cout << "gamma* = " << r.gamma_star << '\n';
  print_sparsity(std::cout, r.sparsity_report);
  std::cout << "flops dense " << r.flops.dense << "  sparse " << r.flops.sparse << '\n';
  std::cout << "final test accuracy " << std::setprecision(4) << r.final_test_accuracy << '\n';
  std::cout << "outputs in " << cfg.output_dir << '\n';
  return kExitOk;
}

int cmd_score(const CommonOptions& o) {
  const ong::RunConfig cfg = load_config(o);
  std::vector<ong::LayerScoringInfo> info;
  const ong::Network net = ong::detail::run_stage("model", [&] { return ong::build_run_network(cfg); });
  const ong::ScoreSet scores = ong::detail::run_stage("scoring", [&] { return ong::score_network(net, cfg, &info); });
  std::filesystem::create_directories(cfg.output_dir);
  std::vector<ong::NamedTensor> tensors;
  for (const auto& s : scores) tensors.push_back({s.layer_id, s.scores});
  const auto path = (std::filesystem::path(cfg.output_dir) / "scores.ongc").string();
  ong::save_tensors(tensors, path);
  for (const auto& s : scores) {
    const auto st = ong::stats(s.scores);
    std::cout << s.layer_id << "  " << s.scores.shape_string() << "  mean " << st.mean << "  std " << st.std
              << "  median " << st.median << "  mad " << st.mad << '\n';
  }
  if (!o.quiet)
    for (const auto& i : info)
      if (i.effective_rank < i.requested_rank)
        std::cout << "note: " << i.layer_id << " NMF rank clamped " << i.requested_rank << " -> "
                  << i.effective_rank << '\n';
  std::cout << "scores written to " << path << '\n';
  return kExitOk;
}

int cmd_tune(const CommonOptions& o) {
  const ong::RunConfig cfg = load_config(o);
  const ong::Network net = ong::detail::run_stage("model", [&] { return ong::build_run_network(cfg); });
  const ong::ScoreSet scores = ong::detail::run_stage("scoring", [&] { return ong::score_network(net, cfg); });
  const ong::MaskingOutcome m = ong::detail::run_stage("masking", [&] { return ong::determine_masks(scores, cfg); });
  if (m.search && !o.quiet) ong::write_trace(std::cout, *m.search);
  std::filesystem::create_directories(cfg.output_dir);
  std::vector<ong::NamedTensor> tensors;
  for (const auto& mask : m.masks) tensors.push_back({mask.layer_id, mask.bits});
  ong::save_tensors(tensors, (std::filesystem::path(cfg.output_dir) / "masks.ongc").string());
  std::cout << "gamma* = " << std::setprecision(10) << m.gamma_star << "  achieved sparsity "
            << std::setprecision(6) << m.report.global_sparsity << '\n';
  if (m.search && m.search->warning()) std::cout << "warning: sparsity tolerance not reached\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  const ong::Network net = ong::detail::run_stage("inspect", [&] { return ong::load_checkpoint(path); });
  std::cout << "checkpoint " << path << "  input " << net.input_shape().to_string() << "  seed " << net.seed()
            << '\n';
  for (const auto& l : net.layers()) {
    std::cout << "  " << std::left << std::setw(12) << l.id << std::right;
    if (l.has_params())
      std::cout << " weights " << l.weights.shape_string() << (l.prunable ? " prunable" : "")
                << (l.mask ? " masked" : "");
    std::cout << '\n';
  }
  print_sparsity(std::cout, ong::weight_sparsity(net));
  const auto f = net.flops_estimate();
  std::cout << "flops dense " << f.dense << "  sparse " << f.sparse << '\n';
  return kExitOk;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ong::ConfigError("bad list element '" + tok + "'");
    }
  }
  return out;
}

int cmd_sweep(const CommonOptions& o, const std::string& targets_arg, const std::string& ks_arg, unsigned jobs) {
  const ong::RunConfig base = load_config(o);
  std::vector<double> targets = parse_list(targets_arg);
  std::vector<double> ks = parse_list(ks_arg);
  if (targets.empty() && ks.empty()) throw ong::ConfigError("sweep needs --targets and/or --ks");
  if (targets.empty()) targets.push_back(-1.0);
  if (ks.empty()) ks.push_back(-1.0);

  struct Job {
    ong::RunConfig cfg;
    std::string name;
  };
  std::vector<Job> grid;
  for (double t : targets)
    for (double k : ks) {
      Job j{base, ""};
      std::ostringstream name;
      if (t >= 0.0) {
        if (!j.cfg.gamma_search) j.cfg.gamma_search = ong::GammaSearchConfig{};
        j.cfg.gamma_search->target_sparsity = t;
        name << "t" << t;
      }
      if (k >= 0.0) {
        if (k < 1.0 || k != static_cast<double>(static_cast<std::size_t>(k)))
          throw ong::ConfigError("NMF rank must be a positive integer");
        j.cfg.nmf.components = static_cast<std::size_t>(k);
        name << (name.str().empty() ? "" : "_") << "k" << static_cast<std::size_t>(k);
      }
      try {
        j.cfg.validate();
      } catch (const ong::ConfigError&) {
        throw;
      } catch (const ong::Error& e) {
        throw ong::ConfigError(e.what());
      }
      j.name = name.str();
      j.cfg.output_dir = (std::filesystem::path(base.output_dir) / j.name).string();
      grid.push_back(std::move(j));
    }

  struct Outcome {
    std::string name;
    bool ok = false;
    bool invariant = false;
    ong::RunReport report;
    std::string error;
  };
  const auto run_one = [](const Job& j) {
    Outcome out;
    out.name = j.name;
    try {
      out.report = ong::run_pipeline(j.cfg);
      out.ok = true;
    } catch (const ong::StageError& e) {
      out.error = e.what();
      out.invariant = e.invariant_violation();
    }
    return out;
  };

  std::vector<Outcome> results;
  jobs = std::max(1u, jobs);
  for (std::size_t start = 0; start < grid.size(); start += jobs) {
    std::vector<std::future<Outcome>> pending;
    for (std::size_t i = start; i < std::min(grid.size(), start + jobs); ++i)
      pending.push_back(std::async(std::launch::async, run_one, std::cref(grid[i])));
    for (auto& f : pending) results.push_back(f.get());
  }

  std::filesystem::create_directories(base.output_dir);
  std::ofstream summary(std::filesystem::path(base.output_dir) / "sweep.jsonl", std::ios::trunc);
  int code = kExitOk;
  for (const auto& r : results) {
    nlohmann::json j{{"run", r.name}, {"ok", r.ok}};
    if (r.ok) {
      j["gamma_star"] = r.report.gamma_star;
      j["global_sparsity"] = r.report.sparsity_report.global_sparsity;
      j["final_test_accuracy"] = r.report.final_test_accuracy;
      j["flops_dense"] = r.report.flops.dense;
      j["flops_sparse"] = r.report.flops.sparse;
      std::cout << std::left << std::setw(14) << r.name << std::right << "  gamma* " << std::setw(10)
                  << r.report.gamma_star << "  sparsity " << std::setw(8) << r.report.sparsity_report.global_sparsity
                  << "  test_acc " << r.report.final_test_accuracy << '\n';
    } else {
      j["error"] = r.error;
      std::cout << std::left << std::setw(14) << r.name << "  FAILED: " << r.error << '\n';
      code = std::max(code, r.invariant ? kExitInvariant : kExitRuntime);
    }
    summary << j.dump() << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ong - one-shot NMF-scored pruning with gradient-masked training"};
  app.require_subcommand(1);

  CommonOptions run_o, score_o, tune_o, sweep_o;
  auto* run = app.add_subcommand("run", "full pipeline: score, tune, prune, train, report");
  add_common(run, run_o);
  auto* score = app.add_subcommand("score", "scoring only; dumps score tensors to <output>/scores.ongc");
  add_common(score, score_o);
  auto* tune = app.add_subcommand("tune", "scoring + gamma search; prints gamma* and achieved sparsity");
  add_common(tune, tune_o);
  auto* sweep = app.add_subcommand("sweep", "grid over target sparsity and/or NMF rank");
  add_common(sweep, sweep_o);
  std::string targets, ks;
  unsigned jobs = 1;
  sweep->add_option("--targets", targets, "comma-separated target sparsities");
  sweep->add_option("--ks", ks, "comma-separated NMF ranks");
  sweep->add_option("--jobs", jobs, "concurrent runs");
  auto* inspect = app.add_subcommand("inspect", "print a checkpoint's sparsity report");
  std::string checkpoint;
  inspect->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o);
    if (*score) return cmd_score(score_o);
    if (*tune) return cmd_tune(tune_o);
    if (*sweep) return cmd_sweep(sweep_o, targets, ks, jobs);
    if (*inspect) return cmd_inspect(checkpoint);
  } catch (const ong::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ong::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.invariant_violation() ? kExitInvariant : kExitRuntime;
  } catch (const ong::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
