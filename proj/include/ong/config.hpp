#pragma once

// Run configuration file: sectioned key = value lines.
//
//   # comment
//   [run]
//   seed = 7
//   output = runs/blobs
//
//   [model]
//   input = 16            # or: input = 1 28 28
//   layer = linear 16 64
//   layer = relu
//   layer = linear 64 2 prunable=false
//   layer = conv2d 1 8 3 3 stride=1 padding=1
//   layer = flatten
//
//   [dataset]
//   type = synthetic-blobs   # synthetic-blobs | csv | idx
//   samples = 1000
//   features = 16
//   classes = 2
//   seed = 3
//   # csv:  path = data.csv, label_column = 0, header = false
//   # idx:  images = train-images-idx3-ubyte, labels = train-labels-idx1-ubyte
//
//   [scorer]
//   type = nmf               # nmf | magnitude
//   components = 6
//   iterations = 200
//   epsilon = 1e-12
//
//   [threshold]
//   type = STD               # STD | MAD
//   gamma = 1.5              # fixed-gamma mode only
//
//   [gamma_search]           # presence switches to target-sparsity mode
//   target = 0.8
//   tolerance = 0.005
//   max_iterations = 30
//   gamma_min = 0.01
//   gamma_max = 10
//   gamma_guess = 1.0
//   convergence = 1e-4
//
//   [train]
//   epochs = 40
//   lr = 0.1
//   momentum = 0.9
//   weight_decay = 5e-4
//   batch_size = 64
//   milestones = 20, 30
//   lr_gamma = 0.1

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ong/data.hpp"
#include "ong/error.hpp"
#include "ong/masking.hpp"
#include "ong/network.hpp"
#include "ong/nmf.hpp"
#include "ong/trainer.hpp"

namespace ong {

enum class ScorerKind { nmf, magnitude };

struct RunConfig {
  std::uint64_t seed = 0;
  TensorShape input_shape;
  std::vector<LayerSpec> model;
  DatasetSource dataset = SyntheticBlobs{};
  std::size_t dataset_classes = 0;  // 0: infer from labels
  ScorerKind scorer = ScorerKind::nmf;
  NmfConfig nmf;  // seed is derived from `seed`
  ThresholdConfig threshold;
  std::optional<GammaSearchConfig> gamma_search;
  TrainConfig train;  // seed is derived from `seed`
  std::string output_dir = "ong_run";

  void validate() const {
    if (model.empty()) throw ConfigError("[model] defines no layers");
    if (input_shape.size() == 0) throw ConfigError("[model] input shape missing");
    try {
      (void)Network(input_shape, model, 0);
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("[model] ") + e.what());
    }
    if (scorer == ScorerKind::nmf) nmf.validate();
    if (!(threshold.gamma >= 0.0)) throw ConfigError("[threshold] gamma must be >= 0");
    if (gamma_search) gamma_search->validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

class ConfigDoc {
 public:
  static ConfigDoc parse(std::istream& in) {
    ConfigDoc doc;
    std::string section;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string line = trim(raw.substr(0, raw.find('#')));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
        section = trim(std::string_view(line).substr(1, line.size() - 2));
        doc.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      if (section.empty())
        throw ConfigError("line " + std::to_string(line_no) + ": key outside of any [section]");
      const std::string key = trim(std::string_view(line).substr(0, eq));
      auto& values = doc.sections_[section][key];
      if (!values.empty() && key != "layer")
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "' in [" + section + "]");
      values.push_back({trim(std::string_view(line).substr(eq + 1)), line_no});
    }
    return doc;
  }

  bool has(const std::string& section) const { return sections_.count(section) != 0; }

  const Entry* get(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second.front();
  }

  std::vector<Entry> all(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return {};
    const auto k = s->second.find(key);
    return k == s->second.end() ? std::vector<Entry>{} : k->second;
  }

  void reject_unknown_sections(std::initializer_list<std::string_view> known) const {
    for (const auto& [name, keys] : sections_) {
      bool ok = false;
      for (auto k : known) ok = ok || name == k;
      if (!ok) throw ConfigError("unknown section [" + name + "]");
    }
  }

  void reject_unknown(const std::string& section, std::initializer_list<std::string_view> known) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return;
    for (const auto& [key, entries] : s->second) {
      bool ok = false;
      for (auto k : known) ok = ok || key == k;
      if (!ok)
        throw ConfigError("line " + std::to_string(entries.front().line) + ": unknown key '" + key + "' in [" +
                          section + "]");
    }
  }

 private:
  std::map<std::string, std::map<std::string, std::vector<Entry>>> sections_;
};

inline double to_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("line " + std::to_string(line) + ": '" + s + "' is not a number");
}

inline std::uint64_t to_uint(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("line " + std::to_string(line) + ": '" + s + "' is not a non-negative integer");
  return v;
}

inline bool to_bool(const std::string& s, std::size_t line) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("line " + std::to_string(line) + ": '" + s + "' is not a boolean");
}

inline LayerSpec parse_layer(const Entry& e) {
  auto tok = split_ws(e.value);
  if (tok.empty()) throw ConfigError("line " + std::to_string(e.line) + ": empty layer");
  std::vector<std::uint64_t> nums;
  std::optional<bool> prunable;
  std::uint64_t stride = 1, padding = 0;
  for (std::size_t i = 1; i < tok.size(); ++i) {
    const auto eq = tok[i].find('=');
    if (eq == std::string::npos) {
      nums.push_back(to_uint(tok[i], e.line));
      continue;
    }
    const std::string k = tok[i].substr(0, eq);
    const std::string v = tok[i].substr(eq + 1);
    if (k == "prunable") prunable = to_bool(v, e.line);
    else if (k == "stride") stride = to_uint(v, e.line);
    else if (k == "padding") padding = to_uint(v, e.line);
    else throw ConfigError("line " + std::to_string(e.line) + ": unknown layer option '" + k + "'");
  }
  const auto want = [&](std::size_t n) {
    if (nums.size() != n)
      throw ConfigError("line " + std::to_string(e.line) + ": layer '" + tok[0] + "' takes " + std::to_string(n) +
                        " dimensions, got " + std::to_string(nums.size()));
  };
  if (tok[0] == "linear") {
    want(2);
    return linear(nums[0], nums[1], prunable);
  }
  if (tok[0] == "conv2d") {
    want(4);
    return conv2d(nums[0], nums[1], nums[2], nums[3], stride, padding, prunable);
  }
  if (tok[0] == "relu" || tok[0] == "flatten") {
    want(0);
    if (prunable.value_or(false))
      throw ConfigError("line " + std::to_string(e.line) + ": " + tok[0] + " cannot be prunable");
    return tok[0] == "relu" ? relu() : flatten();
  }
  throw ConfigError("line " + std::to_string(e.line) + ": unknown layer kind '" + tok[0] + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in) {
  using namespace detail;
  const ConfigDoc doc = ConfigDoc::parse(in);
  RunConfig cfg;

  const auto num = [&](const char* sec, const char* key, double& out) {
    if (const auto* e = doc.get(sec, key)) out = to_double(e->value, e->line);
  };
  const auto uint = [&](const char* sec, const char* key, auto& out) {
    if (const auto* e = doc.get(sec, key)) out = static_cast<std::decay_t<decltype(out)>>(to_uint(e->value, e->line));
  };

  doc.reject_unknown("run", {"seed", "output"});
  uint("run", "seed", cfg.seed);
  if (const auto* e = doc.get("run", "output")) cfg.output_dir = e->value;

  doc.reject_unknown("model", {"input", "layer"});
  const auto* input = doc.get("model", "input");
  if (!input) throw ConfigError("[model] requires 'input'");
  const auto dims = split_ws(input->value);
  if (dims.size() == 1) cfg.input_shape = flat_shape(to_uint(dims[0], input->line));
  else if (dims.size() == 3)
    cfg.input_shape = {to_uint(dims[0], input->line), to_uint(dims[1], input->line), to_uint(dims[2], input->line)};
  else throw ConfigError("line " + std::to_string(input->line) + ": input takes 1 or 3 dimensions");
  for (const auto& e : doc.all("model", "layer")) cfg.model.push_back(parse_layer(e));

  doc.reject_unknown("dataset", {"type", "samples", "features", "classes", "seed", "path", "label_column", "header",
                                 "images", "labels"});
  const auto* dtype = doc.get("dataset", "type");
  const std::string type = dtype ? dtype->value : "synthetic-blobs";
  uint("dataset", "classes", cfg.dataset_classes);
  if (type == "synthetic-blobs") {
    SyntheticBlobs b;
    uint("dataset", "samples", b.samples);
    uint("dataset", "features", b.features);
    uint("dataset", "classes", b.classes);
    uint("dataset", "seed", b.seed);
    cfg.dataset = b;
  } else if (type == "csv") {
    CsvSource c;
    const auto* p = doc.get("dataset", "path");
    if (!p) throw ConfigError("[dataset] csv requires 'path'");
    c.path = p->value;
    uint("dataset", "label_column", c.label_column);
    if (const auto* h = doc.get("dataset", "header")) c.header = to_bool(h->value, h->line);
    cfg.dataset = c;
  } else if (type == "idx") {
    const auto* im = doc.get("dataset", "images");
    const auto* lb = doc.get("dataset", "labels");
    if (!im || !lb) throw ConfigError("[dataset] idx requires 'images' and 'labels'");
    cfg.dataset = IdxSource{im->value, lb->value};
  } else {
    throw ConfigError("line " + std::to_string(dtype->line) + ": unknown dataset type '" + type + "'");
  }

  doc.reject_unknown("scorer", {"type", "components", "iterations", "epsilon"});
  if (const auto* s = doc.get("scorer", "type")) {
    if (s->value == "nmf") cfg.scorer = ScorerKind::nmf;
    else if (s->value == "magnitude") cfg.scorer = ScorerKind::magnitude;
    else throw ConfigError("line " + std::to_string(s->line) + ": unknown scorer '" + s->value + "'");
  }
  uint("scorer", "components", cfg.nmf.components);
  uint("scorer", "iterations", cfg.nmf.iterations);
  num("scorer", "epsilon", cfg.nmf.epsilon);

  doc.reject_unknown("threshold", {"type", "gamma"});
  if (const auto* t = doc.get("threshold", "type")) {
    try {
      cfg.threshold.type = parse_threshold_type(t->value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(t->line) + ": " + e.what());
    }
  }
  num("threshold", "gamma", cfg.threshold.gamma);

  doc.reject_unknown("gamma_search", {"target", "tolerance", "max_iterations", "gamma_min", "gamma_max",
                                      "gamma_guess", "convergence"});
  if (doc.has("gamma_search")) {
    GammaSearchConfig g;
    if (!doc.get("gamma_search", "target")) throw ConfigError("[gamma_search] requires 'target'");
    num("gamma_search", "target", g.target_sparsity);
    num("gamma_search", "tolerance", g.sparsity_tolerance);
    uint("gamma_search", "max_iterations", g.max_iterations);
    num("gamma_search", "gamma_min", g.gamma_min);
    num("gamma_search", "gamma_max", g.gamma_max);
    num("gamma_search", "gamma_guess", g.gamma_guess);
    num("gamma_search", "convergence", g.convergence_tolerance);
    cfg.gamma_search = g;
  }

  doc.reject_unknown("train", {"epochs", "lr", "momentum", "weight_decay", "batch_size", "milestones", "lr_gamma"});
  uint("train", "epochs", cfg.train.epochs);
  num("train", "lr", cfg.train.lr);
  num("train", "momentum", cfg.train.momentum);
  num("train", "weight_decay", cfg.train.weight_decay);
  uint("train", "batch_size", cfg.train.batch_size);
  num("train", "lr_gamma", cfg.train.lr_gamma);
  if (const auto* m = doc.get("train", "milestones")) {
    cfg.train.lr_milestones.clear();
    std::string v = m->value;
    for (char& c : v)
      if (c == ',') c = ' ';
    for (const auto& t : split_ws(v)) cfg.train.lr_milestones.push_back(to_uint(t, m->line));
  }

  doc.reject_unknown_sections({"run", "model", "dataset", "scorer", "threshold", "gamma_search", "train"});
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig parse_run_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_run_config(in);
}

}  // namespace ong
