#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ong/data.hpp"
#include "ong/error.hpp"
#include "ong/matrix.hpp"
#include "ong/network.hpp"
#include "ong/random.hpp"

namespace ong {

struct TrainConfig {
  std::size_t epochs = 40;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::vector<std::size_t> lr_milestones{20, 30};
  double lr_gamma = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ValueError("TrainConfig: lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError("TrainConfig: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ValueError("TrainConfig: weight decay must be >= 0");
    if (batch_size == 0) throw ValueError("TrainConfig: batch size must be positive");
    for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
      if (i && lr_milestones[i] <= lr_milestones[i - 1])
        throw ValueError("TrainConfig: milestones must be strictly increasing");
      if (epochs && lr_milestones[i] >= epochs)
        throw ValueError("TrainConfig: milestone " + std::to_string(lr_milestones[i]) +
                         " is not below the epoch count");
    }
  }
};

/// Momentum buffers, one per weight matrix and bias vector, indexed like the layers.
struct OptimizerState {
  std::vector<Matrix> weight_buffers;
  std::vector<std::vector<double>> bias_buffers;

  static OptimizerState for_network(const Network& net) {
    OptimizerState s;
    for (const auto& l : net.layers()) {
      s.weight_buffers.emplace_back(l.weights.rows(), l.weights.cols());
      s.bias_buffers.emplace_back(l.bias.size(), 0.0);
    }
    return s;
  }
};

struct StepStats {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t samples = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double achieved_sparsity = 0.0;  // recounted from the weights
  std::size_t zero_count = 0;
};

/// eta * gamma^(number of milestones <= epoch)
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const auto passed = static_cast<int>(
      std::count_if(cfg.lr_milestones.begin(), cfg.lr_milestones.end(),
                    [&](std::size_t m) { return m <= epoch; }));
  return cfg.lr * std::pow(cfg.lr_gamma, passed);
}

namespace detail {

inline void require_finite(std::span<const double> g, const std::string& layer, const char* what) {
  for (std::size_t k = 0; k < g.size(); ++k)
    if (!std::isfinite(g[k]))
      throw NumericalError(std::string("sgd_step: non-finite ") + what + " in layer " + layer +
                           " at flat index " + std::to_string(k) + " (value " + std::to_string(g[k]) + ")");
}

inline std::size_t count_correct(const Matrix& logits, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const auto arg = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    correct += arg == labels[i];
  }
  return correct;
}

}  // namespace detail

/// buffer <- momentum * buffer + (grad + wd * W);  W <- W - lr * buffer.
/// Applies to every weight matrix and bias vector.
inline void sgd_step(Network& net, OptimizerState& state, double lr, const TrainConfig& cfg) {
  auto& layers = net.mutable_layers();
  if (state.weight_buffers.size() != layers.size())
    throw ShapeError("sgd_step: optimizer state does not match the network");
  for (const auto& l : layers) {
    if (!l.has_params()) continue;
    detail::require_finite(l.grad_weights.data(), l.id, "weight gradient");
    detail::require_finite(l.grad_bias, l.id, "bias gradient");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    if (!l.has_params()) continue;
    auto& wb = state.weight_buffers[i];
    if (!wb.same_shape(l.weights)) throw ShapeError("sgd_step: momentum buffer shape drifted for " + l.id);
    auto w = l.weights.data();
    auto g = l.grad_weights.data();
    auto b = wb.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      b[k] = cfg.momentum * b[k] + (g[k] + cfg.weight_decay * w[k]);
      w[k] -= lr * b[k];
    }
    auto& bb = state.bias_buffers[i];
    for (std::size_t k = 0; k < l.bias.size(); ++k) {
      bb[k] = cfg.momentum * bb[k] + (l.grad_bias[k] + cfg.weight_decay * l.bias[k]);
      l.bias[k] -= lr * bb[k];
    }
  }
}

/// Forward, backward, then the plain optimizer step. No mask handling.
inline StepStats train_step(Network& net, const Matrix& batch, std::span<const std::size_t> labels,
                            OptimizerState& state, double lr, const TrainConfig& cfg) {
  const ForwardCache cache = net.forward(batch);
  StepStats s;
  s.samples = labels.size();
  s.correct = detail::count_correct(cache.logits(), labels);
  s.loss = net.backward(cache, labels);
  sgd_step(net, state, lr, cfg);
  return s;
}

/// Forward, backward, gradient masking (grad <- grad (.) M), weight enforcement
/// (W <- W (.) M), optimizer step, then a check that every masked weight is still 0.
inline StepStats masked_train_step(Network& net, const Matrix& batch, std::span<const std::size_t> labels,
                                   OptimizerState& state, double lr, const TrainConfig& cfg) {
  const ForwardCache cache = net.forward(batch);
  StepStats s;
  s.samples = labels.size();
  s.correct = detail::count_correct(cache.logits(), labels);
  s.loss = net.backward(cache, labels);
  for (auto& l : net.mutable_layers()) {
    if (!l.mask) continue;
    hadamard_inplace(l.grad_weights, l.mask->bits);
    hadamard_inplace(l.weights, l.mask->bits);
  }
  sgd_step(net, state, lr, cfg);
  verify_masked_nullity(net);
  return s;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline Evaluation evaluate(const Network& net, const Dataset& data, std::size_t chunk = 256) {
  Evaluation e;
  if (data.size() == 0) return e;
  std::size_t correct = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix logits = net.predict(data.gather(idx));
    const std::span<const std::size_t> labels(data.labels.data() + start, end - start);
    correct += detail::count_correct(logits, labels);
    loss += Network::softmax_cross_entropy(logits, labels).first * static_cast<double>(end - start);
  }
  e.loss = loss / static_cast<double>(data.size());
  e.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return e;
}

struct TrainHooks {
  /// Called after every optimizer step with the network in its post-step state.
  std::function<void(const StepStats&, const Network&)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Seeded Fisher-Yates shuffle each epoch; masked_train_step per mini-batch.
/// The final short batch is kept.
inline std::vector<EpochMetrics> run_training(Network& net, const Dataset& train, const Dataset& test,
                                              const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  std::vector<EpochMetrics> out;
  if (cfg.epochs == 0) return out;
  if (train.size() == 0) throw ValueError("run_training: empty training set");

  OptimizerState state = OptimizerState::for_network(net);
  Rng rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto idx = std::span<const std::size_t>(order).subspan(
          start, std::min(cfg.batch_size, order.size() - start));
      std::vector<std::size_t> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train.labels[i]);
      StepStats s = masked_train_step(net, train.gather(idx), labels, state, lr, cfg);
      s.step = ++step;
      loss_sum += s.loss * static_cast<double>(s.samples);
      correct += s.correct;
      if (hooks.on_step) hooks.on_step(s, net);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(train.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    m.test_accuracy = evaluate(net, test).accuracy;
    const SparsityReport r = weight_sparsity(net);
    m.achieved_sparsity = r.global_sparsity;
    m.zero_count = r.global_zeros;
    if (hooks.on_epoch) hooks.on_epoch(m);
    out.push_back(m);
  }
  return out;
}

}  // namespace ong
