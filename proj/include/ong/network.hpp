#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ong/error.hpp"
#include "ong/masking.hpp"
#include "ong/matrix.hpp"
#include "ong/random.hpp"

namespace ong {

struct LinearSpec {
  std::size_t in = 0;
  std::size_t out = 0;
};

struct Conv2dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ReluSpec {};
struct FlattenSpec {};

using LayerKind = std::variant<LinearSpec, Conv2dSpec, ReluSpec, FlattenSpec>;

struct LayerSpec {
  LayerKind kind;
  // Unset: Linear/Conv2d are prunable except the last weight-bearing layer (the classifier).
  std::optional<bool> prunable;
};

inline LayerSpec linear(std::size_t in, std::size_t out, std::optional<bool> prunable = {}) {
  return {LinearSpec{in, out}, prunable};
}
inline LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw,
                        std::size_t stride = 1, std::size_t padding = 0,
                        std::optional<bool> prunable = {}) {
  return {Conv2dSpec{in_ch, out_ch, kh, kw, stride, padding}, prunable};
}
inline LayerSpec relu() { return {ReluSpec{}, false}; }
inline LayerSpec flatten() { return {FlattenSpec{}, false}; }

/// Per-sample activation shape, channels x height x width. Flat vectors are (n, 1, 1).
struct TensorShape {
  std::size_t channels = 0;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  bool flat() const noexcept { return height == 1 && width == 1; }
  std::string to_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

inline TensorShape flat_shape(std::size_t n) { return {n, 1, 1}; }

inline bool has_weights(const LayerKind& k) {
  return std::holds_alternative<LinearSpec>(k) || std::holds_alternative<Conv2dSpec>(k);
}

inline std::string kind_name(const LayerKind& k) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LinearSpec>) return "linear";
        else if constexpr (std::is_same_v<T, Conv2dSpec>) return "conv2d";
        else if constexpr (std::is_same_v<T, ReluSpec>) return "relu";
        else return "flatten";
      },
      k);
}

/// A node of the network. Weight-bearing layers keep their weights as a 2D view:
/// out x in for Linear, out_ch x (in_ch*kh*kw) for Conv2d. Biases are never masked.
struct Layer {
  std::string id;
  LayerKind kind;
  bool prunable = false;
  TensorShape in_shape;
  TensorShape out_shape;
  Matrix weights;
  std::vector<double> bias;
  Matrix grad_weights;
  std::vector<double> grad_bias;
  std::optional<Mask> mask;

  bool has_params() const { return has_weights(kind); }
};

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline TensorShape output_shape(const LayerKind& kind, const TensorShape& in, std::size_t index) {
  const auto where = [&](const std::string& msg) {
    return ShapeError("layer " + std::to_string(index) + " (" + kind_name(kind) + "): " + msg);
  };
  return std::visit(
      [&](const auto& s) -> TensorShape {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LinearSpec>) {
          if (s.in == 0 || s.out == 0) throw where("dimensions must be positive");
          if (!in.flat()) throw where("input " + in.to_string() + " must be flattened first");
          if (in.channels != s.in)
            throw where("expects " + std::to_string(s.in) + " inputs, previous layer produces " +
                        std::to_string(in.channels));
          return flat_shape(s.out);
        } else if constexpr (std::is_same_v<T, Conv2dSpec>) {
          if (s.in_channels == 0 || s.out_channels == 0 || s.kernel_h == 0 || s.kernel_w == 0 ||
              s.stride == 0)
            throw where("dimensions must be positive");
          if (in.channels != s.in_channels)
            throw where("expects " + std::to_string(s.in_channels) +
                        " channels, previous layer produces " + in.to_string());
          if (in.height + 2 * s.padding < s.kernel_h || in.width + 2 * s.padding < s.kernel_w)
            throw where("kernel larger than padded input " + in.to_string());
          return {s.out_channels, conv_out_dim(in.height, s.kernel_h, s.stride, s.padding),
                  conv_out_dim(in.width, s.kernel_w, s.stride, s.padding)};
        } else if constexpr (std::is_same_v<T, ReluSpec>) {
          return in;
        } else {
          return flat_shape(in.size());
        }
      },
      kind);
}

// Unfolds one sample (C x H x W, row-major) into (C*kh*kw) x (oh*ow) patch columns.
inline Matrix im2col(std::span<const double> x, const TensorShape& in, const Conv2dSpec& s,
                     const TensorShape& out) {
  Matrix cols(s.in_channels * s.kernel_h * s.kernel_w, out.height * out.width);
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        const std::size_t r = (c * s.kernel_h + ki) * s.kernel_w + kj;
        for (std::size_t oy = 0; oy < out.height; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ki) -
                          static_cast<std::ptrdiff_t>(s.padding);
          for (std::size_t ox = 0; ox < out.width; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kj) -
                            static_cast<std::ptrdiff_t>(s.padding);
            double v = 0.0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(in.height) &&
                ix < static_cast<std::ptrdiff_t>(in.width))
              v = x[(c * in.height + static_cast<std::size_t>(iy)) * in.width +
                    static_cast<std::size_t>(ix)];
            cols(r, oy * out.width + ox) = v;
          }
        }
      }
  return cols;
}

// Adjoint of im2col: scatters patch-column gradients back onto the sample.
inline void col2im_add(const Matrix& cols, std::span<double> dx, const TensorShape& in,
                       const Conv2dSpec& s, const TensorShape& out) {
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        const std::size_t r = (c * s.kernel_h + ki) * s.kernel_w + kj;
        for (std::size_t oy = 0; oy < out.height; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ki) -
                          static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.height)) continue;
          for (std::size_t ox = 0; ox < out.width; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kj) -
                            static_cast<std::ptrdiff_t>(s.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.width)) continue;
            dx[(c * in.height + static_cast<std::size_t>(iy)) * in.width +
               static_cast<std::size_t>(ix)] += cols(r, oy * out.width + ox);
          }
        }
      }
}

}  // namespace detail

/// Activations of one forward pass: entry i is the input to layer i, the last entry
/// holds the logits. Tied to the network state that produced it.
struct ForwardCache {
  std::vector<Matrix> activations;
  const void* owner = nullptr;
  std::uint64_t version = 0;

  const Matrix& logits() const { return activations.back(); }
};

struct FlopsEstimate {
  std::uint64_t dense = 0;
  std::uint64_t sparse = 0;
};

class Network {
 public:
  Network() = default;

  /// Builds the layer chain and draws Kaiming-uniform weights, bound sqrt(6 / fan_in); biases zero.
  Network(TensorShape input_shape, const std::vector<LayerSpec>& specs, std::uint64_t seed)
      : input_shape_(input_shape), seed_(seed) {
    if (specs.empty()) throw ShapeError("Network: no layers");
    if (input_shape.size() == 0) throw ShapeError("Network: empty input shape");

    std::size_t last_weighted = specs.size();
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (has_weights(specs[i].kind)) last_weighted = i;

    Rng rng(derive_seed(seed, "init"));
    TensorShape shape = input_shape;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      Layer l;
      l.kind = specs[i].kind;
      l.id = kind_name(l.kind) + std::to_string(i);
      l.in_shape = shape;
      try {
        l.out_shape = detail::output_shape(l.kind, shape, i);
      } catch (const ShapeError& e) {
        const std::string prev = i == 0 ? "input" : "layer " + std::to_string(i - 1) + " (" +
                                                        kind_name(specs[i - 1].kind) + ")";
        throw ShapeError(std::string(e.what()) + " [incompatible pair: " + prev + " -> layer " +
                         std::to_string(i) + "]");
      }
      if (l.has_params()) {
        l.prunable = specs[i].prunable.value_or(i != last_weighted);
        std::size_t rows = 0, cols = 0;
        if (const auto* s = std::get_if<LinearSpec>(&l.kind)) {
          rows = s->out;
          cols = s->in;
        } else {
          const auto& c = std::get<Conv2dSpec>(l.kind);
          rows = c.out_channels;
          cols = c.in_channels * c.kernel_h * c.kernel_w;
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(cols));
        l.weights = Matrix(rows, cols);
        for (double& w : l.weights.data()) w = rng.uniform(-bound, bound);
        l.bias.assign(rows, 0.0);
        l.grad_weights = Matrix(rows, cols);
        l.grad_bias.assign(rows, 0.0);
      } else if (specs[i].prunable.value_or(false)) {
        throw ShapeError("layer " + std::to_string(i) + " (" + kind_name(l.kind) +
                         ") has no weights and cannot be prunable");
      }
      shape = l.out_shape;
      layers_.push_back(std::move(l));
    }
  }

  const TensorShape& input_shape() const noexcept { return input_shape_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_classes() const noexcept { return layers_.back().out_shape.size(); }

  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// Mutable access invalidates outstanding forward caches.
  std::vector<Layer>& mutable_layers() noexcept {
    ++version_;
    return layers_;
  }

  std::uint64_t version() const noexcept { return version_; }
  void touch() noexcept { ++version_; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_)
      out.push_back({l.kind, l.has_params() ? std::optional<bool>(l.prunable) : std::nullopt});
    return out;
  }

  Layer* find(std::string_view id) {
    for (auto& l : layers_)
      if (l.id == id) return &l;
    return nullptr;
  }
  const Layer* find(std::string_view id) const {
    for (const auto& l : layers_)
      if (l.id == id) return &l;
    return nullptr;
  }

  /// batch: one sample per row, laid out as the input shape in C, H, W order.
  ForwardCache forward(const Matrix& batch) const {
    if (batch.cols() != input_shape_.size()) {
      throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                       " features per sample, network expects " + input_shape_.to_string());
    }
    ForwardCache cache;
    cache.owner = this;
    cache.version = version_;
    cache.activations.reserve(layers_.size() + 1);
    cache.activations.push_back(batch);
    for (const auto& l : layers_) cache.activations.push_back(forward_layer(l, cache.activations.back()));
    return cache;
  }

  Matrix predict(const Matrix& batch) const { return forward(batch).logits(); }

  /// Fills grad_weights / grad_bias with d(mean cross-entropy)/d(param); returns the loss.
  double backward(const ForwardCache& cache, std::span<const std::size_t> labels) {
    if (cache.owner != this || cache.version != version_ ||
        cache.activations.size() != layers_.size() + 1)
      throw ValueError("backward: stale forward cache (network changed since forward)");
    const Matrix& logits = cache.logits();
    if (labels.size() != logits.rows())
      throw ShapeError("backward: " + std::to_string(labels.size()) + " labels for a batch of " +
                       std::to_string(logits.rows()));

    auto [loss, grad] = softmax_cross_entropy(logits, labels);
    for (std::size_t i = layers_.size(); i-- > 0;) {
      grad = backward_layer(layers_[i], cache.activations[i], cache.activations[i + 1], grad);
    }
    return loss;
  }

  /// Mean softmax cross-entropy and its gradient w.r.t. the logits.
  static std::pair<double, Matrix> softmax_cross_entropy(const Matrix& logits,
                                                         std::span<const std::size_t> labels) {
    const std::size_t n = logits.rows();
    const std::size_t c = logits.cols();
    Matrix grad(n, c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= c)
        throw ValueError("label " + std::to_string(labels[i]) + " out of range for " +
                         std::to_string(c) + " classes");
      const auto row = logits.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const double log_z = std::log(z) + mx;
      loss += log_z - row[labels[i]];
      for (std::size_t j = 0; j < c; ++j) grad(i, j) = std::exp(row[j] - log_z) / static_cast<double>(n);
      grad(i, labels[i]) -= 1.0 / static_cast<double>(n);
    }
    return {loss / static_cast<double>(n), std::move(grad)};
  }

  /// Attaches masks to every prunable layer and prunes the weights (W <- W (.) M).
  /// Non-prunable layers are left alone.
  void convert_to_masked(const MaskSet& masks) {
    for (const auto& l : layers_) {
      if (!l.prunable) continue;
      const Mask* m = find_mask(masks, l.id);
      if (!m) throw ShapeError("convert_to_masked: no mask for prunable layer " + l.id);
      if (!m->bits.same_shape(l.weights))
        throw ShapeError("convert_to_masked: mask for " + l.id + " is " + m->bits.shape_string() +
                         ", weights are " + l.weights.shape_string());
      for (double b : m->bits.data())
        if (b != 0.0 && b != 1.0) throw ValueError("convert_to_masked: mask for " + l.id + " is not binary");
    }
    for (auto& l : layers_) {
      if (!l.prunable) continue;
      l.mask = *find_mask(masks, l.id);
      apply_initial_pruning(l.weights, *l.mask);
    }
    touch();
  }

  bool is_masked() const {
    return std::any_of(layers_.begin(), layers_.end(), [](const Layer& l) { return l.mask.has_value(); });
  }

  MaskSet masks() const {
    MaskSet out;
    for (const auto& l : layers_)
      if (l.mask) out.push_back(*l.mask);
    return out;
  }

  /// 2 FLOPs per multiply-accumulate, batch of one. Sparse counts only unmasked weights.
  FlopsEstimate flops_estimate() const {
    FlopsEstimate f;
    for (const auto& l : layers_) {
      if (!l.has_params()) continue;
      const std::uint64_t positions = l.out_shape.height * l.out_shape.width;
      const std::uint64_t dense_macs = static_cast<std::uint64_t>(l.weights.size()) * positions;
      std::uint64_t kept = l.weights.size();
      if (l.mask) kept -= count_zeros(l.mask->bits);
      f.dense += 2 * dense_macs;
      f.sparse += 2 * kept * positions;
    }
    return f;
  }

 private:
  static Matrix forward_layer(const Layer& l, const Matrix& x) {
    const std::size_t n = x.rows();
    return std::visit(
        [&](const auto& s) -> Matrix {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, LinearSpec>) {
            Matrix y = matmul_nt(x, l.weights);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < s.out; ++j) y(i, j) += l.bias[j];
            return y;
          } else if constexpr (std::is_same_v<T, Conv2dSpec>) {
            Matrix y(n, l.out_shape.size());
            const std::size_t spatial = l.out_shape.height * l.out_shape.width;
            for (std::size_t i = 0; i < n; ++i) {
              const Matrix cols = detail::im2col(x.row(i), l.in_shape, s, l.out_shape);
              const Matrix out = matmul(l.weights, cols);
              auto yr = y.row(i);
              for (std::size_t oc = 0; oc < s.out_channels; ++oc)
                for (std::size_t q = 0; q < spatial; ++q) yr[oc * spatial + q] = out(oc, q) + l.bias[oc];
            }
            return y;
          } else if constexpr (std::is_same_v<T, ReluSpec>) {
            Matrix y = x;
            for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
            return y;
          } else {
            return x;
          }
        },
        l.kind);
  }

  static Matrix backward_layer(Layer& l, const Matrix& x, const Matrix& y, const Matrix& dy) {
    const std::size_t n = x.rows();
    return std::visit(
        [&](const auto& s) -> Matrix {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, LinearSpec>) {
            l.grad_weights = matmul_tn(dy, x);
            std::fill(l.grad_bias.begin(), l.grad_bias.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < s.out; ++j) l.grad_bias[j] += dy(i, j);
            return matmul(dy, l.weights);
          } else if constexpr (std::is_same_v<T, Conv2dSpec>) {
            l.grad_weights = Matrix(l.weights.rows(), l.weights.cols());
            std::fill(l.grad_bias.begin(), l.grad_bias.end(), 0.0);
            Matrix dx(n, l.in_shape.size());
            const std::size_t spatial = l.out_shape.height * l.out_shape.width;
            for (std::size_t i = 0; i < n; ++i) {
              const Matrix cols = detail::im2col(x.row(i), l.in_shape, s, l.out_shape);
              const Matrix dout(s.out_channels, spatial,
                                std::vector<double>(dy.row(i).begin(), dy.row(i).end()));
              const Matrix gw = matmul_nt(dout, cols);
              auto gwd = l.grad_weights.data();
              auto gwi = gw.data();
              for (std::size_t k = 0; k < gwd.size(); ++k) gwd[k] += gwi[k];
              for (std::size_t oc = 0; oc < s.out_channels; ++oc)
                for (std::size_t q = 0; q < spatial; ++q) l.grad_bias[oc] += dout(oc, q);
              const Matrix dcols = matmul_tn(l.weights, dout);
              detail::col2im_add(dcols, dx.row(i), l.in_shape, s, l.out_shape);
            }
            return dx;
          } else if constexpr (std::is_same_v<T, ReluSpec>) {
            Matrix dx = dy;
            auto yd = y.data();
            auto d = dx.data();
            for (std::size_t k = 0; k < d.size(); ++k)
              if (!(yd[k] > 0.0)) d[k] = 0.0;
            return dx;
          } else {
            return dy;
          }
        },
        l.kind);
  }

  TensorShape input_shape_;
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
  std::uint64_t version_ = 0;
};

inline Network init_network(TensorShape input_shape, const std::vector<LayerSpec>& specs,
                            std::uint64_t seed) {
  return Network(input_shape, specs, seed);
}

/// Zero counts over prunable layers, taken from the actual weight values.
inline SparsityReport weight_sparsity(const Network& net) {
  SparsityReport r;
  for (const auto& l : net.layers()) {
    if (!l.prunable) continue;
    LayerSparsity s{l.id, count_zeros(l.weights), l.weights.size(), 0.0, false};
    s.sparsity = static_cast<double>(s.zeros) / static_cast<double>(s.total);
    r.global_zeros += s.zeros;
    r.global_total += s.total;
    r.per_layer.push_back(std::move(s));
  }
  r.global_sparsity =
      r.global_total ? static_cast<double>(r.global_zeros) / static_cast<double>(r.global_total) : 0.0;
  return r;
}

/// Throws InvariantViolation naming the layer and offending indices when a masked
/// position holds a non-zero weight.
inline void verify_masked_nullity(const Network& net) {
  for (const auto& l : net.layers()) {
    if (!l.mask) continue;
    const auto w = l.weights.data();
    const auto m = l.mask->bits.data();
    std::string offenders;
    std::size_t count = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (m[k] == 0.0 && w[k] != 0.0) {
        if (count < 8) {
          offenders += (count ? ", " : "") + std::string("(") + std::to_string(k / l.weights.cols()) +
                       "," + std::to_string(k % l.weights.cols()) + ")";
        }
        ++count;
      }
    }
    if (count)
      throw InvariantViolation("masked weight non-zero in layer " + l.id + ": " + std::to_string(count) +
                               " position(s) " + offenders);
  }
}

}  // namespace ong
