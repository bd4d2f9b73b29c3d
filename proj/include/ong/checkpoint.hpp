#pragma once

// ONGC binary container.
//
//   "ONGC"            4 bytes magic
//   version           u32
//   kind              u32  (1 = network checkpoint, 2 = named tensor bundle)
//   payload_size      u64
//   payload           payload_size bytes
//   checksum          u64  FNV-1a over the payload
//
// All integers are little-endian, reals are IEEE-754 binary64 little-endian.
// A tensor is: rows u64, cols u64, rows*cols reals (row-major).
// A string is: length u64, bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ong/error.hpp"
#include "ong/matrix.hpp"
#include "ong/network.hpp"

namespace ong {

inline constexpr char kCheckpointMagic[4] = {'O', 'N', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ContainerKind : std::uint32_t { network = 1, tensors = 2 };

struct NamedTensor {
  std::string name;
  Matrix tensor;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void reals(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void tensor(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    reals(m.data());
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(b[i])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(b[i])} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > remaining()) throw FormatError("checkpoint: truncated string");
    return std::string(take(n));
  }
  Matrix tensor() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > remaining() / 8 / cols) throw FormatError("checkpoint: truncated tensor");
    std::vector<double> data(rows * cols);
    for (double& v : data) v = f64();
    return Matrix(rows, cols, std::move(data));
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw FormatError("checkpoint: unexpected end of data");
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string wrap_container(ContainerKind kind, const std::string& payload) {
  ByteWriter w;
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(payload.size());
  std::string out(kCheckpointMagic, 4);
  out += w.bytes();
  out += payload;
  ByteWriter tail;
  tail.u64(fnv1a64(payload));
  out += tail.bytes();
  return out;
}

inline std::string unwrap_container(std::string_view bytes, ContainerKind expected) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: missing ONGC magic");
  ByteReader r(bytes.substr(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t kind = r.u32();
  if (kind != static_cast<std::uint32_t>(expected))
    throw FormatError("checkpoint: container kind " + std::to_string(kind) + ", expected " +
                      std::to_string(static_cast<std::uint32_t>(expected)));
  const std::uint64_t size = r.u64();
  constexpr std::size_t header = 4 + 4 + 4 + 8;
  if (bytes.size() < header || size > bytes.size() - header || bytes.size() - header - size < 8)
    throw FormatError("checkpoint: truncated (payload of " + std::to_string(size) + " bytes declared)");
  if (bytes.size() - header - size != 8) throw FormatError("checkpoint: trailing bytes after checksum");
  const std::string_view payload = bytes.substr(header, size);
  ByteReader tail(bytes.substr(header + size));
  if (tail.u64() != fnv1a64(payload)) throw FormatError("checkpoint: checksum mismatch");
  return std::string(payload);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw FormatError("cannot write " + path);
}

enum class KindTag : std::uint32_t { linear = 1, conv2d = 2, relu = 3, flatten = 4 };

}  // namespace detail

inline std::string serialize_network(const Network& net) {
  detail::ByteWriter w;
  w.u64(net.seed());
  w.u64(net.input_shape().channels);
  w.u64(net.input_shape().height);
  w.u64(net.input_shape().width);
  w.u64(net.layers().size());
  for (const auto& l : net.layers()) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, LinearSpec>) {
            w.u32(static_cast<std::uint32_t>(detail::KindTag::linear));
            w.u64(s.in);
            w.u64(s.out);
          } else if constexpr (std::is_same_v<T, Conv2dSpec>) {
            w.u32(static_cast<std::uint32_t>(detail::KindTag::conv2d));
            for (auto v : {s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.stride, s.padding}) w.u64(v);
          } else if constexpr (std::is_same_v<T, ReluSpec>) {
            w.u32(static_cast<std::uint32_t>(detail::KindTag::relu));
          } else {
            w.u32(static_cast<std::uint32_t>(detail::KindTag::flatten));
          }
        },
        l.kind);
    w.u8(l.prunable ? 1 : 0);
    w.str(l.id);
    if (!l.has_params()) continue;
    w.tensor(l.weights);
    w.u64(l.bias.size());
    w.reals(l.bias);
    w.u8(l.mask ? 1 : 0);
    if (l.mask) w.tensor(l.mask->bits);
  }
  return detail::wrap_container(ContainerKind::network, w.bytes());
}

/// Rebuilds a network from checkpoint bytes. Rejects anything malformed without
/// returning a partial network, including masked weights that are not zero.
inline Network deserialize_network(std::string_view bytes) {
  const std::string payload = detail::unwrap_container(bytes, ContainerKind::network);
  detail::ByteReader r(payload);
  const std::uint64_t seed = r.u64();
  TensorShape input;
  input.channels = r.u64();
  input.height = r.u64();
  input.width = r.u64();
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw FormatError("checkpoint: implausible layer count");

  struct Stored {
    std::string id;
    Matrix weights;
    std::vector<double> bias;
    std::optional<Matrix> mask;
  };
  std::vector<LayerSpec> specs;
  std::vector<Stored> stored;
  for (std::uint64_t i = 0; i < n; ++i) {
    LayerSpec spec;
    switch (static_cast<detail::KindTag>(r.u32())) {
      case detail::KindTag::linear: {
        LinearSpec s;
        s.in = r.u64();
        s.out = r.u64();
        spec.kind = s;
        break;
      }
      case detail::KindTag::conv2d: {
        Conv2dSpec s;
        s.in_channels = r.u64();
        s.out_channels = r.u64();
        s.kernel_h = r.u64();
        s.kernel_w = r.u64();
        s.stride = r.u64();
        s.padding = r.u64();
        spec.kind = s;
        break;
      }
      case detail::KindTag::relu:
        spec.kind = ReluSpec{};
        break;
      case detail::KindTag::flatten:
        spec.kind = FlattenSpec{};
        break;
      default:
        throw FormatError("checkpoint: unknown layer kind in layer " + std::to_string(i));
    }
    const bool prunable = r.u8() != 0;
    Stored s;
    s.id = r.str();
    if (has_weights(spec.kind)) {
      spec.prunable = prunable;
      s.weights = r.tensor();
      const std::uint64_t nb = r.u64();
      if (nb > r.remaining() / 8) throw FormatError("checkpoint: truncated bias");
      s.bias.resize(nb);
      for (double& b : s.bias) b = r.f64();
      if (r.u8()) s.mask = r.tensor();
    }
    specs.push_back(std::move(spec));
    stored.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: unexpected bytes after last layer");

  Network net;
  try {
    net = Network(input, specs, seed);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: invalid layer chain: ") + e.what());
  }
  auto& layers = net.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    l.id = stored[i].id;
    if (!l.has_params()) continue;
    if (!stored[i].weights.same_shape(l.weights) || stored[i].bias.size() != l.bias.size())
      throw FormatError("checkpoint: parameter shapes of " + l.id + " do not match its layer spec");
    l.weights = std::move(stored[i].weights);
    l.bias = std::move(stored[i].bias);
    if (stored[i].mask) {
      if (!stored[i].mask->same_shape(l.weights))
        throw FormatError("checkpoint: mask shape of " + l.id + " does not match its weights");
      l.mask = Mask{l.id, std::move(*stored[i].mask)};
    }
  }
  verify_masked_nullity(net);
  return net;
}

inline void save_checkpoint(const Network& net, const std::string& path) {
  detail::write_file(path, serialize_network(net));
}

inline Network load_checkpoint(const std::string& path) {
  return deserialize_network(detail::read_file(path));
}

inline std::string serialize_tensors(const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  w.u64(tensors.size());
  for (const auto& t : tensors) {
    w.str(t.name);
    w.tensor(t.tensor);
  }
  return detail::wrap_container(ContainerKind::tensors, w.bytes());
}

inline std::vector<NamedTensor> deserialize_tensors(std::string_view bytes) {
  const std::string payload = detail::unwrap_container(bytes, ContainerKind::tensors);
  detail::ByteReader r(payload);
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw FormatError("tensor bundle: implausible tensor count");
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    t.tensor = r.tensor();
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("tensor bundle: unexpected trailing bytes");
  return out;
}

inline void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& path) {
  detail::write_file(path, serialize_tensors(tensors));
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
  return deserialize_tensors(detail::read_file(path));
}

}  // namespace ong
