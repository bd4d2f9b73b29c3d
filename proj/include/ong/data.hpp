#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ong/error.hpp"
#include "ong/matrix.hpp"
#include "ong/network.hpp"
#include "ong/random.hpp"

namespace ong {

struct Dataset {
  Matrix features;  // one sample per row
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  TensorShape sample_shape;

  std::size_t size() const noexcept { return labels.size(); }

  /// Rows `indices` gathered into a batch.
  Matrix gather(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), features.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = features.row(indices[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

struct SyntheticBlobs {
  std::size_t samples = 1000;
  std::size_t features = 16;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  double center_box = 5.0;  // centers uniform in [-box, box]^features
  double cluster_std = 1.0;
};

struct CsvSource {
  std::string path;
  std::size_t label_column = 0;
  bool header = false;
};

struct IdxSource {
  std::string images_path;
  std::string labels_path;
};

using DatasetSource = std::variant<SyntheticBlobs, CsvSource, IdxSource>;

inline Dataset make_blobs(const SyntheticBlobs& cfg) {
  if (cfg.samples == 0 || cfg.features == 0 || cfg.classes == 0)
    throw ValueError("synthetic-blobs: samples, features and classes must be positive");
  Rng rng(cfg.seed);
  Matrix centers(cfg.classes, cfg.features);
  for (double& v : centers.data()) v = rng.uniform(-cfg.center_box, cfg.center_box);

  Dataset d;
  d.features = Matrix(cfg.samples, cfg.features);
  d.labels.resize(cfg.samples);
  d.num_classes = cfg.classes;
  d.sample_shape = flat_shape(cfg.features);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const std::size_t c = i % cfg.classes;
    d.labels[i] = c;
    for (std::size_t j = 0; j < cfg.features; ++j)
      d.features(i, j) = centers(c, j) + cfg.cluster_std * rng.normal();
  }
  return d;
}

inline Dataset load_csv(const CsvSource& src) {
  std::ifstream in(src.path);
  if (!in) throw FormatError("csv: cannot open " + src.path);
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t cols = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (src.header && line_no == 1) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cols == 0) {
      cols = cells.size();
      if (src.label_column >= cols)
        throw FormatError("csv: label column " + std::to_string(src.label_column) + " but row " +
                          std::to_string(line_no) + " has " + std::to_string(cols) + " columns");
      if (cols < 2) throw FormatError("csv: need at least one feature column");
    } else if (cells.size() != cols) {
      throw FormatError("csv: row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " columns, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      while (used < cells[c].size() && std::isspace(static_cast<unsigned char>(cells[c][used]))) ++used;
      if (used == 0 || used != cells[c].size() || !std::isfinite(v))
        throw FormatError("csv: non-numeric cell '" + cells[c] + "' at row " + std::to_string(line_no) +
                          ", column " + std::to_string(c));
      if (c == src.label_column) {
        if (v < 0.0 || v != std::floor(v))
          throw FormatError("csv: label '" + cells[c] + "' at row " + std::to_string(line_no) +
                            " is not a non-negative integer");
        labels.push_back(static_cast<std::size_t>(v));
      } else {
        values.push_back(v);
      }
    }
  }
  if (labels.empty()) throw FormatError("csv: no data rows in " + src.path);
  Dataset d;
  d.features = Matrix(labels.size(), cols - 1, std::move(values));
  d.num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  d.labels = std::move(labels);
  d.sample_shape = flat_shape(cols - 1);
  return d;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("idx: truncated header in " + path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline std::vector<unsigned char> read_idx(const std::string& path, std::uint32_t expected_magic,
                                           std::vector<std::uint32_t>& dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open " + path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != expected_magic) {
    std::ostringstream os;
    os << "idx: bad magic number in " << path << ": expected 0x" << std::hex << expected_magic
       << ", found 0x" << magic;
    throw FormatError(os.str());
  }
  const std::size_t ndims = expected_magic & 0xff;
  std::size_t count = 1;
  dims.clear();
  for (std::size_t i = 0; i < ndims; ++i) {
    dims.push_back(read_be32(in, path));
    count *= dims.back();
  }
  std::vector<unsigned char> data(count);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count)))
    throw FormatError("idx: truncated payload in " + path);
  return data;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Unsigned-byte IDX pair (MNIST layout). Images become 1 x rows x cols samples.
inline Dataset load_idx(const IdxSource& src) {
  std::vector<std::uint32_t> idims, ldims;
  const auto pixels = detail::read_idx(src.images_path, kIdxImagesMagic, idims);
  const auto raw_labels = detail::read_idx(src.labels_path, kIdxLabelsMagic, ldims);
  if (idims[0] != ldims[0])
    throw FormatError("idx: " + std::to_string(idims[0]) + " images but " + std::to_string(ldims[0]) +
                      " labels");
  if (idims[0] == 0) throw FormatError("idx: empty dataset");
  Dataset d;
  const std::size_t per = std::size_t{idims[1]} * idims[2];
  d.features = Matrix(idims[0], per);
  auto f = d.features.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) f[i] = pixels[i] / 255.0;
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  d.num_classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  d.sample_shape = {1, idims[1], idims[2]};
  return d;
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> indices) {
  Dataset out;
  out.features = d.gather(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(d.labels[i]);
  out.num_classes = d.num_classes;
  out.sample_shape = d.sample_shape;
  return out;
}

/// Seeded shuffle, then the first 80% train and the rest test.
inline DatasetSplit split_dataset(const Dataset& d, std::uint64_t seed, double train_fraction = 0.8) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(d.size())));
  if (n_train == 0 || n_train == d.size())
    throw ValueError("split: dataset of " + std::to_string(d.size()) + " samples leaves an empty split");
  return {subset(d, std::span(idx).first(n_train)), subset(d, std::span(idx).subspan(n_train))};
}

/// Zero mean / unit variance per feature using train statistics only.
/// Constant features are centered but not scaled.
inline void standardize(DatasetSplit& s) {
  const std::size_t f = s.train.features.cols();
  std::vector<double> mean(f, 0.0), scale(f, 0.0);
  const auto n = static_cast<double>(s.train.size());
  for (std::size_t i = 0; i < s.train.size(); ++i)
    for (std::size_t j = 0; j < f; ++j) mean[j] += s.train.features(i, j);
  for (auto& m : mean) m /= n;
  for (std::size_t i = 0; i < s.train.size(); ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = s.train.features(i, j) - mean[j];
      scale[j] += d * d;
    }
  for (auto& v : scale) {
    v = std::sqrt(v / n);
    if (v == 0.0) v = 1.0;
  }
  for (Dataset* d : {&s.train, &s.test})
    for (std::size_t i = 0; i < d->size(); ++i)
      for (std::size_t j = 0; j < f; ++j) d->features(i, j) = (d->features(i, j) - mean[j]) / scale[j];
}

/// Loads, splits (seeded 80/20) and standardizes. `expected_classes`, when non-zero,
/// bounds the labels.
inline DatasetSplit load_dataset(const DatasetSource& source, std::uint64_t split_seed,
                                 std::size_t expected_classes = 0) {
  Dataset all = std::visit(
      [](const auto& s) -> Dataset {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SyntheticBlobs>) return make_blobs(s);
        else if constexpr (std::is_same_v<T, CsvSource>) return load_csv(s);
        else return load_idx(s);
      },
      source);
  if (expected_classes) {
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all.labels[i] >= expected_classes)
        throw FormatError("label " + std::to_string(all.labels[i]) + " of sample " + std::to_string(i) +
                          " out of range for " + std::to_string(expected_classes) + " classes");
    all.num_classes = expected_classes;
  }
  DatasetSplit split = split_dataset(all, split_seed);
  standardize(split);
  return split;
}

}  // namespace ong
