#include <gtest/gtest.h>

#include <filesystem>

#include "ong/checkpoint.hpp"
#include "test_util.hpp"

using namespace ong;
using ong::testing::random_batch;

namespace {

Network masked_cnn() {
  Network n({1, 6, 6}, {conv2d(1, 4, 3, 3, 1, 1), relu(), conv2d(4, 4, 3, 3, 2, 0), relu(), flatten(), linear(16, 3)},
            21);
  Rng rng(4);
  MaskSet masks;
  for (const auto& l : n.layers()) {
    if (!l.prunable) continue;
    Matrix m(l.weights.rows(), l.weights.cols());
    for (double& v : m.data()) v = rng.uniform01() < 0.6 ? 0.0 : 1.0;
    masks.push_back({l.id, m});
  }
  n.convert_to_masked(masks);
  return n;
}

std::string fix_checksum(std::string bytes) {
  const std::size_t header = 20;
  const std::string_view payload(bytes.data() + header, bytes.size() - header - 8);
  std::uint64_t h = fnv1a64(payload);
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<char>((h >> (8 * i)) & 0xff);
  return bytes;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Network n = masked_cnn();
  const std::string bytes = serialize_network(n);
  const Network back = deserialize_network(bytes);
  ASSERT_EQ(back.layers().size(), n.layers().size());
  for (std::size_t i = 0; i < n.layers().size(); ++i) {
    const auto& a = n.layers()[i];
    const auto& b = back.layers()[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.prunable, b.prunable);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.bias, b.bias);
    ASSERT_EQ(a.mask.has_value(), b.mask.has_value());
    if (a.mask) {
      EXPECT_EQ(a.mask->bits, b.mask->bits);
    }
  }
  auto [x, y] = random_batch(3, 36, 3, 1);
  EXPECT_EQ(n.predict(x), back.predict(x));
  EXPECT_EQ(serialize_network(back), bytes);
}

TEST(Checkpoint, FileRoundTripAndMagic) {
  const auto path = (std::filesystem::temp_directory_path() / "ong_ckpt_test.ongc").string();
  const Network n = masked_cnn();
  save_checkpoint(n, path);
  const std::string raw = detail::read_file(path);
  EXPECT_EQ(raw.substr(0, 4), "ONGC");
  const Network back = load_checkpoint(path);
  EXPECT_EQ(ong::testing::count_weight_zeros(back), ong::testing::count_weight_zeros(n));
  verify_masked_nullity(back);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruption) {
  const std::string bytes = serialize_network(masked_cnn());
  EXPECT_THROW(deserialize_network(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(deserialize_network(bytes.substr(0, 30)), FormatError);
  EXPECT_THROW(deserialize_network(""), FormatError);

  std::string flipped = bytes;
  flipped[100] ^= 0x01;
  EXPECT_THROW(deserialize_network(flipped), FormatError);

  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_network(magic), FormatError);

  std::string version = bytes;
  version[4] = 2;
  try {
    deserialize_network(version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  EXPECT_THROW(deserialize_network(bytes + "x"), FormatError);
  EXPECT_THROW(deserialize_tensors(bytes), FormatError);
}

TEST(Checkpoint, RejectsNonZeroMaskedWeight) {
  Network n = masked_cnn();
  const auto& m = *n.layers()[0].mask;
  std::size_t pos = 0;
  while (m.bits.data()[pos] != 0.0) ++pos;
  n.mutable_layers()[0].weights.data()[pos] = 0.25;
  const std::string bytes = fix_checksum(serialize_network(n));
  EXPECT_THROW(deserialize_network(bytes), InvariantViolation);
}

TEST(Checkpoint, UnmaskedNetworkRoundTrips) {
  const Network n(flat_shape(5), {linear(5, 4), relu(), linear(4, 2)}, 3);
  const Network back = deserialize_network(serialize_network(n));
  EXPECT_FALSE(back.is_masked());
  EXPECT_EQ(back.layers()[2].weights, n.layers()[2].weights);
  EXPECT_EQ(back.seed(), n.seed());
}

TEST(TensorBundle, RoundTrip) {
  std::vector<NamedTensor> t{{"linear0", ong::testing::random_matrix(3, 4, 1)}, {"conv2", Matrix(2, 9, 1.0)}};
  t[0].tensor(1, 1) = -0.0;
  const auto back = deserialize_tensors(serialize_tensors(t));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "linear0");
  EXPECT_EQ(back[1].name, "conv2");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < t[i].tensor.size(); ++k)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i].tensor.data()[k]),
                std::bit_cast<std::uint64_t>(t[i].tensor.data()[k]));
}
