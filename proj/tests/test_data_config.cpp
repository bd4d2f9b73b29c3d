#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ong/config.hpp"
#include "ong/data.hpp"
#include "test_util.hpp"

using namespace ong;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << contents;
  return p;
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

const char* kMinimal = R"(
[run]
seed = 3
[model]
input = 16
layer = linear 16 32
layer = relu
layer = linear 32 2
)";

}  // namespace

TEST(Blobs, DeterministicAndBalanced) {
  const Dataset a = make_blobs({100, 4, 3, 5});
  const Dataset b = make_blobs({100, 4, 3, 5});
  const Dataset c = make_blobs({100, 4, 3, 6});
  EXPECT_EQ(a.features, b.features);
  EXPECT_NE(a.features, c.features);
  EXPECT_EQ(a.num_classes, 3u);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0u), 34);
}

TEST(Split, SeededPartitionAndStandardization) {
  const DatasetSplit s = load_dataset(SyntheticBlobs{200, 5, 2, 1}, 9);
  EXPECT_EQ(s.train.size(), 160u);
  EXPECT_EQ(s.test.size(), 40u);
  for (std::size_t j = 0; j < 5; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < s.train.size(); ++i) mean += s.train.features(i, j);
    mean /= 160.0;
    for (std::size_t i = 0; i < s.train.size(); ++i) sq += std::pow(s.train.features(i, j) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 160.0, 1.0, 1e-12);
  }
  const DatasetSplit again = load_dataset(SyntheticBlobs{200, 5, 2, 1}, 9);
  EXPECT_EQ(s.test.features, again.test.features);
  EXPECT_THROW(load_dataset(SyntheticBlobs{200, 5, 3, 1}, 9, 2), FormatError);
}

TEST(Csv, LoadsLabelsAndFeatures) {
  const auto p = temp_file("ong_ok.csv", "f1,label,f2\n1.5,0,2\n-1,1,3.25\n");
  const Dataset d = load_csv({p.string(), 1, true});
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.features, (Matrix{{1.5, 2}, {-1, 3.25}}));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{0, 1}));
  fs::remove(p);
}

TEST(Csv, ErrorsNameRowAndColumn) {
  const auto p = temp_file("ong_bad.csv", "0,1.0,2.0\n1,abc,3.0\n");
  const std::string msg = error_of([&] { load_csv({p.string(), 0, false}); });
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column 1"), std::string::npos) << msg;
  const auto q = temp_file("ong_badlabel.csv", "0.5,1.0\n");
  EXPECT_THROW(load_csv({q.string(), 0, false}), FormatError);
  const auto r = temp_file("ong_ragged.csv", "0,1,2\n1,2\n");
  EXPECT_THROW(load_csv({r.string(), 0, false}), FormatError);
  EXPECT_THROW(load_csv({"/nonexistent/ong.csv", 0, false}), FormatError);
  fs::remove(p);
  fs::remove(q);
  fs::remove(r);
}

TEST(Idx, LoadsImagesAndRejectsBadMagic) {
  const auto img = temp_file("ong-images", be32(0x803) + be32(2) + be32(2) + be32(2) +
                                               std::string("\x00\xff\x00\xff\x10\x20\x30\x40", 8));
  const auto lab = temp_file("ong-labels", be32(0x801) + be32(2) + std::string("\x01\x00", 2));
  const Dataset d = load_idx({img.string(), lab.string()});
  EXPECT_EQ(d.sample_shape, (TensorShape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(d.features(0, 1), 1.0);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));

  const std::string msg = error_of([&] { load_idx({lab.string(), lab.string()}); });
  EXPECT_NE(msg.find("0x803"), std::string::npos) << msg;
  const auto trunc = temp_file("ong-trunc", be32(0x803) + be32(5) + be32(2) + be32(2) + "abc");
  EXPECT_THROW(load_idx({trunc.string(), lab.string()}), FormatError);
  fs::remove(img);
  fs::remove(lab);
  fs::remove(trunc);
}

TEST(Config, MinimalDefaults) {
  const RunConfig c = parse_run_config_string(kMinimal);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.model.size(), 3u);
  EXPECT_EQ(c.input_shape, flat_shape(16));
  EXPECT_EQ(c.scorer, ScorerKind::nmf);
  EXPECT_EQ(c.nmf.components, 6u);
  EXPECT_EQ(c.threshold.type, ThresholdType::STD);
  EXPECT_FALSE(c.gamma_search.has_value());
  EXPECT_TRUE(std::holds_alternative<SyntheticBlobs>(c.dataset));
}

TEST(Config, FullDocument) {
  const RunConfig c = parse_run_config_string(std::string(kMinimal) + R"(
[dataset]
type = csv
path = data.csv
label_column = 4
header = true
[scorer]
type = magnitude
[threshold]
type = MAD     # trailing comment
[gamma_search]
target = 0.9
tolerance = 0.001
[train]
epochs = 50
milestones = 10, 20
)");
  const auto& csv = std::get<CsvSource>(c.dataset);
  EXPECT_EQ(csv.label_column, 4u);
  EXPECT_TRUE(csv.header);
  EXPECT_EQ(c.scorer, ScorerKind::magnitude);
  EXPECT_EQ(c.threshold.type, ThresholdType::MAD);
  ASSERT_TRUE(c.gamma_search);
  EXPECT_DOUBLE_EQ(c.gamma_search->target_sparsity, 0.9);
  EXPECT_EQ(c.train.lr_milestones, (std::vector<std::size_t>{10, 20}));
}

TEST(Config, ConvModel) {
  const RunConfig c = parse_run_config_string(R"(
[model]
input = 1 8 8
layer = conv2d 1 4 3 3 padding=1
layer = relu
layer = flatten
layer = linear 256 10 prunable=false
)");
  EXPECT_EQ(c.input_shape, (TensorShape{1, 8, 8}));
  EXPECT_EQ(std::get<Conv2dSpec>(c.model[0].kind).padding, 1u);
  EXPECT_EQ(c.model[3].prunable, std::optional<bool>(false));
}

TEST(Config, ErrorsCarryLineNumbers) {
  const std::string base = kMinimal;
  EXPECT_NE(error_of([&] { parse_run_config_string(base + "[train]\nlr = fast\n"); }).find("line 10"),
            std::string::npos);
  EXPECT_NE(error_of([&] { parse_run_config_string(base + "[train]\nbogus = 1\n"); }).find("unknown key"),
            std::string::npos);
  EXPECT_NE(error_of([&] { parse_run_config_string(base + "[run]\nseed = 4\n"); }).find("duplicate"),
            std::string::npos);
  EXPECT_THROW(parse_run_config_string(base + "[extra]\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string(base + "[threshold]\ntype = IQR\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string(base + "[gamma_search]\ntarget = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string(base + "[gamma_search]\ntolerance = 0.01\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string(base + "[train]\nmomentum = 1.0\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string(base + "[scorer]\ncomponents = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string("[model]\ninput = 4\nlayer = linear 4 2\nlayer = linear 3 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string("[model]\nlayer = linear 4 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string("[model]\ninput = 4\nlayer = dense 4 2\n"), ConfigError);
  EXPECT_THROW(parse_run_config_string("seed = 1\n"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), ConfigError);
}
