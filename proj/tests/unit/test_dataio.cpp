#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <unistd.h>

#include "gcvamd/dataio.hpp"
#include "gcvamd/errors.hpp"

namespace gcvamd {
namespace {

namespace fs = std::filesystem;

Image8 solid(int h, int w, int c, std::uint8_t value) {
  return Image8{h, w, c, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * c), value)};
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gcvamd_dataio_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write_text(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }
  fs::path dir_;
};

TEST_F(TempDir, ManifestLabelMapping) {
  for (const char* name : {"a.png", "b.png", "c.png", "d.png"}) write_png(solid(4, 4, 1, 128), path(name));
  write_text("manifest.csv",
             "file,disease,neovascularization,drusen,severity\n"
             "a.png,AMD,Suspected,Yes,Late\n"
             "b.png,Normal,No,No,None\n"
             "c.png,DME,No,No,None\n"
             "d.png, amd ,yes,no,Early\n");
  const auto report = load_octdl(dir_.string(), path("manifest.csv"), DatasetMapping{});
  ASSERT_EQ(report.records.size(), 3u);
  EXPECT_EQ(report.skipped, 1u);
  EXPECT_TRUE(report.errors.empty());
  const auto& late = report.records[0];
  EXPECT_EQ(late.u0, 1);
  EXPECT_EQ(late.u1, 1);
  EXPECT_EQ(late.u2, 3);
  EXPECT_TRUE(late.amd);
  const auto& normal = report.records[1];
  EXPECT_EQ(normal.u0 + normal.u1 + normal.u2, 0);
  EXPECT_FALSE(normal.amd);
  EXPECT_EQ(report.records[2].u2, 1);
}

TEST_F(TempDir, MissingImagesAreReportedPerRow) {
  write_png(solid(4, 4, 1, 0), path("a.png"));
  write_text("manifest.csv", "file,disease,neovascularization,drusen,severity\na.png,AMD,No,Yes,Early\nz.png,AMD,No,No,Late\n");
  const auto report = load_octdl(dir_.string(), path("manifest.csv"), DatasetMapping{});
  EXPECT_EQ(report.records.size(), 1u);
  ASSERT_EQ(report.errors.size(), 1u);
  EXPECT_NE(report.errors[0].find("z.png"), std::string::npos);
}

TEST_F(TempDir, CustomColumnNames) {
  write_png(solid(4, 4, 1, 0), path("a.png"));
  write_text("m.csv", "img,dx,cnv,dr,grade\na.png,AMD,No,Yes,Intermediate\n");
  DatasetMapping mapping;
  mapping.file_col = "img";
  mapping.disease_col = "dx";
  mapping.neo_col = "cnv";
  mapping.drusen_col = "dr";
  mapping.severity_col = "grade";
  const auto report = load_octdl(dir_.string(), path("m.csv"), mapping);
  ASSERT_EQ(report.records.size(), 1u);
  EXPECT_EQ(report.records[0].u2, 2);
}

TEST_F(TempDir, MalformedManifestIsHardError) {
  write_text("bad.csv", "file,disease,neovascularization,drusen,severity\na.png,AMD\n");
  EXPECT_THROW(load_octdl(dir_.string(), path("bad.csv"), DatasetMapping{}), DecodeError);
  write_text("nocol.csv", "file,disease\na.png,AMD\n");
  EXPECT_THROW(load_octdl(dir_.string(), path("nocol.csv"), DatasetMapping{}), DecodeError);
  EXPECT_THROW(load_octdl(dir_.string(), path("absent.csv"), DatasetMapping{}), DecodeError);
}

TEST_F(TempDir, PngRoundTripAndBundle) {
  Image8 img{2, 3, 3, {}};
  for (int i = 0; i < 18; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 14));
  write_png(img, path("x.png"));
  const Image8 back = read_image(path("x.png"));
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.width, 3);
  write_text("junk.png", "not an image");
  EXPECT_THROW(read_image(path("junk.png")), DecodeError);
  std::vector<std::string> errors;
  const auto bundle = load_bundle({{path("x.png"), 0, 0, 0, "normal", false}, {path("junk.png"), 1, 0, 2, "amd", true}},
                                  nn::Shape3{4, 4, 3}, &errors);
  EXPECT_EQ(bundle.size(), 1);
  EXPECT_EQ(errors.size(), 1u);
}

TEST(Decode, JpegFixtures) {
  const std::string dir = GCVAMD_TEST_DATA_DIR;
  const Image8 white = read_image(dir + "/white_8x6.jpg");
  EXPECT_EQ(white.height, 6);
  EXPECT_EQ(white.width, 8);
  for (auto p : white.pixels) EXPECT_GE(p, 250);
  const Vector black = preprocess(read_image(dir + "/black_8x6.jpg"), {4, 4, 3});
  EXPECT_LE(black.maxCoeff(), 5.0 / 255.0);
}

TEST(Preprocess, SolidImages) {
  EXPECT_TRUE(preprocess(solid(7, 5, 1, 0), {4, 4, 3}).isZero(0.0));
  const Vector white = preprocess(solid(7, 5, 3, 255), {9, 9, 3});
  EXPECT_EQ(white.size(), 9 * 9 * 3);
  EXPECT_TRUE((white.array() == 1.0).all());
  EXPECT_TRUE((preprocess(solid(3, 3, 4, 255), {2, 2, 1}).array() == 1.0).all());
}

TEST(Preprocess, CheckerboardCornersAndBilinearWeights) {
  // 2x2 source [[0, 255], [255, 0]] resized to 4x4 with half-pixel centers:
  // output coordinate o maps to source (o + 0.5) / 2 - 0.5, clamped.
  Image8 board{2, 2, 1, {0, 255, 255, 0}};
  const Vector out = preprocess(board, {4, 4, 1});
  auto at = [&](int y, int x) { return out[y * 4 + x]; };
  EXPECT_DOUBLE_EQ(at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(at(0, 3), 1.0);
  EXPECT_DOUBLE_EQ(at(3, 0), 1.0);
  EXPECT_DOUBLE_EQ(at(3, 3), 0.0);
  // (1, 1) sits at source (0.25, 0.25): weights 0.5625, 0.1875, 0.1875, 0.0625.
  EXPECT_NEAR(at(1, 1), 0.1875 + 0.1875, 1e-12);
  // (0, 1) sits at source row 0 (clamped), column 0.25.
  EXPECT_NEAR(at(0, 1), 0.25, 1e-12);
}

TEST(Preprocess, GrayReplicatedToChannels) {
  Image8 g{1, 2, 1, {51, 204}};
  const Vector out = preprocess(g, {1, 2, 3});
  EXPECT_DOUBLE_EQ(out[0], 0.2);
  EXPECT_DOUBLE_EQ(out[1], 0.2);
  EXPECT_DOUBLE_EQ(out[2], 0.2);
  EXPECT_DOUBLE_EQ(out[3], 0.8);
}

std::vector<int> cohort(int amd, int normal) {
  // Normals spread through the list rather than grouped at one end.
  std::vector<int> flags(static_cast<std::size_t>(amd), 1);
  for (int i = 0; i < normal; ++i) {
    const auto pos = static_cast<std::size_t>(i) * flags.size() / static_cast<std::size_t>(normal);
    flags.insert(flags.begin() + static_cast<std::ptrdiff_t>(pos), 0);
  }
  return flags;
}

TEST(Splits, FullCohortSizes) {
  const auto flags = cohort(1231, 332);
  ASSERT_EQ(std::count(flags.begin(), flags.end(), 0), 332);
  Engine engine(5);
  const auto split = sample_splits(flags, engine);
  ASSERT_EQ(split.train.size(), 300u);
  ASSERT_EQ(split.test.size(), 364u);
  auto count = [&](const std::vector<Eigen::Index>& rows, int value) {
    return std::count_if(rows.begin(), rows.end(), [&](Eigen::Index r) { return flags[static_cast<std::size_t>(r)] == value; });
  };
  EXPECT_EQ(count(split.train, 1), 150);
  EXPECT_EQ(count(split.train, 0), 150);
  EXPECT_EQ(count(split.test, 0), 182);
  EXPECT_EQ(count(split.test, 1), 182);
  std::set<Eigen::Index> train(split.train.begin(), split.train.end());
  for (auto r : split.test) EXPECT_FALSE(train.count(r));
  // Every normal lands in one of the two splits.
  EXPECT_EQ(count(split.train, 0) + count(split.test, 0), 332);
}

TEST(Splits, DeterministicAndSeedDependent) {
  const auto flags = cohort(400, 200);
  Engine a(9), b(9), c(10);
  const auto sa = sample_splits(flags, a);
  const auto sb = sample_splits(flags, b);
  EXPECT_EQ(sa.train, sb.train);
  EXPECT_EQ(sa.test, sb.test);
  EXPECT_NE(sample_splits(flags, c).train, sa.train);
}

TEST(Splits, InsufficientRecordsNameDeficit) {
  Engine engine(1);
  try {
    sample_splits(cohort(180, 200), engine);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("short by 20"), std::string::npos);
  }
  EXPECT_THROW(sample_splits(cohort(1000, 150), engine), std::invalid_argument);
  EXPECT_NO_THROW(sample_splits(cohort(351, 201), engine));
}

TEST(Synthetic, ShapesRangesAndTruth) {
  SynthConfig config;
  const auto bundle = synth_generate(config);
  EXPECT_EQ(bundle.data.images.count(), 300);
  EXPECT_EQ(bundle.data.images.shape, (nn::Shape3{64, 64, 3}));
  EXPECT_EQ(bundle.data.labels.rows(), 300);
  EXPECT_EQ(bundle.data.labels.cols(), 3);
  EXPECT_GE(bundle.data.images.data.minCoeff(), 0.0);
  EXPECT_LE(bundle.data.images.data.maxCoeff(), 1.0);
  for (int i = 0; i < 300; ++i) {
    const auto u = bundle.data.labels.row(i);
    EXPECT_TRUE(u(0) == 0 || u(0) == 1);
    EXPECT_TRUE(u(1) == 0 || u(1) == 1);
    EXPECT_TRUE(u(2) >= 0 && u(2) <= 3);
  }
  ASSERT_TRUE(bundle.data.truth.has_value());
  EXPECT_EQ(*bundle.data.truth, default_truth_graph());
  EXPECT_LT(acyclicity_h(WeightedAdjacency((Matrix(3, 3) << 0, 0, 0.8, 0, 0, 0.6, 0, 0, 0).finished())), 1e-12);
}

TEST(Synthetic, FixedSeedIsBitIdentical) {
  SynthConfig config;
  config.n = 20;
  config.seed = 3;
  const auto a = synth_generate(config);
  const auto b = synth_generate(config);
  EXPECT_EQ(a.data.images.data, b.data.images.data);
  EXPECT_EQ(a.data.labels, b.data.labels);
  config.seed = 4;
  EXPECT_NE(synth_generate(config).data.images.data, a.data.images.data);
}

TEST(Synthetic, ChildFactorFollowsParents) {
  SynthConfig config;
  config.n = 2000;
  config.shape = {8, 8, 1};
  const auto bundle = synth_generate(config);
  const Vector s2 = bundle.factors.col(2);
  const Vector parents = 0.8 * bundle.factors.col(0) + 0.6 * bundle.factors.col(1);
  const Vector a = s2.array() - s2.mean();
  const Vector b = parents.array() - parents.mean();
  EXPECT_GT(a.dot(b) / (a.norm() * b.norm()), 0.9);
}

TEST(Synthetic, NormalsCarryZeroSeverity) {
  SynthConfig config;
  config.n = 500;
  config.shape = {8, 8, 1};
  const auto bundle = synth_generate(config);
  for (int i = 0; i < config.n; ++i) {
    const double s2n = std::clamp(bundle.factors(i, 2) / 1.4, 0.0, 1.0);
    if (bundle.data.labels(i, 0) == 0 && bundle.data.labels(i, 1) == 0 && s2n < 0.5) {
      EXPECT_EQ(bundle.data.labels(i, 2), 0);
    }
  }
}

TEST(Synthetic, BumpRegionBrightensWithFirstFactor) {
  const nn::Shape3 shape{64, 64, 1};
  Engine engine(12);
  std::normal_distribution<double> n;
  const Matrix speckle = Matrix::NullaryExpr(64, 64, [&] { return n(engine); });
  double previous = -1.0;
  for (double s0 = 0.0; s0 <= 1.0; s0 += 0.1) {
    const Vector img = render_synthetic({s0, 0.4, 0.5}, shape, speckle);
    double total = 0.0;
    for (int y = 0; y < 36; ++y)
      for (int x = 24; x < 40; ++x) total += img[y * 64 + x];
    EXPECT_GE(total, previous);
    previous = total;
  }
}

TEST_F(TempDir, BundleCacheRoundTrip) {
  SynthConfig config;
  config.n = 5;
  config.shape = {8, 8, 3};
  const auto bundle = synth_generate(config).data;
  save_bundle(bundle, path("b.gcvd"));
  const auto back = load_bundle_cache(path("b.gcvd"));
  EXPECT_EQ(back.images.data, bundle.images.data);
  EXPECT_EQ(back.images.shape, bundle.images.shape);
  EXPECT_EQ(back.labels, bundle.labels);
  EXPECT_EQ(back.diagnosis(), bundle.diagnosis());
}

}  // namespace
}  // namespace gcvamd
