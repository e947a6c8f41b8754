#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sapl/corpus.hpp"
#include "sapl/evalkit.hpp"

using namespace sapl;
using namespace sapl::corpus;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("sapl_test_corpus_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RgbImage scene(int h, int w, std::uint64_t seed) { return synthetic_scene(h, w, SceneStyle{}, seed); }

}  // namespace

TEST(Preprocess, LandscapeResizeAndPad) {
  const auto p = preprocess(RgbImage(768, 1024, 3, 100));
  EXPECT_EQ(p.pixels.height(), 512);
  EXPECT_EQ(p.pixels.width(), 512);
  EXPECT_EQ(p.valid_region, (Rect{0, 0, 384, 512}));
  EXPECT_DOUBLE_EQ(p.scale_factor, 0.5);
}

TEST(Preprocess, PortraitWide) {
  const auto p = preprocess(RgbImage(100, 400, 3, 9));
  EXPECT_EQ(p.valid_region, (Rect{0, 0, 128, 512}));
}

TEST(Preprocess, SquareIsUnchanged) {
  const RgbImage img = scene(512, 512, 3);
  const auto p = preprocess(img);
  EXPECT_EQ(p.valid_region, (Rect{0, 0, 512, 512}));
  EXPECT_EQ(p.frame, img);
  for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(p.pixels(10, 20, c), float(img(10, 20, c)) / 255.0f);
}

TEST(Preprocess, IdempotentOn512) {
  const auto a = preprocess(scene(512, 512, 4));
  const auto b = preprocess(a.frame);
  EXPECT_EQ(a.frame, b.frame);
  EXPECT_EQ(a.valid_region, b.valid_region);
}

TEST(Preprocess, PaddingIsZeroAndShapeAlways512) {
  for (auto [h, w] : {std::pair{37, 200}, {300, 41}, {513, 700}, {1, 1}, {64, 64}}) {
    const auto p = preprocess(RgbImage(h, w, 3, 200));
    EXPECT_EQ(p.frame.height(), 512);
    EXPECT_EQ(p.frame.width(), 512);
    EXPECT_EQ(std::max(p.valid_region.height, p.valid_region.width), 512);
    if (p.valid_region.height < 512) EXPECT_EQ(p.frame(511, 0, 0), 0);
    if (p.valid_region.width < 512) EXPECT_EQ(p.frame(0, 511, 0), 0);
  }
}

TEST(Splice, DeterministicAndBounded) {
  const RgbImage base = scene(96, 96, 1), donor = scene(96, 96, 2);
  const Sample a = synthesize_splice(base, donor, 7);
  const Sample b = synthesize_splice(base, donor, 7);
  EXPECT_EQ(a.image, b.image);
  ASSERT_TRUE(a.mask && b.mask);
  EXPECT_EQ(*a.mask, *b.mask);
  EXPECT_EQ(a.label, 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Sample s = synthesize_splice(base, donor, seed);
    std::size_t area = 0;
    for (auto v : s.mask->data()) area += v != 0;
    EXPECT_GT(area, 0u);
    EXPECT_LT(area, s.mask->pixel_count());
  }
}

TEST(Splice, RejectsSmallImages) {
  EXPECT_THROW(synthesize_splice(scene(32, 96, 1), scene(96, 96, 2), 0), std::invalid_argument);
}

TEST(Splice, BoundaryStatisticsExceedAuthenticEdges) {
  std::vector<Sample> samples;
  for (std::uint64_t s = 0; s < 100; ++s) {
    samples.push_back(synthesize_splice(synthetic_scene(128, 128, SceneStyle{}, 1000 + s),
                                        synthetic_scene(128, 128, SceneStyle{12.0, 0.0, 3, 6}, 5000 + s), s));
  }
  evalkit::RegionOptions o;
  o.band_radius = 1;
  const auto stats = evalkit::region_stats(samples, o);
  for (auto k : {evalkit::Statistic::gradient, evalkit::Statistic::local_variance}) {
    EXPECT_GT(stats.at(evalkit::Region::manipulated_edge, k).mean, stats.at(evalkit::Region::authentic_edge, k).mean);
  }
}

TEST(Perturb, JpegSizeDecreasesWithQuality) {
  const RgbImage img = scene(128, 128, 5);
  EXPECT_LT(jpeg_encoded_size(img, 50), jpeg_encoded_size(img, 100));
}

TEST(Perturb, IdentityLevels) {
  Sample s{scene(64, 64, 6), 0, std::nullopt, "x"};
  EXPECT_EQ(perturb(s, {PerturbationKind::gaussian_noise, 0.0, 3}).image, s.image);
  EXPECT_EQ(perturb(s, {PerturbationKind::jpeg, 100.0, 3}).image, s.image);
  EXPECT_EQ(perturb(s, {PerturbationKind::gaussian_blur, 0.0, 3}).image, s.image);
}

TEST(Perturb, BlurFixedPointOnConstant) {
  Sample s{RgbImage(40, 40, 3, 123), 0, std::nullopt, "c"};
  EXPECT_EQ(perturb(s, {PerturbationKind::gaussian_blur, 2.0, 0}).image, s.image);
}

TEST(Perturb, NeverTouchesLabelOrMask) {
  const Sample s = synthesize_splice(scene(80, 80, 1), scene(80, 80, 2), 3);
  for (auto kind : {PerturbationKind::jpeg, PerturbationKind::gaussian_noise, PerturbationKind::gaussian_blur}) {
    for (const auto& spec : default_sweep(kind, 11)) {
      const Sample p = perturb(s, spec);
      EXPECT_EQ(p.label, s.label);
      ASSERT_TRUE(p.mask);
      EXPECT_EQ(p.mask->data(), s.mask->data());
    }
  }
}

TEST(Perturb, SeedDeterminesNoise) {
  Sample s{scene(64, 64, 6), 0, std::nullopt, "x"};
  const auto a = perturb(s, {PerturbationKind::gaussian_noise, 0.05, 9});
  const auto b = perturb(s, {PerturbationKind::gaussian_noise, 0.05, 9});
  const auto c = perturb(s, {PerturbationKind::gaussian_noise, 0.05, 10});
  EXPECT_EQ(a.image, b.image);
  EXPECT_NE(a.image, c.image);
}

TEST(Perturb, RejectsOutOfRangeLevels) {
  Sample s{scene(64, 64, 6), 0, std::nullopt, "x"};
  EXPECT_THROW(perturb(s, {PerturbationKind::jpeg, 20, 0}), std::invalid_argument);
  EXPECT_THROW(perturb(s, {PerturbationKind::gaussian_noise, 0.3, 0}), std::invalid_argument);
  EXPECT_THROW(perturb(s, {PerturbationKind::gaussian_blur, 10, 0}), std::invalid_argument);
  EXPECT_THROW(perturb(s, {PerturbationKind::gaussian_blur, 1.5, 0}), std::invalid_argument);
}

TEST(Dataset, CountsAndMasks) {
  const fs::path root = fresh_dir("counts");
  std::vector<Sample> samples;
  for (int i = 0; i < 2; ++i) samples.push_back({scene(64, 64, i), 0, std::nullopt, "au" + std::to_string(i)});
  for (int i = 0; i < 3; ++i) {
    Sample s = synthesize_splice(scene(64, 64, 10 + i), scene(64, 64, 20 + i), i);
    s.id = "tp" + std::to_string(i);
    samples.push_back(s);
  }
  write_dataset(root, samples);
  const Dataset d = load_dataset(root, Layout::synthetic);
  ASSERT_EQ(d.samples.size(), 5u);
  int masks = 0;
  for (const auto& s : d.samples) masks += s.mask.has_value();
  EXPECT_EQ(masks, 3);
}

TEST(Dataset, MissingMaskWarnsAndKeeps) {
  const fs::path root = fresh_dir("missing");
  Sample s = synthesize_splice(scene(64, 64, 1), scene(64, 64, 2), 0);
  s.id = "tp";
  write_dataset(root, {s, Sample{scene(64, 64, 3), 0, std::nullopt, "au"}});
  fs::remove(root / "masks" / "tp_gt.png");
  const Dataset d = load_dataset(root, Layout::synthetic);
  EXPECT_EQ(d.samples.size(), 2u);
  EXPECT_FALSE(d.warnings.empty());
}

TEST(Dataset, MismatchedMaskNamesBothFiles) {
  const fs::path root = fresh_dir("mismatch");
  Sample s = synthesize_splice(scene(64, 64, 1), scene(64, 64, 2), 0);
  s.id = "tp";
  write_dataset(root, {s});
  write_gray_png(root / "masks" / "tp_gt.png", Mask(10, 10));
  try {
    load_dataset(root, Layout::synthetic);
    FAIL();
  } catch (const DatasetError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("tp_gt.png"), std::string::npos);
    EXPECT_NE(msg.find("tp.png"), std::string::npos);
  }
}

TEST(Dataset, EmptyDirectoryFails) {
  const fs::path root = fresh_dir("empty");
  EXPECT_THROW(load_dataset(root, Layout::casia), DatasetError);
}

TEST(Dataset, UnreadableFileNamed) {
  const fs::path root = fresh_dir("unreadable");
  fs::create_directories(root / "authentic");
  std::ofstream(root / "authentic" / "broken.png") << "not an image";
  try {
    load_dataset(root, Layout::synthetic);
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
}

TEST(Dataset, Nist16IsManipulatedOnly) {
  const fs::path root = fresh_dir("nist");
  fs::create_directories(root / "probe");
  fs::create_directories(root / "mask");
  for (int i = 0; i < 3; ++i) {
    Sample s = synthesize_splice(scene(64, 64, i), scene(64, 64, 9 + i), i);
    write_rgb_png(root / "probe" / ("p" + std::to_string(i) + ".png"), s.image);
    write_gray_png(root / "mask" / ("p" + std::to_string(i) + "_gt.png"), *s.mask);
  }
  const Dataset d = load_dataset(root, Layout::nist16);
  ASSERT_EQ(d.samples.size(), 3u);
  for (const auto& s : d.samples) EXPECT_EQ(s.label, 1);
}

TEST(Dataset, CasiaNativeNames) {
  const fs::path root = fresh_dir("casia");
  fs::create_directories(root / "Au");
  fs::create_directories(root / "Tp");
  fs::create_directories(root / "Gt");
  write_rgb_png(root / "Au" / "a.png", scene(64, 64, 1));
  Sample s = synthesize_splice(scene(64, 64, 2), scene(64, 64, 3), 1);
  write_rgb_png(root / "Tp" / "t.png", s.image);
  write_gray_png(root / "Gt" / "t_gt.png", *s.mask);
  const Dataset d = load_dataset(root, Layout::casia);
  EXPECT_EQ(d.samples.size(), 2u);
}

TEST(Sample, ValidateRejectsMismatch) {
  Sample s{scene(64, 64, 1), 1, Mask(10, 10), "bad"};
  EXPECT_THROW(validate(s), std::invalid_argument);
  Sample a{scene(64, 64, 1), 0, Mask(64, 64, 1, 255), "au"};
  EXPECT_THROW(validate(a), std::invalid_argument);
}

TEST(Synthetic, CorpusComposition) {
  SyntheticCorpusOptions o;
  o.splices = 5;
  o.authentic = 4;
  o.size = 64;
  const auto c = synthetic_corpus(o);
  ASSERT_EQ(c.size(), 9u);
  EXPECT_EQ(c[0].label, 1);
  EXPECT_EQ(c[8].label, 0);
  EXPECT_EQ(synthetic_corpus(o)[3].image, c[3].image);
}
