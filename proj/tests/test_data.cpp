#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "rehar/data.hpp"

using namespace rehar;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.train_per_category = 3;
  c.test_per_category = 2;
  c.seed = 11;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rehar_data_" + name);
  fs::remove_all(p);
  return p;
}

std::array<double, 32> histogram(const RgbImage& img) {
  std::array<double, 32> h{};
  for (auto v : img.pixels) h[v / 8] += 1.0;
  for (double& v : h) v /= static_cast<double>(img.pixels.size());
  return h;
}

}  // namespace

TEST(Synth, ClipCountsPerSplit) {
  const auto c = small_config();
  const auto ds = generate_synthetic_dataset(c);
  EXPECT_EQ(ds.train.size(), c.num_categories() * 3);
  EXPECT_EQ(ds.test.size(), c.num_categories() * 2);
}

TEST(Synth, DefaultConfigMatchesDeskScale) {
  const SynthConfig c;
  EXPECT_EQ(c.num_categories(), 6u);
  EXPECT_EQ(c.num_categories() * c.train_per_category, 240u);
  EXPECT_EQ(c.num_categories() * c.test_per_category, 60u);
  EXPECT_EQ(c.frames_per_clip, 8u);
  EXPECT_EQ(c.frame_size, 32u);
}

TEST(Synth, SeedDeterminesDatasetExactly) {
  const auto a = generate_synthetic_dataset(small_config());
  const auto b = generate_synthetic_dataset(small_config());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].frames, b.train[i].frames);
  auto c = small_config();
  c.seed = 12;
  EXPECT_NE(generate_synthetic_dataset(c).train[0].frames, a.train[0].frames);
}

TEST(Synth, SplitsAreDisjointById) {
  const auto ds = generate_synthetic_dataset(small_config());
  std::set<std::string> ids;
  for (const auto& c : ds.train) ids.insert(c.id);
  for (const auto& c : ds.test) EXPECT_FALSE(ids.count(c.id)) << c.id;
  EXPECT_EQ(ids.size(), ds.train.size());
}

TEST(Synth, GeneratedClipsAreValidAcrossRandomConfigs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    SynthConfig c;
    c.num_motion_categories = rng() % 4;
    c.num_appearance_categories = 2 + rng() % 3;
    c.train_per_category = 1;
    c.test_per_category = 1;
    c.frame_size = 16 + rng() % 24;
    c.frames_per_clip = 4 + rng() % 6;
    c.noise_std = (rng() % 5) * 0.01;
    c.seed = rng();
    const auto ds = generate_synthetic_dataset(c);
    for (const auto* split : {&ds.train, &ds.test})
      for (const auto& clip : *split) {
        EXPECT_NO_THROW(validate_clip(clip));
        EXPECT_EQ(clip.frames.size(), c.frames_per_clip);
        EXPECT_EQ(clip.frames[0].width, c.frame_size);
        EXPECT_LT(clip.label, c.num_categories());
      }
  }
}

TEST(Synth, GeneratorIsPureWithoutNoise) {
  SynthConfig c = small_config();
  c.noise_std = 0.0;
  const ClipParams p = sample_clip_params(c, 1, 99);
  EXPECT_EQ(render_clip(c, p, "a").frames, render_clip(c, p, "b").frames);
}

TEST(Synth, MotionCategoriesShareSingleFrameHistograms) {
  // Same background, noise and start point; only the trajectory differs, so a
  // single frame carries no category information beyond the sprite position.
  SynthConfig c = small_config();
  ClipParams right = sample_clip_params(c, 0, 7);
  ClipParams down = right;
  down.category = 1;
  const auto a = render_clip(c, right, "r");
  const auto b = render_clip(c, down, "d");
  // Noise alone moves a 32-bin histogram by about sqrt(bins / pixels).
  const double bound = 3.0 * std::sqrt(32.0 / static_cast<double>(a.frames[0].pixels.size()));
  for (std::size_t t = 0; t < a.frames.size(); ++t) {
    const auto ha = histogram(a.frames[t]), hb = histogram(b.frames[t]);
    double l1 = 0.0;
    for (std::size_t k = 0; k < ha.size(); ++k) l1 += std::abs(ha[k] - hb[k]);
    EXPECT_LT(l1, bound) << "frame " << t;
  }
}

TEST(Synth, AppearanceColorsShareLuma) {
  SynthConfig c = small_config();
  c.noise_std = 0.0;
  std::vector<double> lumas;
  for (std::size_t cat = 0; cat < c.num_categories(); ++cat) {
    ClipParams p = sample_clip_params(c, cat, 3);
    const auto clip = render_clip(c, p, "x");
    // brightest-luma pixel is inside the sprite
    double best = 0.0;
    for (std::size_t i = 0; i < clip.frames[0].pixels.size(); i += 3) {
      const auto* px = &clip.frames[0].pixels[i];
      best = std::max(best, 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    lumas.push_back(best);
  }
  for (double l : lumas) EXPECT_NEAR(l, lumas[0], 2.0);
}

TEST(Synth, RejectsInvalidConfig) {
  SynthConfig c;
  c.num_motion_categories = 1;
  c.num_appearance_categories = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.frames_per_clip = 3;
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
}

TEST(ClipIo, WriteThenLoadRoundTrips) {
  const auto ds = generate_synthetic_dataset(small_config());
  const fs::path dir = scratch("roundtrip") / ds.train[4].id;
  write_clip(dir, ds.train[4]);
  const VideoClip back = load_clip_ppm_sequence(dir);
  EXPECT_EQ(back.frames, ds.train[4].frames);
  EXPECT_EQ(back.label, ds.train[4].label);
  EXPECT_EQ(back.id, ds.train[4].id);
}

TEST(ClipIo, OrdersFramesNumerically) {
  const fs::path dir = scratch("order");
  VideoClip clip;
  clip.id = "order";
  for (int t = 0; t < 24; ++t) clip.frames.push_back(RgbImage(4, 4, static_cast<std::uint8_t>(t * 10)));
  write_clip(dir, clip);
  EXPECT_TRUE(fs::exists(dir / "frame_000.ppm"));
  EXPECT_TRUE(fs::exists(dir / "frame_023.ppm"));
  const VideoClip back = load_clip_ppm_sequence(dir);
  ASSERT_EQ(back.frames.size(), 24u);
  for (int t = 0; t < 24; ++t) EXPECT_EQ(back.frames[t].pixels[0], t * 10);
}

TEST(ClipIo, DistinctErrors) {
  auto kind_of = [](const fs::path& dir) {
    try {
      load_clip_ppm_sequence(dir);
    } catch (const ClipError& e) {
      return e.kind();
    }
    return ClipError::Kind::Unreadable;
  };
  VideoClip one;
  one.frames = {RgbImage(4, 4), RgbImage(4, 4)};
  const fs::path single = scratch("single");
  write_clip(single, one);
  fs::remove(single / "frame_001.ppm");
  EXPECT_EQ(kind_of(single), ClipError::Kind::TooFewFrames);

  const fs::path mixed = scratch("mixed");
  write_clip(mixed, one);
  write_ppm(mixed / "frame_001.ppm", RgbImage(5, 4));
  EXPECT_EQ(kind_of(mixed), ClipError::Kind::MixedDimensions);

  const fs::path nolabel = scratch("nolabel");
  write_clip(nolabel, one);
  fs::remove(nolabel / "label.txt");
  EXPECT_EQ(kind_of(nolabel), ClipError::Kind::MissingLabel);
}

TEST(Manifest, RoundTripsRelativePaths) {
  const fs::path root = scratch("manifest");
  fs::create_directories(root);
  write_manifest(root / "m.tsv", {{root / "train" / "a", "train"}, {root / "test" / "b", "test"}});
  std::ifstream in(root / "m.tsv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "train/a\ttrain");
  const auto entries = read_manifest(root / "m.tsv");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[1].clip_dir, (root / "test" / "b").lexically_normal());
  EXPECT_EQ(entries[1].split, "test");
}

TEST(Manifest, RejectsMalformedLine) {
  const fs::path root = scratch("badmanifest");
  fs::create_directories(root);
  std::ofstream(root / "m.tsv") << "no-tab-here\n";
  EXPECT_THROW(read_manifest(root / "m.tsv"), DataError);
}
