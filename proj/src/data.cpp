#include "rehar/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace rehar {

namespace fs = std::filesystem;

namespace {

constexpr double kSpriteLuma = 0.72;
constexpr double kChroma = 0.12;
constexpr double kBackgroundBase = 0.35;
constexpr std::size_t kBackgroundWaves = 3;
constexpr double kSpeed = 1.5;         // pixels per frame for linear motions
constexpr double kCircleRadius = 3.0;  // circular motion, 0.5 rad per frame
constexpr double kJitter = 0.5;

const char* const kMotionNames[kMaxMotionCategories] = {"move_right", "move_down", "circle",
                                                        "move_left",  "move_up",   "move_diagonal"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sprite_radius(const SynthConfig& c) { return 0.16 * static_cast<double>(c.frame_size); }

struct Rgb {
  double r, g, b;
};

double luma(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

// Evenly spaced hues on a circle in the chroma plane, shifted back onto the
// sprite luma after the YUV conversion.
Rgb appearance_color(std::size_t index, std::size_t count) {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(index) / static_cast<double>(count);
  const double u = kChroma * std::cos(angle);
  const double v = kChroma * std::sin(angle);
  Rgb c{kSpriteLuma + 1.13983 * v, kSpriteLuma - 0.39465 * u - 0.58060 * v, kSpriteLuma + 2.03211 * u};
  const double shift = kSpriteLuma - luma(c);
  return {c.r + shift, c.g + shift, c.b + shift};
}

Rgb sprite_color(const SynthConfig& config, std::size_t category) {
  if (category < config.num_motion_categories) return {kSpriteLuma, kSpriteLuma, kSpriteLuma};
  return appearance_color(category - config.num_motion_categories, config.num_appearance_categories);
}

// Center of the sprite at frame t.
std::pair<double, double> sprite_center(const SynthConfig& config, const ClipParams& p, std::size_t t) {
  const double ft = static_cast<double>(t);
  if (p.category >= config.num_motion_categories)
    return {p.start_x + p.jitter_x.at(t), p.start_y + p.jitter_y.at(t)};
  switch (p.category) {
    case 0:
      return {p.start_x + kSpeed * ft, p.start_y};
    case 1:
      return {p.start_x, p.start_y + kSpeed * ft};
    case 2:
      return {p.start_x + kCircleRadius * std::cos(p.phase + 0.5 * ft),
              p.start_y + kCircleRadius * std::sin(p.phase + 0.5 * ft)};
    case 3:
      return {p.start_x - kSpeed * ft, p.start_y};
    case 4:
      return {p.start_x, p.start_y - kSpeed * ft};
    default:
      return {p.start_x + kSpeed * ft / std::numbers::sqrt2, p.start_y + kSpeed * ft / std::numbers::sqrt2};
  }
}

// Anti-aliased disk coverage on an integer grid centered at the origin,
// 4x4 supersampled.
struct Template {
  int half;
  std::vector<double> alpha;  // (2 half + 1)^2
};

Template disk_template(double radius) {
  Template t;
  t.half = static_cast<int>(std::ceil(radius)) + 1;
  const int n = 2 * t.half + 1;
  t.alpha.assign(static_cast<std::size_t>(n * n), 0.0);
  for (int y = -t.half; y <= t.half; ++y)
    for (int x = -t.half; x <= t.half; ++x) {
      int inside = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double px = x - 0.375 + 0.25 * sx;
          const double py = y - 0.375 + 0.25 * sy;
          inside += px * px + py * py <= radius * radius ? 1 : 0;
        }
      t.alpha[static_cast<std::size_t>((y + t.half) * n + (x + t.half))] = inside / 16.0;
    }
  return t;
}

// Bilinear splat of the template at a sub-pixel center.
std::vector<double> splat(const Template& t, double cx, double cy, std::size_t w, std::size_t h) {
  std::vector<double> a(w * h, 0.0);
  const double bx = std::floor(cx), by = std::floor(cy);
  const double fx = cx - bx, fy = cy - by;
  const int n = 2 * t.half + 1;
  const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const int dx[4] = {0, 1, 0, 1}, dy[4] = {0, 0, 1, 1};
  for (int ty = -t.half; ty <= t.half; ++ty)
    for (int tx = -t.half; tx <= t.half; ++tx) {
      const double v = t.alpha[static_cast<std::size_t>((ty + t.half) * n + (tx + t.half))];
      if (v == 0.0) continue;
      for (int k = 0; k < 4; ++k) {
        const long x = static_cast<long>(bx) + tx + dx[k];
        const long y = static_cast<long>(by) + ty + dy[k];
        if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) continue;
        a[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] += wts[k] * v;
      }
    }
  for (double& v : a) v = std::min(v, 1.0);
  return a;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string frame_name(std::size_t index, std::size_t count) {
  std::string digits = std::to_string(index);
  const std::size_t width = std::max<std::size_t>(3, std::to_string(count - 1).size());
  return "frame_" + std::string(width - std::min(width, digits.size()), '0') + digits + ".ppm";
}

}  // namespace

void SynthConfig::validate() const {
  if (num_categories() < 2) throw ConfigError("synth: at least 2 categories are required");
  if (num_motion_categories > kMaxMotionCategories)
    throw ConfigError("synth: at most " + std::to_string(kMaxMotionCategories) + " motion categories");
  if (num_appearance_categories > kMaxAppearanceCategories)
    throw ConfigError("synth: at most " + std::to_string(kMaxAppearanceCategories) + " appearance categories");
  if (frames_per_clip < 4) throw ConfigError("synth: frames_per_clip must be >= 4");
  if (frame_size < 16) throw ConfigError("synth: frame_size must be >= 16");
  if (train_per_category < 1 && test_per_category < 1) throw ConfigError("synth: no clips requested");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("synth: noise_std must be >= 0");
}

std::vector<std::string> category_names(const SynthConfig& config) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < config.num_motion_categories; ++i) names.emplace_back(kMotionNames[i]);
  for (std::size_t i = 0; i < config.num_appearance_categories; ++i)
    names.push_back("color_" + std::to_string(i));
  return names;
}

ClipParams sample_clip_params(const SynthConfig& config, std::size_t category, std::uint64_t seed) {
  config.validate();
  if (category >= config.num_categories()) throw ConfigError("synth: category out of range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double size = static_cast<double>(config.frame_size);
  const double margin = sprite_radius(config) + 1.0;
  const double travel = kSpeed * static_cast<double>(config.frames_per_clip - 1);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  ClipParams p;
  p.category = category;
  const double lo = margin, hi = size - 1.0 - margin;
  p.start_x = range(lo, hi);
  p.start_y = range(lo, hi);
  p.phase = range(0.0, 2.0 * std::numbers::pi);
  if (category < config.num_motion_categories) {
    switch (category) {
      case 0: p.start_x = range(lo, std::max(lo, hi - travel)); break;
      case 1: p.start_y = range(lo, std::max(lo, hi - travel)); break;
      case 2:
        p.start_x = range(lo + kCircleRadius, hi - kCircleRadius);
        p.start_y = range(lo + kCircleRadius, hi - kCircleRadius);
        break;
      case 3: p.start_x = range(std::min(hi, lo + travel), hi); break;
      case 4: p.start_y = range(std::min(hi, lo + travel), hi); break;
      default: {
        const double d = travel / std::numbers::sqrt2;
        p.start_x = range(lo, std::max(lo, hi - d));
        p.start_y = range(lo, std::max(lo, hi - d));
      }
    }
  } else {
    for (std::size_t t = 0; t < config.frames_per_clip; ++t) {
      p.jitter_x.push_back(range(-kJitter, kJitter));
      p.jitter_y.push_back(range(-kJitter, kJitter));
    }
  }
  // (kx, ky, phase, amplitude) per wave
  for (std::size_t k = 0; k < kBackgroundWaves; ++k) {
    p.background.push_back(range(0.1, 0.6));
    p.background.push_back(range(0.1, 0.6));
    p.background.push_back(range(0.0, 2.0 * std::numbers::pi));
    p.background.push_back(range(0.03, 0.07));
  }
  p.noise_seed = rng();
  return p;
}

VideoClip render_clip(const SynthConfig& config, const ClipParams& params, const std::string& id) {
  config.validate();
  if (params.category >= config.num_categories()) throw ConfigError("synth: category out of range");
  if (params.background.size() != 4 * kBackgroundWaves) throw ConfigError("synth: malformed background");
  const std::size_t n = config.frame_size;
  std::vector<double> bg(n * n, kBackgroundBase);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t k = 0; k < kBackgroundWaves; ++k) {
        const double* w = &params.background[4 * k];
        bg[y * n + x] += w[3] * std::sin(w[0] * static_cast<double>(x) + w[1] * static_cast<double>(y) + w[2]);
      }

  const Template tmpl = disk_template(sprite_radius(config));
  const Rgb color = sprite_color(config, params.category);
  std::mt19937_64 noise_rng(params.noise_seed);
  std::normal_distribution<double> noise(0.0, config.noise_std > 0.0 ? config.noise_std : 1.0);

  VideoClip clip;
  clip.label = params.category;
  clip.id = id;
  for (std::size_t t = 0; t < config.frames_per_clip; ++t) {
    const auto [cx, cy] = sprite_center(config, params, t);
    const auto alpha = splat(tmpl, cx, cy, n, n);
    RgbImage img(n, n);
    for (std::size_t i = 0; i < n * n; ++i) {
      const double a = alpha[i], b = bg[i];
      const double rgb[3] = {b + a * (color.r - b), b + a * (color.g - b), b + a * (color.b - b)};
      for (int ch = 0; ch < 3; ++ch) {
        const double eps = config.noise_std > 0.0 ? noise(noise_rng) : 0.0;
        img.pixels[i * 3 + static_cast<std::size_t>(ch)] = quantize(rgb[ch] + eps);
      }
    }
    clip.frames.push_back(std::move(img));
  }
  return clip;
}

SyntheticDataset generate_synthetic_dataset(const SynthConfig& config) {
  config.validate();
  SyntheticDataset ds;
  const std::uint64_t split_seeds[2] = {splitmix64(config.seed ^ 0x7472'6169'6eULL),
                                        splitmix64(config.seed ^ 0x7465'7374ULL)};
  for (int split = 0; split < 2; ++split) {
    const std::size_t per = split == 0 ? config.train_per_category : config.test_per_category;
    auto& out = split == 0 ? ds.train : ds.test;
    const std::string prefix = split == 0 ? "train_" : "test_";
    std::size_t index = 0;
    for (std::size_t c = 0; c < config.num_categories(); ++c)
      for (std::size_t k = 0; k < per; ++k, ++index) {
        const std::uint64_t clip_seed = splitmix64(split_seeds[split] + index);
        std::string num = std::to_string(index);
        const std::string id = prefix + std::string(5 - std::min<std::size_t>(5, num.size()), '0') + num;
        out.push_back(render_clip(config, sample_clip_params(config, c, clip_seed), id));
      }
  }
  return ds;
}

void validate_clip(const VideoClip& clip) {
  if (clip.frames.size() < 2)
    throw ClipError(ClipError::Kind::TooFewFrames,
                    "clip '" + clip.id + "' has " + std::to_string(clip.frames.size()) + " frame(s); need >= 2");
  const auto& f0 = clip.frames.front();
  if (f0.width == 0 || f0.height == 0) throw ClipError(ClipError::Kind::MixedDimensions, "clip '" + clip.id + "' has empty frames");
  for (std::size_t i = 1; i < clip.frames.size(); ++i)
    if (clip.frames[i].width != f0.width || clip.frames[i].height != f0.height)
      throw ClipError(ClipError::Kind::MixedDimensions,
                      "clip '" + clip.id + "': frame " + std::to_string(i) + " is " +
                          std::to_string(clip.frames[i].width) + "x" + std::to_string(clip.frames[i].height) +
                          ", frame 0 is " + std::to_string(f0.width) + "x" + std::to_string(f0.height));
  if (!(clip.fps > 0.0)) throw DataError("clip '" + clip.id + "': fps must be positive");
}

void write_clip(const fs::path& dir, const VideoClip& clip) {
  validate_clip(clip);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clip.frames.size(); ++i)
    write_ppm(dir / frame_name(i, clip.frames.size()), clip.frames[i]);
  std::ofstream label(dir / "label.txt");
  if (!label) throw DataError("cannot write " + (dir / "label.txt").string());
  label << clip.label << '\n';
}

VideoClip load_clip_ppm_sequence(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ClipError(ClipError::Kind::Unreadable, "not a directory: " + dir.string());
  std::vector<std::pair<std::size_t, fs::path>> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= 10 || name.rfind("frame_", 0) != 0 || entry.path().extension() != ".ppm") continue;
    const std::string digits = name.substr(6, name.size() - 10);
    std::size_t number = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), number);
    if (ec != std::errc{} || end != digits.data() + digits.size()) continue;
    frames.emplace_back(number, entry.path());
  }
  std::sort(frames.begin(), frames.end());

  VideoClip clip;
  clip.id = dir.filename().string();
  if (clip.id.empty()) clip.id = dir.parent_path().filename().string();
  if (frames.size() < 2)
    throw ClipError(ClipError::Kind::TooFewFrames, dir.string() + ": found " + std::to_string(frames.size()) +
                                                       " frame(s); need >= 2");
  std::ifstream label(dir / "label.txt");
  if (!label) throw ClipError(ClipError::Kind::MissingLabel, dir.string() + ": missing label.txt");
  std::string line;
  std::getline(label, line);
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  const auto [end, ec] = std::from_chars(line.data(), line.data() + line.size(), clip.label);
  if (line.empty() || ec != std::errc{} || end != line.data() + line.size())
    throw ClipError(ClipError::Kind::BadLabel, dir.string() + ": label.txt must hold one category index");

  for (const auto& [number, path] : frames) {
    try {
      clip.frames.push_back(read_ppm(path));
    } catch (const ClipError&) {
      throw;
    } catch (const std::exception& e) {
      throw ClipError(ClipError::Kind::Unreadable, path.string() + ": " + e.what());
    }
  }
  validate_clip(clip);
  return clip;
}

void write_manifest(const fs::path& manifest, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  const fs::path base = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
  for (const auto& e : entries) {
    if (e.split.empty() || e.split.find_first_of("\t\n") != std::string::npos)
      throw DataError("manifest: invalid split tag '" + e.split + "'");
    out << fs::proximate(e.clip_dir, base).generic_string() << '\t' << e.split << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot read manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": expected 'path<TAB>split'");
    fs::path p = line.substr(0, tab);
    if (p.is_relative()) p = base / p;
    entries.push_back({p.lexically_normal(), line.substr(tab + 1)});
  }
  if (entries.empty()) throw DataError("manifest " + manifest.string() + " lists no clips");
  return entries;
}

fs::path write_dataset(const fs::path& out_dir, const SyntheticDataset& dataset) {
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  for (const auto* split : {&dataset.train, &dataset.test}) {
    const std::string tag = split == &dataset.train ? "train" : "test";
    for (const auto& clip : *split) {
      const fs::path dir = out_dir / tag / clip.id;
      write_clip(dir, clip);
      entries.push_back({dir, tag});
    }
  }
  const fs::path manifest = out_dir / "manifest.tsv";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace rehar
