#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rehar/error.hpp"
#include "rehar/video_clip.hpp"

namespace rehar {

// Categories [0, num_motion) share one gray sprite and differ by trajectory.
// Categories [num_motion, num_motion + num_appearance) jitter in place and
// differ only by sprite color; every color has the same luma as the gray
// sprite, so the intensity-based flow cannot tell them apart.
struct SynthConfig {
  std::size_t num_motion_categories = 3;
  std::size_t num_appearance_categories = 3;
  std::size_t train_per_category = 40;
  std::size_t test_per_category = 10;
  std::size_t frame_size = 32;
  std::size_t frames_per_clip = 8;
  double noise_std = 0.02;
  std::uint64_t seed = 0;

  std::size_t num_categories() const { return num_motion_categories + num_appearance_categories; }
  void validate() const;
};

inline constexpr std::size_t kMaxMotionCategories = 6;
inline constexpr std::size_t kMaxAppearanceCategories = 8;

std::vector<std::string> category_names(const SynthConfig& config);

// Everything that varies between clips of one category. render_clip is a
// pure function of (config, params).
struct ClipParams {
  std::size_t category = 0;
  double start_x = 0.0;  // sprite center at frame 0 (or jitter anchor)
  double start_y = 0.0;
  double phase = 0.0;    // circular trajectories
  std::vector<double> jitter_x;  // per frame, appearance categories only
  std::vector<double> jitter_y;
  std::vector<double> background;  // texture coefficients, see sample_clip_params
  std::uint64_t noise_seed = 0;
};

ClipParams sample_clip_params(const SynthConfig& config, std::size_t category, std::uint64_t seed);
VideoClip render_clip(const SynthConfig& config, const ClipParams& params, const std::string& id);

struct SyntheticDataset {
  std::vector<VideoClip> train;
  std::vector<VideoClip> test;
};

SyntheticDataset generate_synthetic_dataset(const SynthConfig& config);

class ClipError : public DataError {
 public:
  enum class Kind { TooFewFrames, MixedDimensions, MissingLabel, BadLabel, Unreadable };

  ClipError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// `<dir>/frame_NNN.ppm` (three digits, more when needed) and `<dir>/label.txt`.
void write_clip(const std::filesystem::path& dir, const VideoClip& clip);
// Frames ordered by their numeric suffix; id is the directory name.
VideoClip load_clip_ppm_sequence(const std::filesystem::path& dir);

struct ManifestEntry {
  std::filesystem::path clip_dir;  // absolute or relative to the working directory
  std::string split;
};

// One `relative/path<TAB>split` line per clip; paths relative to the manifest.
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

// Writes every clip under out_dir/<split>/<id> plus out_dir/manifest.tsv.
std::filesystem::path write_dataset(const std::filesystem::path& out_dir, const SyntheticDataset& dataset);

}  // namespace rehar
