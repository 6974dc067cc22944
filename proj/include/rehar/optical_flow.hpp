#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "rehar/error.hpp"
#include "rehar/image.hpp"
#include "rehar/video_clip.hpp"

namespace rehar {

// Per-pixel displacement (in pixels) from one frame to the next.
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> u;  // horizontal, row-major
  std::vector<double> v;  // vertical, row-major

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h) : width(w), height(h), u(w * h, 0.0), v(w * h, 0.0) {}
};

// Horn-Schunck settings. alpha is expressed on the 8-bit intensity scale
// (images are multiplied by 255 before the solve).
struct FlowParams {
  double alpha = 15.0;
  std::size_t iterations = 100;      // Jacobi sweeps per warp
  std::size_t pyramid_levels = 3;    // factor-2 coarse-to-fine levels
  std::size_t warps_per_level = 2;

  void validate() const;
};

// Coarse-to-fine Horn-Schunck with re-warping. Images must share dimensions
// and be at least 8x8. Deterministic for fixed inputs.
FlowField estimate_flow(const GrayImage& prev, const GrayImage& curr, const FlowParams& params = {});

// Middlebury color wheel: 55 RGB entries (RY 15, YG 6, GC 4, CB 11, BM 13, MR 6).
inline constexpr std::size_t kColorWheelSize = 55;
const std::array<std::array<int, 3>, kColorWheelSize>& color_wheel();

// Hue from atan2(-v, -u) on the wheel, saturation from magnitude / max_magnitude.
// Without max_magnitude the largest magnitude in the field is used.
RgbImage flow_to_color(const FlowField& flow, std::optional<double> max_magnitude = std::nullopt);

// Fractional wheel position in [0, 54] for a displacement (used by the renderer).
double color_wheel_position(double u, double v);

// .flo interchange format (little-endian): float 202021.25, int32 width,
// int32 height, then interleaved (u, v) float32 per pixel.
inline constexpr float kFloMagic = 202021.25f;

class FloError : public DataError {
 public:
  enum class Kind { BadMagic, Truncated, BadDimensions };
  FloError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

void write_flo(std::ostream& out, const FlowField& flow);
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(std::istream& in);
FlowField read_flo(const std::filesystem::path& path);

struct FramePair {
  RgbImage frame;  // frame t
  RgbImage flow;   // color-coded flow from frame t-1 to frame t
};

// Evenly spaced indices round(i * (n - 1) / (count - 1)), first and last kept.
std::vector<std::size_t> subsample_indices(std::size_t frame_count, std::size_t target_frames);

// Subsample, resize (bilinear), estimate flow between consecutive selected
// frames on the luma channel and render it. The first frame has no flow and
// is dropped, so the result holds target_frames - 1 pairs.
std::vector<FramePair> preprocess_clip(const VideoClip& clip, std::size_t target_frames,
                                       std::size_t target_height, std::size_t target_width,
                                       const FlowParams& params = {});

}  // namespace rehar
