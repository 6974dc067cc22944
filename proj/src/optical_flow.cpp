#include "rehar/optical_flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>

namespace rehar {

void FlowParams::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("flow: alpha must be positive");
  if (iterations < 1) throw ConfigError("flow: iterations must be >= 1");
  if (pyramid_levels < 1) throw ConfigError("flow: pyramid_levels must be >= 1");
  if (warps_per_level < 1) throw ConfigError("flow: warps_per_level must be >= 1");
}

namespace {

constexpr std::size_t kMinLevelSize = 4;

struct Plane {
  std::size_t w = 0, h = 0;
  std::vector<double> px;

  Plane() = default;
  Plane(std::size_t width, std::size_t height) : w(width), h(height), px(width * height, 0.0) {}
  double at(std::ptrdiff_t x, std::ptrdiff_t y) const {
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    return px[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
};

Plane from_gray(const GrayImage& img) {
  Plane p(img.width, img.height);
  for (std::size_t i = 0; i < p.px.size(); ++i) p.px[i] = img.pixels[i] * 255.0;
  return p;
}

// Pixel-center aligned bilinear resampling; a factor-2 reduction averages 2x2 blocks.
Plane resize(const Plane& src, std::size_t w, std::size_t h) {
  GrayImage g(src.w, src.h);
  g.pixels = src.px;
  const GrayImage r = resize_bilinear(g, w, h);
  Plane out(w, h);
  out.px = r.pixels;
  return out;
}

double sample_bilinear(const Plane& p, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(p.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(p.h - 1));
  const auto x0 = static_cast<std::ptrdiff_t>(std::floor(x));
  const auto y0 = static_cast<std::ptrdiff_t>(std::floor(y));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = (1 - fx) * p.at(x0, y0) + fx * p.at(x0 + 1, y0);
  const double bot = (1 - fx) * p.at(x0, y0 + 1) + fx * p.at(x0 + 1, y0 + 1);
  return (1 - fy) * top + fy * bot;
}

// Horn-Schunck neighbourhood average (1/6 edge neighbours, 1/12 diagonals).
double local_average(const Plane& p, std::ptrdiff_t x, std::ptrdiff_t y) {
  return (p.at(x - 1, y) + p.at(x + 1, y) + p.at(x, y - 1) + p.at(x, y + 1)) / 6.0 +
         (p.at(x - 1, y - 1) + p.at(x + 1, y - 1) + p.at(x - 1, y + 1) + p.at(x + 1, y + 1)) / 12.0;
}

void refine_level(const Plane& i0, const Plane& i1, Plane& u, Plane& v, const FlowParams& params) {
  const std::size_t w = i0.w, h = i0.h;
  const double alpha2 = params.alpha * params.alpha;
  Plane ix(w, h), iy(w, h), it(w, h), warped(w, h);
  for (std::size_t warp = 0; warp < params.warps_per_level; ++warp) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t k = y * w + x;
        warped.px[k] = sample_bilinear(i1, static_cast<double>(x) + u.px[k],
                                       static_cast<double>(y) + v.px[k]);
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto sx = static_cast<std::ptrdiff_t>(x);
        const auto sy = static_cast<std::ptrdiff_t>(y);
        const std::size_t k = y * w + x;
        ix.px[k] = 0.25 * (i0.at(sx + 1, sy) - i0.at(sx - 1, sy) + warped.at(sx + 1, sy) - warped.at(sx - 1, sy));
        iy.px[k] = 0.25 * (i0.at(sx, sy + 1) - i0.at(sx, sy - 1) + warped.at(sx, sy + 1) - warped.at(sx, sy - 1));
        it.px[k] = warped.px[k] - i0.px[k];
      }
    const Plane u0 = u, v0 = v;
    Plane un(w, h), vn(w, h);
    for (std::size_t iter = 0; iter < params.iterations; ++iter) {
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto sx = static_cast<std::ptrdiff_t>(x);
          const auto sy = static_cast<std::ptrdiff_t>(y);
          const std::size_t k = y * w + x;
          const double ub = local_average(u, sx, sy);
          const double vb = local_average(v, sx, sy);
          const double gx = ix.px[k], gy = iy.px[k];
          const double r = gx * (ub - u0.px[k]) + gy * (vb - v0.px[k]) + it.px[k];
          const double t = r / (alpha2 + gx * gx + gy * gy);
          un.px[k] = ub - gx * t;
          vn.px[k] = vb - gy * t;
        }
      std::swap(u.px, un.px);
      std::swap(v.px, vn.px);
    }
  }
}

}  // namespace

FlowField estimate_flow(const GrayImage& prev, const GrayImage& curr, const FlowParams& params) {
  params.validate();
  if (prev.width != curr.width || prev.height != curr.height)
    throw ShapeError("estimate_flow: frame sizes differ (" + std::to_string(prev.width) + "x" +
                     std::to_string(prev.height) + " vs " + std::to_string(curr.width) + "x" +
                     std::to_string(curr.height) + ")");
  if (prev.width < 8 || prev.height < 8) throw ShapeError("estimate_flow: frames must be at least 8x8");

  std::vector<Plane> pyr0{from_gray(prev)}, pyr1{from_gray(curr)};
  while (pyr0.size() < params.pyramid_levels) {
    const std::size_t w = pyr0.back().w / 2, h = pyr0.back().h / 2;
    if (w < kMinLevelSize || h < kMinLevelSize) break;
    pyr0.push_back(resize(pyr0.back(), w, h));
    pyr1.push_back(resize(pyr1.back(), w, h));
  }

  Plane u(pyr0.back().w, pyr0.back().h), v(pyr0.back().w, pyr0.back().h);
  for (std::size_t level = pyr0.size(); level-- > 0;) {
    const Plane& i0 = pyr0[level];
    if (u.w != i0.w || u.h != i0.h) {
      const double sx = static_cast<double>(i0.w) / static_cast<double>(u.w);
      const double sy = static_cast<double>(i0.h) / static_cast<double>(u.h);
      u = resize(u, i0.w, i0.h);
      v = resize(v, i0.w, i0.h);
      for (double& x : u.px) x *= sx;
      for (double& y : v.px) y *= sy;
    }
    refine_level(i0, pyr1[level], u, v, params);
  }

  FlowField flow(prev.width, prev.height);
  flow.u = std::move(u.px);
  flow.v = std::move(v.px);
  return flow;
}

// ---------------------------------------------------------------------------
// Color coding

const std::array<std::array<int, 3>, kColorWheelSize>& color_wheel() {
  static const auto wheel = [] {
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::array<std::array<int, 3>, kColorWheelSize> w{};
    std::size_t k = 0;
    for (int i = 0; i < RY; ++i) w[k++] = {255, 255 * i / RY, 0};
    for (int i = 0; i < YG; ++i) w[k++] = {255 - 255 * i / YG, 255, 0};
    for (int i = 0; i < GC; ++i) w[k++] = {0, 255, 255 * i / GC};
    for (int i = 0; i < CB; ++i) w[k++] = {0, 255 - 255 * i / CB, 255};
    for (int i = 0; i < BM; ++i) w[k++] = {255 * i / BM, 0, 255};
    for (int i = 0; i < MR; ++i) w[k++] = {255, 0, 255 - 255 * i / MR};
    return w;
  }();
  return wheel;
}

double color_wheel_position(double u, double v) {
  const double a = std::atan2(-v, -u) / std::numbers::pi;
  return (a + 1.0) / 2.0 * static_cast<double>(kColorWheelSize - 1);
}

RgbImage flow_to_color(const FlowField& flow, std::optional<double> max_magnitude) {
  const std::size_t n = flow.width * flow.height;
  double maxrad = 0.0;
  if (max_magnitude) {
    maxrad = *max_magnitude;
  } else {
    for (std::size_t i = 0; i < n; ++i) maxrad = std::max(maxrad, std::hypot(flow.u[i], flow.v[i]));
  }
  if (!(maxrad > 0.0)) maxrad = 1.0;

  const auto& wheel = color_wheel();
  RgbImage out(flow.width, flow.height);
  for (std::size_t i = 0; i < n; ++i) {
    const double rad = std::hypot(flow.u[i], flow.v[i]) / maxrad;
    const double fk = color_wheel_position(flow.u[i], flow.v[i]);
    const auto k0 = static_cast<std::size_t>(fk);
    const std::size_t k1 = (k0 + 1) % kColorWheelSize;
    const double f = fk - static_cast<double>(k0);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double c0 = wheel[k0][ch] / 255.0;
      const double c1 = wheel[k1][ch] / 255.0;
      double col = (1 - f) * c0 + f * c1;
      if (rad <= 1.0)
        col = 1.0 - rad * (1.0 - col);
      else
        col *= 0.75;
      out.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::clamp(255.0 * col, 0.0, 255.0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// .flo I/O

namespace {

void put_u32(std::ostream& out, std::uint32_t x) {
  const char b[4] = {static_cast<char>(x & 0xff), static_cast<char>((x >> 8) & 0xff),
                     static_cast<char>((x >> 16) & 0xff), static_cast<char>((x >> 24) & 0xff)};
  out.write(b, 4);
}

bool get_u32(std::istream& in, std::uint32_t& x) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  x = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace

void write_flo(std::ostream& out, const FlowField& flow) {
  if (flow.width == 0 || flow.height == 0) throw FloError(FloError::Kind::BadDimensions, "flo: empty field");
  put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(flow.width)));
  put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(flow.height)));
  for (std::size_t i = 0; i < flow.width * flow.height; ++i) {
    if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i]))
      throw NumericError("flo: non-finite flow value");
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(flow.u[i])));
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(flow.v[i])));
  }
  if (!out) throw DataError("flo: write failed");
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_flo(out, flow);
}

FlowField read_flo(std::istream& in) {
  std::uint32_t magic = 0, w = 0, h = 0;
  if (!get_u32(in, magic)) throw FloError(FloError::Kind::Truncated, "flo: missing header");
  if (std::bit_cast<float>(magic) != kFloMagic)
    throw FloError(FloError::Kind::BadMagic, "flo: magic number mismatch");
  if (!get_u32(in, w) || !get_u32(in, h)) throw FloError(FloError::Kind::Truncated, "flo: missing dimensions");
  const auto sw = static_cast<std::int32_t>(w);
  const auto sh = static_cast<std::int32_t>(h);
  if (sw <= 0 || sh <= 0)
    throw FloError(FloError::Kind::BadDimensions,
                   "flo: nonpositive dimensions " + std::to_string(sw) + "x" + std::to_string(sh));
  FlowField flow(static_cast<std::size_t>(sw), static_cast<std::size_t>(sh));
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    std::uint32_t a = 0, b = 0;
    if (!get_u32(in, a) || !get_u32(in, b)) throw FloError(FloError::Kind::Truncated, "flo: truncated payload");
    flow.u[i] = std::bit_cast<float>(a);
    flow.v[i] = std::bit_cast<float>(b);
  }
  return flow;
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_flo(in);
}

// ---------------------------------------------------------------------------
// Clip preprocessing

std::vector<std::size_t> subsample_indices(std::size_t frame_count, std::size_t target_frames) {
  if (frame_count < 1 || target_frames < 2) throw ConfigError("subsample: need >= 1 frame and target >= 2");
  std::vector<std::size_t> idx(target_frames);
  const std::size_t span = frame_count - 1, steps = target_frames - 1;
  for (std::size_t i = 0; i < target_frames; ++i) idx[i] = (2 * i * span + steps) / (2 * steps);
  return idx;
}

std::vector<FramePair> preprocess_clip(const VideoClip& clip, std::size_t target_frames,
                                       std::size_t target_height, std::size_t target_width,
                                       const FlowParams& params) {
  validate_clip(clip);
  if (target_frames < 2) throw ConfigError("preprocess_clip: target_frames must be >= 2");
  const auto idx = subsample_indices(clip.frames.size(), target_frames);
  std::vector<RgbImage> frames;
  std::vector<GrayImage> gray;
  frames.reserve(idx.size());
  for (std::size_t i : idx) {
    frames.push_back(resize_bilinear(clip.frames[i], target_width, target_height));
    gray.push_back(to_gray(frames.back()));
  }
  std::vector<FramePair> pairs;
  pairs.reserve(idx.size() - 1);
  for (std::size_t t = 1; t < frames.size(); ++t)
    pairs.push_back({frames[t], flow_to_color(estimate_flow(gray[t - 1], gray[t], params))});
  return pairs;
}

}  // namespace rehar
