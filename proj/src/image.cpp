#include "rehar/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "rehar/error.hpp"

namespace rehar {

GrayImage to_gray(const RgbImage& image) {
  GrayImage out(image.width, image.height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::uint8_t* p = &image.pixels[i * 3];
    out.pixels[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
  }
  return out;
}

namespace {

// Pixel-center aligned sampling coordinates with edge clamping.
struct Tap {
  std::size_t i0, i1;
  double frac;
};

Tap source_tap(std::size_t dst, std::size_t dst_size, std::size_t src_size) {
  const double scale = static_cast<double>(src_size) / static_cast<double>(dst_size);
  double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_size - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(s));
  const std::size_t i1 = std::min(i0 + 1, src_size - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

void require_positive(std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ShapeError("resize: target size must be positive");
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height) {
  require_positive(width, height);
  if (image.width == width && image.height == height) return image;
  RgbImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const Tap ty = source_tap(y, height, image.height);
    for (std::size_t x = 0; x < width; ++x) {
      const Tap tx = source_tap(x, width, image.width);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double top = (1 - tx.frac) * image.pixel(tx.i0, ty.i0)[ch] + tx.frac * image.pixel(tx.i1, ty.i0)[ch];
        const double bot = (1 - tx.frac) * image.pixel(tx.i0, ty.i1)[ch] + tx.frac * image.pixel(tx.i1, ty.i1)[ch];
        const double v = (1 - ty.frac) * top + ty.frac * bot;
        out.pixel(x, y)[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& image, std::size_t width, std::size_t height) {
  require_positive(width, height);
  if (image.width == width && image.height == height) return image;
  GrayImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const Tap ty = source_tap(y, height, image.height);
    for (std::size_t x = 0; x < width; ++x) {
      const Tap tx = source_tap(x, width, image.width);
      const double top = (1 - tx.frac) * image.at(tx.i0, ty.i0) + tx.frac * image.at(tx.i1, ty.i0);
      const double bot = (1 - tx.frac) * image.at(tx.i0, ty.i1) + tx.frac * image.at(tx.i1, ty.i1);
      out.at(x, y) = (1 - ty.frac) * top + ty.frac * bot;
    }
  }
  return out;
}

Tensor to_tensor(const RgbImage& image) {
  Tensor t({image.height, image.width, 3});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = image.pixels[i] / 255.0;
  return t;
}

// ---------------------------------------------------------------------------
// Netpbm

namespace {

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

std::size_t read_header_number(std::istream& in, const char* what) {
  skip_space_and_comments(in);
  long long v = -1;
  if (!(in >> v) || v <= 0) throw DataError(std::string("ppm: invalid ") + what);
  return static_cast<std::size_t>(v);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void write_ppm(std::ostream& out, const RgbImage& image) {
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("ppm: write failed");
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  auto out = open_out(path);
  write_ppm(out, image);
}

RgbImage read_ppm(std::istream& in) {
  char magic[2] = {};
  if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '6')
    throw DataError("ppm: not a binary P6 file");
  const std::size_t w = read_header_number(in, "width");
  const std::size_t h = read_header_number(in, "height");
  const std::size_t maxval = read_header_number(in, "maxval");
  if (maxval != 255) throw DataError("ppm: only maxval 255 is supported");
  in.get();  // single whitespace before the raster
  RgbImage image(w, h);
  if (!in.read(reinterpret_cast<char*>(image.pixels.data()),
               static_cast<std::streamsize>(image.pixels.size())))
    throw DataError("ppm: truncated raster");
  return image;
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_ppm(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_pgm(std::ostream& out, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) throw ShapeError("pgm: buffer does not match dimensions");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw DataError("pgm: write failed");
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  auto out = open_out(path);
  write_pgm(out, width, height, pixels);
}

}  // namespace rehar
