#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rehar/tensor.hpp"

namespace rehar {

// Single-channel intensity image, values nominally in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), pixels(w * h, fill) {}

  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// 8-bit interleaved RGB image.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * 3]; }
  bool operator==(const RgbImage&) const = default;
};

// 0.299 R + 0.587 G + 0.114 B, scaled to [0, 1].
GrayImage to_gray(const RgbImage& image);

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height);
GrayImage resize_bilinear(const GrayImage& image, std::size_t width, std::size_t height);

// H x W x 3 tensor with channel values divided by 255.
Tensor to_tensor(const RgbImage& image);

// Binary PPM (P6) / PGM (P5), maxval 255.
void write_ppm(std::ostream& out, const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(std::istream& in);
RgbImage read_ppm(const std::filesystem::path& path);

void write_pgm(std::ostream& out, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);

}  // namespace rehar
