#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace crossia {

// Interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Planar float image (channels x height x width), values in byte units.
struct FloatImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  FloatImage() = default;
  FloatImage(int w, int h, int c)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0) {}
  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

FloatImage to_float(const RgbImage& image);
RgbImage to_bytes(const FloatImage& image);  // rounds and clamps to [0,255]

// Separable Gaussian with an odd kernel; borders replicate.
FloatImage gaussian_blur(const FloatImage& image, double sigma, int kernel_size);
// Box-average by an integer factor; partial edge blocks average what they cover.
FloatImage downsample_area(const FloatImage& image, int factor);
FloatImage resize_bilinear(const FloatImage& image, int width, int height);
RgbImage resize_bilinear(const RgbImage& image, int width, int height);
RgbImage crop(const RgbImage& image, int x_min, int y_min, int x_max, int y_max);  // inclusive bounds
RgbImage flip_horizontal(const RgbImage& image);

double psnr(const RgbImage& a, const RgbImage& b);  // +inf for identical images
// Mean gradient magnitude of the luma channel (central differences).
double mean_gradient_magnitude(const RgbImage& image);

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png_rgb(const std::filesystem::path& path);
// 16-bit single channel, used for depth (millimetres) and instance masks.
void write_png16(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& values);
std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& width, int& height);

}  // namespace crossia
