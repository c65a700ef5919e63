#include "crossia/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>

#include "crossia/errors.hpp"

namespace crossia {

FloatImage to_float(const RgbImage& image) {
  FloatImage out(image.width, image.height, 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = image.at(x, y, c);
  return out;
}

RgbImage to_bytes(const FloatImage& image) {
  require(image.channels == 3, "to_bytes: expected 3 channels");
  RgbImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(std::round(image.at(c, y, x)), 0.0, 255.0);
        out.at(x, y, c) = static_cast<std::uint8_t>(v);
      }
  return out;
}

FloatImage gaussian_blur(const FloatImage& image, double sigma, int kernel_size) {
  require(kernel_size >= 1 && kernel_size % 2 == 1, "gaussian_blur: kernel size must be odd");
  if (sigma <= 0.0 || kernel_size == 1) return image;
  const int radius = kernel_size / 2;
  std::vector<double> weights(kernel_size);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    weights[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += weights[i + radius];
  }
  for (double& w : weights) w /= total;

  FloatImage tmp(image.width, image.height, image.channels);
  FloatImage out(image.width, image.height, image.channels);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += weights[i + radius] * image.at(c, y, std::clamp(x + i, 0, image.width - 1));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += weights[i + radius] * tmp.at(c, std::clamp(y + i, 0, image.height - 1), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

FloatImage downsample_area(const FloatImage& image, int factor) {
  require(factor >= 1, "downsample_area: factor must be >= 1");
  if (factor == 1) return image;
  const int w = (image.width + factor - 1) / factor;
  const int h = (image.height + factor - 1) / factor;
  FloatImage out(w, h, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        int count = 0;
        for (int dy = 0; dy < factor && y * factor + dy < image.height; ++dy)
          for (int dx = 0; dx < factor && x * factor + dx < image.width; ++dx) {
            acc += image.at(c, y * factor + dy, x * factor + dx);
            ++count;
          }
        out.at(c, y, x) = acc / count;
      }
  return out;
}

FloatImage resize_bilinear(const FloatImage& image, int width, int height) {
  require(width > 0 && height > 0 && image.width > 0 && image.height > 0, "resize: empty image");
  if (width == image.width && height == image.height) return image;
  FloatImage out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
        const double bottom = (1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
        out.at(c, y, x) = (1 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  return to_bytes(resize_bilinear(to_float(image), width, height));
}

RgbImage crop(const RgbImage& image, int x_min, int y_min, int x_max, int y_max) {
  require(x_min >= 0 && y_min >= 0 && x_max < image.width && y_max < image.height && x_min <= x_max &&
              y_min <= y_max,
          "crop: box outside image");
  RgbImage out(x_max - x_min + 1, y_max - y_min + 1);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(x_min + x, y_min + y, c);
  return out;
}

RgbImage flip_horizontal(const RgbImage& image) {
  RgbImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

double psnr(const RgbImage& a, const RgbImage& b) {
  require(a.width == b.width && a.height == b.height, "psnr: size mismatch");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(a.data.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double mean_gradient_magnitude(const RgbImage& image) {
  if (image.width < 3 || image.height < 3) return 0.0;
  auto luma = [&](int x, int y) {
    return 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
  };
  double total = 0.0;
  int count = 0;
  for (int y = 1; y + 1 < image.height; ++y)
    for (int x = 1; x + 1 < image.width; ++x) {
      const double gx = 0.5 * (luma(x + 1, y) - luma(x - 1, y));
      const double gy = 0.5 * (luma(x, y + 1) - luma(x, y - 1));
      total += std::sqrt(gx * gx + gy * gy);
      ++count;
    }
  return total / count;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                   const std::vector<png_bytep>& rows) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorCode::kInvalidArgument, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kFormat, "libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads into 8-bit RGB or 16-bit gray depending on `want16`.
void read_png_raw(const std::filesystem::path& path, bool want16, int& width, int& height,
                  std::vector<std::uint8_t>& bytes) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorCode::kNotFound, "image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kFormat, "libpng failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (want16) {
    if (color != PNG_COLOR_TYPE_GRAY || depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      fail(ErrorCode::kFormat, path.string() + ": expected 16-bit grayscale PNG");
    }
    png_set_swap(png);
  } else {
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  bytes.assign(row_bytes * height, 0);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  require(!image.empty(), "write_png: empty image");
  std::vector<png_bytep> rows(image.height);
  auto* base = const_cast<std::uint8_t*>(image.data.data());
  for (int y = 0; y < image.height; ++y) rows[y] = base + static_cast<std::size_t>(y) * image.width * 3;
  write_png_raw(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, rows);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage image;
  read_png_raw(path, false, image.width, image.height, image.data);
  return image;
}

void write_png16(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& values) {
  require(values.size() == static_cast<std::size_t>(width) * height, "write_png16: size mismatch");
  std::vector<png_bytep> rows(height);
  auto* base = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(values.data()));
  for (int y = 0; y < height; ++y) rows[y] = base + static_cast<std::size_t>(y) * width * 2;
  write_png_raw(path, width, height, PNG_COLOR_TYPE_GRAY, 16, rows);
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& width, int& height) {
  std::vector<std::uint8_t> bytes;
  read_png_raw(path, true, width, height, bytes);
  std::vector<std::uint16_t> values(static_cast<std::size_t>(width) * height);
  std::memcpy(values.data(), bytes.data(), values.size() * 2);
  return values;
}

}  // namespace crossia
