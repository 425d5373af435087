#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvflow/flow.hpp"

namespace mvflow {

// 8-bit interleaved image, channels = 1 (gray) or 3 (RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}
  std::uint8_t* px(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
  const std::uint8_t* px(int y, int x) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
};

inline void write_png(const Image8& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw FormatError("png: cannot write " + path.string() + ": " + image.message);
}

inline Image8 read_png(const std::filesystem::path& path, int channels = 3) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw FormatError("png: cannot read " + path.string() + ": " + image.message);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 img(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("png: decode failed for " + path.string() + ": " + image.message);
  }
  return img;
}

// [3,H,W] float image in [0,1] <-> 8-bit RGB.
inline Image8 to_image8(const Tensor<float>& rgb) {
  require_rank(rgb, 3, "to_image8");
  const int c = rgb.dim(0), h = rgb.dim(1), w = rgb.dim(2);
  Image8 img(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < c; ++ci)
        img.px(y, x)[ci] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.at(ci, y, x), 0.0f, 1.0f) * 255.0f));
  return img;
}

inline Tensor<float> from_image8(const Image8& img) {
  Tensor<float> t(Shape{img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ci = 0; ci < img.channels; ++ci) t.at(ci, y, x) = img.px(y, x)[ci] / 255.0f;
  return t;
}

inline void write_mask_png(const Mask& m, const std::filesystem::path& path) { write_png(to_image8(m.t), path); }
inline Mask read_mask_png(const std::filesystem::path& path) { return Mask(from_image8(read_png(path, 1))); }

}  // namespace mvflow
