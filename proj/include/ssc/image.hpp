#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssc/errors.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// RGB raster, 3 x H x W, values in [0, 1].
struct Image {
  std::string id;
  Tensor<float> pixels;

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
};

struct LabelVector {
  std::vector<int> y;  // y[c] in {0,1}, c is the 0-based class slot

  int num_classes() const { return static_cast<int>(y.size()); }
  // 1-based class indices present in the image.
  std::vector<int> present() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < y.size(); ++c)
      if (y[c]) out.push_back(static_cast<int>(c) + 1);
    return out;
  }
};

// Pixel labels in {0..C}; 0 is background.
using Mask = Raster<std::uint8_t>;

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_png_rgb(const std::filesystem::path& path, int height, int width,
                          const std::vector<std::uint8_t>& rgb) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

inline void write_png_gray(const std::filesystem::path& path, int height, int width,
                           const std::vector<std::uint8_t>& gray) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, gray.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

struct PngData {
  int height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

inline PngData read_png(const std::filesystem::path& path, bool gray) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  PngData out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.channels = gray ? 1 : 3;
  out.bytes.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

inline void save_image(const std::filesystem::path& path, const Tensor<float>& chw) {
  const int h = chw.dim(1), w = chw.dim(2);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(chw.at(c, y, x));
  write_png_rgb(path, h, w, rgb);
}

inline Tensor<float> load_image(const std::filesystem::path& path) {
  const auto png = read_png(path, false);
  Tensor<float> t(Shape{3, png.height, png.width});
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) = png.bytes[(static_cast<std::size_t>(y) * png.width + x) * 3 + c] / 255.0f;
  return t;
}

inline void save_mask(const std::filesystem::path& path, const Mask& m) {
  write_png_gray(path, m.height, m.width, m.data);
}

inline Mask load_mask(const std::filesystem::path& path) {
  auto png = read_png(path, true);
  Mask m(png.height, png.width);
  m.data = std::move(png.bytes);
  return m;
}

}  // namespace ssc
