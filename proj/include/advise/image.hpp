#pragma once

// PNG input/output and heatmap rendering.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "advise/common.hpp"

namespace advise {

/// Rounds every channel to the nearest 8-bit level, i.e. what a PNG stores.
inline Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

/// Reads any PNG as 8-bit RGB scaled to [0,1].
inline Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw ValidationError("cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw ValidationError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img(png.height, png.width);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

namespace detail {

inline void write_png_bytes(const std::filesystem::path& path, std::size_t width, std::size_t height,
                            std::uint32_t format, const std::vector<png_byte>& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = format;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw Error("cannot write PNG " + path.string() + ": " + png.message);
}

inline png_byte to_byte(double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.data.empty()) throw ValidationError("write_png: empty image");
  std::vector<png_byte> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::to_byte(img.data[i]);
  detail::write_png_bytes(path, img.width, img.height, PNG_FORMAT_RGB, bytes);
}

/// 8-bit grayscale rendering of a [0,1] map.
inline void write_heatmap_png(const std::filesystem::path& path, const Map2& map) {
  if (map.data.empty()) throw ValidationError("write_heatmap_png: empty map");
  std::vector<png_byte> bytes(map.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::to_byte(map.data[i]);
  detail::write_png_bytes(path, map.cols, map.rows, PNG_FORMAT_GRAY, bytes);
}

/// Piecewise-linear "jet" ramp: blue -> cyan -> yellow -> red.
inline std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(4.0 * x), 0.0, 1.0); };
  return {ramp(v - 0.75), ramp(v - 0.5), ramp(v - 0.25)};
}

/// Input image blended 50/50 with the jet-coloured map.
inline Image overlay(const Image& img, const Map2& map) {
  if (map.rows != img.height || map.cols != img.width) throw ValidationError("overlay: map and image sizes differ");
  Image out(img.height, img.width);
  for (std::size_t p = 0; p < map.data.size(); ++p) {
    const auto c = jet(map.data[p]);
    for (std::size_t k = 0; k < 3; ++k) out.data[p * 3 + k] = 0.5 * img.data[p * 3 + k] + 0.5 * c[k];
  }
  return out;
}

}  // namespace advise
