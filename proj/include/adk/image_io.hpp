#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "adk/error.hpp"
#include "adk/tensor.hpp"

namespace adk::io {

/// Decodes an 8-bit PNG into an H x W x 3 tensor with values v / 255.
/// Grayscale and palette images are expanded to RGB; alpha is composited on black.
inline Tensor<float> read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&img, &black, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  if (img.width == 0 || img.height == 0) throw IoError("empty PNG " + path.string());
  Tensor<float> out(Shape{img.height, img.width, 3});
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Writes an H x W x 3 (RGB) or H x W x 1 (gray) tensor as an 8-bit PNG, clamping to [0, 1].
template <class T>
void write_png(const std::filesystem::path& path, const Tensor<T>& t) {
  require_rank(t, 3, "write_png");
  const std::size_t c = t.extent(2);
  if (c != 1 && c != 3) throw ShapeError("write_png: expected 1 or 3 channels, got " + to_string(t.shape()));
  std::vector<std::uint8_t> buf(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) buf[i] = quantize(static_cast<double>(t[i]));
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(t.extent(1));
  img.height = static_cast<png_uint_32>(t.extent(0));
  img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

}  // namespace adk::io
