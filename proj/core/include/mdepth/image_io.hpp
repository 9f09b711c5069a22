#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mdepth/plane.hpp"
#include "mdepth/tensor.hpp"

namespace mdepth {

/// Planar float image (C,H,W) with values in [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t r, std::size_t x) { return data[(c * height + r) * width + x]; }
  float at(std::size_t c, std::size_t r, std::size_t x) const { return data[(c * height + r) * width + x]; }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// Reads binary PPM (P6) / PGM (P5) with maxval up to 65535, or PNG (8/16
/// bit, gray or RGB, alpha dropped). Grayscale inputs are expanded to three
/// channels when `force_rgb`.
Image read_image(const std::filesystem::path& path, bool force_rgb = true);

/// 16-bit binary PPM (3 channels) or PGM (1 channel).
void write_pnm16(const std::filesystem::path& path, const Image& image);
/// 16-bit grayscale PNG.
void write_png16(const std::filesystem::path& path, const Plane<std::uint16_t>& gray);
/// 16-bit grayscale PGM.
void write_pgm16(const std::filesystem::path& path, const Plane<std::uint16_t>& gray);

template <typename T>
Tensor<T> image_tensor(const Image& image);

}  // namespace mdepth
