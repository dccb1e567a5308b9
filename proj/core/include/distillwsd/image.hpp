#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distillwsd/tensor.hpp"

namespace distillwsd {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
  bool empty() const noexcept { return rgb.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary P6 with maxval 255.
std::string encode_ppm(const Image& image);
Image decode_ppm(std::string_view bytes);
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Bilinear resampling to a new size.
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

/// Writes CHW values v/255 - 0.5 into `dst` (3*H*W entries).
template <typename T>
void image_to_chw(const Image& image, T* dst);

/// Stacks same-sized images into an N×3×H×W tensor.
template <typename T>
Tensor<T> images_to_batch(std::span<const Image* const> images);

}  // namespace distillwsd
