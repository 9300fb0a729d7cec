#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evx/tensor.hpp"

namespace evx {

// 8-bit interleaved image, RGB when channels == 3, gray when channels == 1.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

bool has_image_extension(const std::filesystem::path& path);

// Decodes png/jpg into RGB. Throws CorruptImage naming `path` on failure.
Image read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& image);
std::string encode_png(const Image& image);

// Bilinear resampling of an interleaved H x W x C plane using pixel-centre
// alignment and edge clamping. Same-size input is returned unchanged.
std::vector<double> resize_bilinear(std::span<const double> src, std::size_t src_h,
                                    std::size_t src_w, std::size_t channels,
                                    std::size_t dst_h, std::size_t dst_w);

// Pixel v in [0,255] maps to v / 127.5 - 1 in [-1, +1].
constexpr double normalize_pixel(double v) noexcept { return v / 127.5 - 1.0; }

// Resize to `size` x `size` and normalize into a 1 x size x size x 3 tensor.
Tensor image_to_input(const Image& image, std::size_t size);

}  // namespace evx
