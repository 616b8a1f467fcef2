#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "prefmap/common.hpp"

namespace prefmap {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});

  Rgb at(int x, int y) const {
    const auto i = offset(x, y);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = offset(x, y);
    pixels[i] = c[0];
    pixels[i + 1] = c[1];
    pixels[i + 2] = c[2];
  }
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
  }
  bool operator==(const Image&) const = default;
};

/// PNG bytes (8-bit RGB, fixed compression settings so output is reproducible).
std::vector<std::uint8_t> encode_png(const Image& img);
/// Throws Error when the bytes are not a decodable PNG. Any colour type is converted to 8-bit RGB.
Image decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Bilinear resample to the given size (pixel-center aligned).
Image resize_bilinear(const Image& img, int width, int height);
/// Centered crop; the requested size must not exceed the image.
Image center_crop(const Image& img, int width, int height);

/// Inverse-mapped affine warp around the image center with bilinear sampling
/// and reflect padding. `inverse` maps output offsets (dx, dy) from the
/// center to source offsets: [a b; c d].
Image warp_affine(const Image& img, const std::array<double, 4>& inverse);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

}  // namespace prefmap
