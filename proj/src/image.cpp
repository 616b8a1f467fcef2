#include "prefmap/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace prefmap {

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw ValidationError("negative image size");
  pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0];
    pixels[i + 1] = fill[1];
    pixels[i + 2] = fill[2];
  }
}

namespace {

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_from_span(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(data, cur->bytes.data() + cur->pos, length);
  cur->pos += length;
}

[[noreturn]] void png_error_throw(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }
void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("encode_png: empty image");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, png_warning_ignore);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 3);
    png_set_filter(png, 0, PNG_FILTER_SUB);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
      auto* row = const_cast<png_bytep>(img.pixels.data() + img.offset(0, y));
      png_write_row(png, row);
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error("png: not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, png_warning_ignore);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  Image img;
  try {
    png_set_read_fn(png, &cursor, png_read_from_span);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img = Image(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width) * 3) throw Error("png: unexpected row layout");
    for (int y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + img.offset(0, y), nullptr);
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }

Image read_png(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Bilinear sample at continuous pixel coordinates; out-of-range reads reflect.
std::array<double, 3> sample(const Image& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const int xa = reflect(x0, img.width), xb = reflect(x0 + 1, img.width);
  const int ya = reflect(y0, img.height), yb = reflect(y0 + 1, img.height);
  std::array<double, 3> out{};
  for (int ch = 0; ch < 3; ++ch) {
    const double p00 = img.pixels[img.offset(xa, ya) + ch];
    const double p10 = img.pixels[img.offset(xb, ya) + ch];
    const double p01 = img.pixels[img.offset(xa, yb) + ch];
    const double p11 = img.pixels[img.offset(xb, yb) + ch];
    out[ch] = (p00 * (1 - fx) + p10 * fx) * (1 - fy) + (p01 * (1 - fx) + p11 * fx) * fy;
  }
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Image resize_bilinear(const Image& img, int width, int height) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("resize_bilinear: empty source image");
  if (width <= 0 || height <= 0) throw ValidationError("resize_bilinear: target size must be positive");
  if (width == img.width && height == img.height) return img;
  Image out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    for (int x = 0; x < width; ++x) {
      const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const auto v = sample(img, src_x, src_y);
      out.set(x, y, {to_byte(v[0]), to_byte(v[1]), to_byte(v[2])});
    }
  }
  return out;
}

Image center_crop(const Image& img, int width, int height) {
  if (width > img.width || height > img.height || width <= 0 || height <= 0)
    throw ValidationError("center_crop: crop larger than image");
  const int x0 = (img.width - width) / 2;
  const int y0 = (img.height - height) / 2;
  Image out(width, height);
  for (int y = 0; y < height; ++y)
    std::memcpy(out.pixels.data() + out.offset(0, y), img.pixels.data() + img.offset(x0, y0 + y),
                static_cast<std::size_t>(width) * 3);
  return out;
}

Image warp_affine(const Image& img, const std::array<double, 4>& inv) {
  Image out(img.width, img.height);
  const double cx = 0.5 * (img.width - 1);
  const double cy = 0.5 * (img.height - 1);
  for (int y = 0; y < img.height; ++y) {
    const double dy = y - cy;
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx;
      const double sx = cx + inv[0] * dx + inv[1] * dy;
      const double sy = cy + inv[2] * dx + inv[3] * dy;
      const auto v = sample(img, sx, sy);
      out.set(x, y, {to_byte(v[0]), to_byte(v[1]), to_byte(v[2])});
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.set(img.width - 1 - x, y, img.at(x, y));
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    std::memcpy(out.pixels.data() + out.offset(0, img.height - 1 - y), img.pixels.data() + img.offset(0, y),
                static_cast<std::size_t>(img.width) * 3);
  return out;
}

}  // namespace prefmap
