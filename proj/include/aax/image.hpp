#pragma once

// PNG decode/encode (libpng) and the presentation helpers for masks,
// saliency maps and overlays.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "aax/decision.hpp"
#include "aax/error.hpp"
#include "aax/saliency.hpp"
#include "aax/tensor.hpp"

namespace aax {

// Decoded image: channels x h x w in [0, 1] (alpha dropped).
struct Image {
  Tensor pixels;
  int bit_depth = 8;

  int channels() const noexcept { return pixels.shape().channels; }
  int height() const noexcept { return pixels.shape().height; }
  int width() const noexcept { return pixels.shape().width; }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_read_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
inline void png_quiet_warning(png_structp, png_const_charp) {}

// Decodes into caller storage; returns false on any libpng error. Objects with
// destructors are declared before setjmp so a longjmp never skips them.
inline bool decode_png(std::FILE* fp, std::vector<std::uint8_t>& raw, png_uint_32& w,
                       png_uint_32& h, int& channels, int& depth) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_read_error,
                                           png_quiet_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  const png_size_t row_bytes = png_get_rowbytes(png, info);
  raw.resize(row_bytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace detail

// Accepts 1/2/4/8/16-bit grayscale, grayscale+alpha, palette, RGB and RGBA.
inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw InputError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw InputError("not a PNG file: " + path.string());
  }
  std::rewind(fp.get());
  std::vector<std::uint8_t> raw;
  png_uint_32 w = 0, h = 0;
  int channels = 0, depth = 0;
  if (!detail::decode_png(fp.get(), raw, w, h, channels, depth) || w == 0 || h == 0) {
    throw InputError("failed to decode PNG " + path.string());
  }
  const int color_channels = (channels == 2 || channels == 4) ? channels - 1 : channels;
  Image img;
  img.bit_depth = depth;
  img.pixels = Tensor(Shape{color_channels, static_cast<int>(h), static_cast<int>(w)});
  const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < color_channels; ++c) {
        const std::size_t idx = (static_cast<std::size_t>(y) * w + x) * channels + c;
        double v;
        if (depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, raw.data() + 2 * idx, 2);
          v = s;
        } else {
          v = raw[idx];
        }
        img.pixels.at(c, static_cast<int>(y), static_cast<int>(x)) = v * scale;
      }
    }
  }
  return img;
}

// Writes 8-bit grayscale (channels=1) or RGB (channels=3) interleaved bytes.
inline void write_png(const std::filesystem::path& path, int width, int height, int channels,
                      const std::vector<std::uint8_t>& bytes) {
  if (channels != 1 && channels != 3) throw InputError("write_png: channels must be 1 or 3");
  if (bytes.size() != static_cast<std::size_t>(width) * height * channels) {
    throw InputError("write_png: buffer size mismatch");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng init failed");
  }
  std::vector<png_const_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * channels;
  volatile bool ok = false;
  if (!setjmp(png_jmpbuf(png))) {
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    ok = true;
  }
  png_destroy_write_struct(&png, &info);
  if (!ok) throw Error("failed writing PNG " + path.string());
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// 8-bit gray (1 channel) or RGB (3 channels) from a [0,1] tensor.
inline void write_png(const std::filesystem::path& path, const Tensor& pixels) {
  const Shape& s = pixels.shape();
  std::vector<std::uint8_t> bytes(s.size());
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c)
        bytes[(static_cast<std::size_t>(y) * s.width + x) * s.channels + c] = to_byte(pixels.at(c, y, x));
  write_png(path, s.width, s.height, s.channels, bytes);
}

// 0 = background, 255 = foreground.
inline void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values[i] ? 255 : 0;
  write_png(path, mask.width, mask.height, 1, bytes);
}

// Any nonzero pixel in the first channel is foreground.
inline BinaryMask read_mask_png(const std::filesystem::path& path) {
  const Image img = read_png(path);
  BinaryMask m(img.height(), img.width());
  const auto ch = img.pixels.channel(0);
  for (std::size_t i = 0; i < ch.size(); ++i) m.values[i] = ch[i] > 0 ? 1 : 0;
  return m;
}

// value * 255, rounded.
inline void write_saliency_png(const std::filesystem::path& path, const SaliencyMap& map) {
  std::vector<std::uint8_t> bytes(map.values.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(map.values.values[i]);
  write_png(path, map.width(), map.height(), 1, bytes);
}

// Piecewise-linear jet colormap.
inline std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double t) { return std::clamp(1.5 - std::abs(4.0 * t), 0.0, 1.0); };
  return {ramp(v - 0.75), ramp(v - 0.5), ramp(v - 0.25)};
}

inline constexpr double kOverlayAlpha = 0.45;

// Colormapped saliency alpha-blended over the (grayscale-collapsed or RGB)
// image. Returns a 3 x H x W tensor.
inline Tensor overlay(const Tensor& image, const SaliencyMap& map, double alpha = kOverlayAlpha) {
  const Shape& s = image.shape();
  if (s.height != map.height() || s.width != map.width()) {
    throw InputError("overlay: image and saliency map shapes differ");
  }
  Tensor out(Shape{3, s.height, s.width});
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const auto color = jet(map.values.at(y, x));
      for (int c = 0; c < 3; ++c) {
        const double base = image.at(s.channels == 3 ? c : 0, y, x);
        out.at(c, y, x) = (1.0 - alpha) * base + alpha * color[c];
      }
    }
  }
  return out;
}

}  // namespace aax
