#pragma once

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "pointvote/common.hpp"

namespace pointvote {

// PNG access through libpng: 16-bit grayscale depth (mm) and 8-bit RGB.

struct Image {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint16_t> data;  // row-major, channels interleaved
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

/// Reads gray, gray+alpha, RGB or RGBA at 8 or 16 bits; alpha is dropped,
/// palettes are expanded.
inline Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::kIo, "cannot open image " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "libpng initialization failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kParse, "invalid PNG file " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // host order, little-endian
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * static_cast<std::size_t>(img.height));
  rows.resize(static_cast<std::size_t>(img.height));
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + r * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.data.resize(n);
  if (img.bit_depth == 16) {
    for (std::size_t r = 0; r < static_cast<std::size_t>(img.height); ++r) {
      const auto* row = reinterpret_cast<const std::uint16_t*>(rows[r]);
      std::copy(row, row + static_cast<std::size_t>(img.width) * img.channels,
                img.data.begin() + static_cast<std::ptrdiff_t>(r * img.width * img.channels));
    }
  } else {
    for (std::size_t r = 0; r < static_cast<std::size_t>(img.height); ++r) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(img.width) * img.channels; ++i) {
        img.data[r * img.width * img.channels + i] = rows[r][i];
      }
    }
  }
  return img;
}

/// Writes 1 (gray) or 3 (RGB) channels at 8 or 16 bits.
inline void write_png(const std::string& path, const Image& img) {
  if ((img.channels != 1 && img.channels != 3) || (img.bit_depth != 8 && img.bit_depth != 16) ||
      img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw Error(ErrorCode::kInvalidArgument, "write_png: inconsistent image");
  }
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::kIo, "cannot write image " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng initialization failed");
  }
  const std::size_t bytes = img.bit_depth / 8;
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels * bytes;
  std::vector<png_byte> raw(stride * static_cast<std::size_t>(img.height));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    if (bytes == 2) {
      raw[2 * i] = static_cast<png_byte>(img.data[i] >> 8);  // PNG stores big-endian
      raw[2 * i + 1] = static_cast<png_byte>(img.data[i] & 0xff);
    } else {
      raw[i] = static_cast<png_byte>(img.data[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + r * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "failed writing PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace pointvote
