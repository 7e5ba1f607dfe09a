#pragma once

// Minimal libpng wrappers: 8-bit grayscale / RGB and 16-bit grayscale images,
// plus the depth-PNG sidecar header carrying millimeters per unit.

#include <png.h>

#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/image.hpp"

namespace envcalib {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngRaw {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 = gray, 3 = rgb (alpha stripped)
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

inline PngRaw read_png_raw(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), fp.get()) != sig.size() || png_sig_cmp(sig.data(), 0, sig.size()) != 0)
    throw Error(ErrorCode::FormatError, path.string() + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "libpng initialization failed");
  }
  PngRaw raw;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::FormatError, path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host order (little endian)
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(raw.height));
  rows.resize(static_cast<std::size_t>(raw.height));
  for (int y = 0; y < raw.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(raw.width) * static_cast<std::size_t>(raw.height) *
                        static_cast<std::size_t>(raw.channels);
  raw.samples.resize(n);
  if (raw.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      raw.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) raw.samples[i] = buffer[i];
  }
  return raw;
}

inline void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                          const std::vector<unsigned char>& bytes) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels) *
                               static_cast<std::size_t>(bit_depth / 8);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + rowbytes * static_cast<std::size_t>(y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// Reads any 8/16-bit gray or color PNG as gray values scaled to [0, 1].
inline ImageF read_png_gray(const std::filesystem::path& path) {
  const detail::PngRaw raw = detail::read_png_raw(path);
  const double scale = raw.bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  ImageF img(raw.width, raw.height);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = 0.0;
    if (raw.channels >= 3) {
      const std::size_t k = i * static_cast<std::size_t>(raw.channels);
      v = 0.299 * raw.samples[k] + 0.587 * raw.samples[k + 1] + 0.114 * raw.samples[k + 2];
    } else {
      v = raw.samples[i];
    }
    img.data()[i] = static_cast<float>(v * scale);
  }
  return img;
}

/// Writes values in [0, 1] as an 8-bit grayscale PNG.
inline void write_png_gray8(const ImageF& img, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data()[i], 0.0f, 1.0f) * 255.0f));
  detail::write_png_raw(path, img.width(), img.height(), PNG_COLOR_TYPE_GRAY, 8, bytes);
}

/// Interleaved 8-bit RGB.
inline void write_png_rgb8(int width, int height, const std::vector<unsigned char>& rgb,
                           const std::filesystem::path& path) {
  if (rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
    throw Error(ErrorCode::InvalidArgument, "rgb buffer size mismatch");
  detail::write_png_raw(path, width, height, PNG_COLOR_TYPE_RGB, 8, rgb);
}

inline std::filesystem::path depth_header_path(const std::filesystem::path& png) {
  return std::filesystem::path(png.string() + ".hdr");
}

/// 16-bit depth PNG. Stored value v means v * mm_per_unit millimeters; 0 is
/// "no depth". The scale goes to a sidecar "<file>.hdr" text header.
inline void write_depth_png(const ImageF& depth_m, const std::filesystem::path& path, double mm_per_unit = 1.0) {
  if (!(mm_per_unit > 0.0)) throw Error(ErrorCode::InvalidArgument, "mm_per_unit must be positive");
  std::vector<unsigned char> bytes(depth_m.size() * 2);
  for (std::size_t i = 0; i < depth_m.size(); ++i) {
    const double units = std::round(static_cast<double>(depth_m.data()[i]) * 1000.0 / mm_per_unit);
    const auto v = static_cast<std::uint16_t>(std::clamp(units, 0.0, 65535.0));
    bytes[2 * i] = static_cast<unsigned char>(v >> 8);  // PNG is big endian
    bytes[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
  }
  detail::write_png_raw(path, depth_m.width(), depth_m.height(), PNG_COLOR_TYPE_GRAY, 16, bytes);
  std::ofstream hdr(depth_header_path(path));
  if (!hdr) throw Error(ErrorCode::IoError, "cannot write " + depth_header_path(path).string());
  hdr.precision(17);
  hdr << "mm_per_unit " << mm_per_unit << '\n';
}

/// Reads a depth PNG into meters. A missing sidecar means 1 mm per unit.
inline ImageF read_depth_png(const std::filesystem::path& path) {
  double mm_per_unit = 1.0;
  if (std::ifstream hdr(depth_header_path(path)); hdr) {
    std::string key;
    while (hdr >> key) {
      if (key == "mm_per_unit") {
        if (!(hdr >> mm_per_unit) || !(mm_per_unit > 0.0))
          throw Error(ErrorCode::FormatError, depth_header_path(path).string() + ": bad mm_per_unit");
      } else {
        std::string rest;
        std::getline(hdr, rest);
      }
    }
  }
  const detail::PngRaw raw = detail::read_png_raw(path);
  if (raw.channels != 1) throw Error(ErrorCode::FormatError, path.string() + ": depth PNG must be grayscale");
  ImageF img(raw.width, raw.height);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data()[i] = static_cast<float>(raw.samples[i] * mm_per_unit / 1000.0);
  return img;
}

}  // namespace envcalib
