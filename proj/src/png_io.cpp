#include "xaibench/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "xaibench/errors.hpp"

namespace xb {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void png_warn(png_structp, png_const_charp) {}

void write_rows(const std::filesystem::path& path, int width, int height,
                int bit_depth, int color_type,
                const std::vector<png_bytep>& rows) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, png_warn);
  if (!png) throw IoError("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: write failed for " + path.string());
  }
  {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayPng read_png_gray(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());
  GrayPng out;
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  volatile bool not_gray = false;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, png_warn);
  if (!png) throw IoError("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    if (not_gray) throw IoError("expected grayscale PNG: " + path.string());
    throw IoError("png: read failed for " + path.string());
  }
  {
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
      not_gray = true;
      png_longjmp(png, 1);
    }
    if (depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
      depth = 8;
    }
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    const auto width = static_cast<int>(png_get_image_width(png, info));
    const auto height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = depth;
    out.pixels.resize(height, width);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * static_cast<std::size_t>(height));
    rows.resize(static_cast<std::size_t>(height));
    for (int r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
    png_read_image(png, rows.data());
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        if (depth == 16) {
          out.pixels(r, c) = static_cast<std::uint16_t>(
              rows[r][2 * c] | (rows[r][2 * c + 1] << 8));
        } else {
          out.pixels(r, c) = rows[r][c];
        }
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_gray(const std::filesystem::path& path,
                    const Raster<std::uint8_t>& pixels) {
  std::vector<png_bytep> rows(static_cast<std::size_t>(pixels.rows()));
  for (Eigen::Index r = 0; r < pixels.rows(); ++r)
    rows[r] = const_cast<png_bytep>(pixels.data() + r * pixels.cols());
  write_rows(path, static_cast<int>(pixels.cols()),
             static_cast<int>(pixels.rows()), 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_gray16(const std::filesystem::path& path,
                      const Raster<std::uint16_t>& pixels) {
  std::vector<png_bytep> rows(static_cast<std::size_t>(pixels.rows()));
  for (Eigen::Index r = 0; r < pixels.rows(); ++r)
    rows[r] = reinterpret_cast<png_bytep>(
        const_cast<std::uint16_t*>(pixels.data() + r * pixels.cols()));
  write_rows(path, static_cast<int>(pixels.cols()),
             static_cast<int>(pixels.rows()), 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_rgb(const std::filesystem::path& path,
                   const Raster<std::uint8_t>& rgb) {
  if (rgb.cols() % 3 != 0) throw ShapeError("RGB raster width must be 3*W");
  std::vector<png_bytep> rows(static_cast<std::size_t>(rgb.rows()));
  for (Eigen::Index r = 0; r < rgb.rows(); ++r)
    rows[r] = const_cast<png_bytep>(rgb.data() + r * rgb.cols());
  write_rows(path, static_cast<int>(rgb.cols() / 3),
             static_cast<int>(rgb.rows()), 8, PNG_COLOR_TYPE_RGB, rows);
}

}  // namespace xb
