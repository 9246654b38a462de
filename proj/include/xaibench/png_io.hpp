#pragma once

#include <cstdint>
#include <filesystem>

#include "xaibench/raster.hpp"

namespace xb {

/// Grayscale PNG contents with the sample depth it was stored at.
struct GrayPng {
  Raster<std::uint16_t> pixels;
  int bit_depth = 8;
  /// Largest representable code value (255 or 65535).
  int max_code() const { return bit_depth == 16 ? 65535 : 255; }
};

/// Reads an 8- or 16-bit grayscale PNG. Palette/RGB input is rejected.
GrayPng read_png_gray(const std::filesystem::path& path);

void write_png_gray(const std::filesystem::path& path,
                    const Raster<std::uint8_t>& pixels);
void write_png_gray16(const std::filesystem::path& path,
                      const Raster<std::uint16_t>& pixels);

/// Interleaved RGB, `rgb` has 3*width columns.
void write_png_rgb(const std::filesystem::path& path,
                   const Raster<std::uint8_t>& rgb);

}  // namespace xb
