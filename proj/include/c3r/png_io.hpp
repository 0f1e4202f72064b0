#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace c3r {

/// 8-bit image, row-major, `channels` interleaved samples per pixel (1 or 3).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;
};

void write_png(const std::string& path, const Image8& img);
/// Reads 8-bit grayscale or RGB PNGs; other formats are converted to 8-bit.
Image8 read_png(const std::string& path);

}  // namespace c3r
