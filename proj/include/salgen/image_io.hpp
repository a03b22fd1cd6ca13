#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace salgen {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes any PNG to 8-bit gray or RGB (alpha dropped, 16-bit reduced).
Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);

}  // namespace salgen
