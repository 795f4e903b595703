#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mus {

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> codes;  // row-major
};

/// Decodes any PNG to 8-bit grayscale. Throws std::runtime_error on failure.
GrayImage read_png_gray(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG with fixed encoder settings, so equal
/// images always produce equal bytes.
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

}  // namespace mus
