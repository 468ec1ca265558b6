#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace eediff {

// 8-bit grayscale, row-major, width * height bytes.
void write_png_gray(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace eediff
