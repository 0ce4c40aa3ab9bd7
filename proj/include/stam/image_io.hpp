#pragma once

#include <filesystem>

#include "stam/data.hpp"

namespace stam {

/// Reads an 8-bit PNG as grayscale with values v / 255.
Image read_png_gray(const std::filesystem::path& path);

/// Writes values clamped to [0, 1] and rounded to the nearest v / 255.
void write_png_gray(const std::filesystem::path& path, const Image& image);

/// The 8-bit value stored for an intensity in [0, 1].
unsigned char quantize(double v);

}  // namespace stam
