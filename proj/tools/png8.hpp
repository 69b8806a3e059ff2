#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvseg/image.hpp"

namespace lvseg::app {

/// 8-bit grayscale PNG of an image with intensities in [0, 1] (clamped).
std::string encode_png8(const Image2D& img);

/// Decodes an 8-bit grayscale PNG into its bytes; used by tests.
std::vector<std::uint8_t> decode_png8(const std::string& png, int& width, int& height);

}  // namespace lvseg::app
