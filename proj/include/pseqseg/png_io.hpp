#pragma once

#include "pseqseg/image.hpp"

#include <string>

namespace pseqseg {

// 8-bit RGB PNG. Values are quantized with round(v * 255).
void write_png(const std::string& path, const ImageRGB& img);
ImageRGB read_png(const std::string& path);

}  // namespace pseqseg
