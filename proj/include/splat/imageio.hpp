#pragma once

#include <string>
#include <vector>

#include "splat/image.hpp"

namespace splat {

/// 8-bit RGB PNG, written with stored (uncompressed) deflate blocks so the
/// bytes are a pure function of the pixels. The reader accepts only files
/// produced by this writer (8-bit RGB, filter 0, stored blocks).
void write_png(const std::string& path, const ImageBuffer& img);
ImageBuffer read_png(const std::string& path);

/// Raw float plane: 16-byte header (magic "DPTH", u32 height, u32 width,
/// u32 reserved, little-endian) followed by row-major float32 LE values.
void write_depth(const std::string& path, const std::vector<double>& values,
                 int height, int width);
std::vector<double> read_depth(const std::string& path, int* height, int* width);

} // namespace splat
