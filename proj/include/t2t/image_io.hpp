#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "t2t/image.hpp"
#include "t2t/masking.hpp"

namespace t2t {

/// 8-bit RGB PNG. Values are quantized with round(v * 255) after clipping.
void write_png(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);
/// Reads any PNG libpng understands and returns an RGB image in [0, 1].
Image read_png(const std::filesystem::path& path);

/// Quantizes an image the same way a PNG round trip would.
Image quantize_8bit(const Image& img);

/// Masks are single-channel 8-bit PNGs: 0 = restore, 255 = keep.
void write_mask_png(const std::filesystem::path& path, const MaskSpec& mask);
/// Pixels >= 128 read as keep. The kind is inferred (full when all zero).
MaskSpec read_mask_png(const std::filesystem::path& path);

}  // namespace t2t
