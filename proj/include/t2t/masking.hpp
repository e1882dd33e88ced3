#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "t2t/image.hpp"
#include "t2t/rng.hpp"

namespace t2t {

enum class MaskKind { full, large_area, object_level };

std::string to_string(MaskKind kind);

/// Binary keep-mask: 1 keeps the context pixel, 0 marks a pixel to restore.
struct MaskSpec {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> keep;  // row-major, height * width
    MaskKind kind = MaskKind::full;
    std::optional<Rect> source_bbox;  // object_level only

    std::uint8_t at(int y, int x) const { return keep[std::size_t(y) * width + x]; }
    long zero_count() const;
    double zero_fraction() const { return double(zero_count()) / double(keep.size()); }

    bool operator==(const MaskSpec&) const = default;
};

MaskSpec full_mask(int height, int width);

/// Union of 1-3 random rectangles whose total restore fraction lies in
/// [lo, hi]. Up to 50 rejection tries, then a block with exactly the pixel
/// count closest to a drawn target. Throws std::invalid_argument when no
/// pixel count of the image fits the range.
MaskSpec large_area_mask(int height, int width, Rng& rng, std::pair<double, double> area_range);

/// Restore region = bbox grown by `dilation` on every side, clipped to the image.
MaskSpec object_mask(int height, int width, const Rect& bbox, int dilation);

/// Elementwise I * m with the mask broadcast over channels.
Image apply_mask(const Image& image, const MaskSpec& mask);

/// Patch-grid indicator: a cell is 0 (edited) iff any pixel in it is 0.
/// Row-major, (height/patch) x (width/patch).
std::vector<std::uint8_t> downsample_indicator(const MaskSpec& mask, int patch);

}  // namespace t2t
