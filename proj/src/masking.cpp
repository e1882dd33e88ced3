#include "t2t/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace t2t {

std::string to_string(MaskKind kind) {
    switch (kind) {
        case MaskKind::full: return "full";
        case MaskKind::large_area: return "large_area";
        case MaskKind::object_level: return "object_level";
    }
    return "unknown";
}

long MaskSpec::zero_count() const {
    return long(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
}

MaskSpec full_mask(int height, int width) {
    if (height < 1 || width < 1) throw std::invalid_argument("full_mask: size must be >= 1");
    MaskSpec m;
    m.height = height;
    m.width = width;
    m.keep.assign(std::size_t(height) * width, 0);
    m.kind = MaskKind::full;
    return m;
}

namespace {

void zero_rect(MaskSpec& m, const Rect& r) {
    for (int y = std::max(0, r.y0); y < std::min(m.height, r.y1); ++y)
        for (int x = std::max(0, r.x0); x < std::min(m.width, r.x1); ++x)
            m.keep[std::size_t(y) * m.width + x] = 0;
}

Rect random_placement(int height, int width, int rh, int rw, Rng& rng) {
    const int y0 = rng.uniform_int(0, height - rh);
    const int x0 = rng.uniform_int(0, width - rw);
    return {x0, y0, x0 + rw, y0 + rh};
}

// Pixel counts k with lo <= k / total <= hi, evaluated exactly as the
// fraction is later measured.
std::pair<long, long> count_range(long total, double lo, double hi) {
    auto frac = [&](long k) { return double(k) / double(total); };
    long k_lo = std::clamp(long(std::ceil(lo * double(total))), 0L, total);
    while (k_lo > 0 && frac(k_lo - 1) >= lo) --k_lo;
    while (k_lo <= total && frac(k_lo) < lo) ++k_lo;
    long k_hi = std::clamp(long(std::floor(hi * double(total))), 0L, total);
    while (k_hi < total && frac(k_hi + 1) <= hi) ++k_hi;
    while (k_hi >= 0 && frac(k_hi) > hi) --k_hi;
    return {k_lo, k_hi};
}

// Exactly k zero pixels: a near-square block of full rows plus one partial row.
void zero_blob(MaskSpec& m, long k, Rng& rng) {
    const int h = m.height, w = m.width;
    int rw = std::clamp(int(std::lround(std::sqrt(double(k) * w / h))), 1, w);
    rw = std::max(rw, int((k + h - 1) / h));
    const long rows = k / rw, rem = k % rw;
    const int used = int(rows + (rem > 0 ? 1 : 0));
    const int y0 = rng.uniform_int(0, h - used);
    const int x0 = rng.uniform_int(0, w - rw);
    zero_rect(m, {x0, y0, x0 + rw, y0 + int(rows)});
    if (rem > 0) zero_rect(m, {x0, y0 + int(rows), x0 + int(rem), y0 + int(rows) + 1});
}

}  // namespace

MaskSpec large_area_mask(int height, int width, Rng& rng, std::pair<double, double> area_range) {
    const auto [lo, hi] = area_range;
    if (!(lo > 0.0 && lo <= hi && hi <= 1.0))
        throw std::invalid_argument("large_area_mask: require 0 < lo <= hi <= 1");
    if (height < 1 || width < 1) throw std::invalid_argument("large_area_mask: size must be >= 1");

    {
        const auto [k_lo, k_hi] = count_range(long(height) * width, lo, hi);
        if (k_lo > k_hi) throw std::invalid_argument("large_area_mask: no pixel count fits the area range");
    }

    MaskSpec m;
    m.height = height;
    m.width = width;
    m.kind = MaskKind::large_area;
    const double target = rng.uniform(lo, hi);

    constexpr int kMaxTries = 50;
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        m.keep.assign(std::size_t(height) * width, 1);
        const int count = rng.uniform_int(1, 3);
        // Each rectangle covers roughly target/count of the image, with jitter.
        const double per_rect = std::min(1.0, target / count * rng.uniform(1.0, 1.6));
        for (int i = 0; i < count; ++i) {
            const double aspect = std::exp(rng.uniform(-0.6, 0.6));
            const double side = std::sqrt(per_rect);
            const int rh = std::clamp(int(std::lround(side * aspect * height)), 1, height);
            const int rw = std::clamp(int(std::lround(side / aspect * width)), 1, width);
            zero_rect(m, random_placement(height, width, rh, rw, rng));
        }
        const double frac = m.zero_fraction();
        if (frac >= lo && frac <= hi) {
            if (frac == 1.0) m.kind = MaskKind::full;
            return m;
        }
    }

    const long total = long(height) * width;
    const auto [k_lo, k_hi] = count_range(total, lo, hi);
    m.keep.assign(std::size_t(total), 1);
    zero_blob(m, std::clamp(long(std::lround(target * double(total))), k_lo, k_hi), rng);
    if (m.zero_count() == long(m.keep.size())) m.kind = MaskKind::full;
    return m;
}

MaskSpec object_mask(int height, int width, const Rect& bbox, int dilation) {
    if (!bbox.valid()) throw std::invalid_argument("object_mask: degenerate bbox");
    if (bbox.x0 < 0 || bbox.y0 < 0 || bbox.x1 > width || bbox.y1 > height)
        throw std::invalid_argument("object_mask: bbox outside image");
    if (dilation < 0) throw std::invalid_argument("object_mask: negative dilation");
    MaskSpec m;
    m.height = height;
    m.width = width;
    m.keep.assign(std::size_t(height) * width, 1);
    m.kind = MaskKind::object_level;
    m.source_bbox = bbox;
    zero_rect(m, {bbox.x0 - dilation, bbox.y0 - dilation, bbox.x1 + dilation, bbox.y1 + dilation});
    return m;
}

Image apply_mask(const Image& image, const MaskSpec& mask) {
    if (image.height != mask.height || image.width != mask.width)
        throw std::invalid_argument("apply_mask: shape mismatch");
    Image out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const float k = float(mask.at(y, x));
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y, x, c) * k;
        }
    return out;
}

std::vector<std::uint8_t> downsample_indicator(const MaskSpec& mask, int patch) {
    if (patch <= 0 || mask.height % patch != 0 || mask.width % patch != 0)
        throw std::invalid_argument("downsample_indicator: size not divisible by patch");
    const int gh = mask.height / patch;
    const int gw = mask.width / patch;
    std::vector<std::uint8_t> grid(std::size_t(gh) * gw, 1);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x) == 0) grid[std::size_t(y / patch) * gw + x / patch] = 0;
    return grid;
}

}  // namespace t2t
