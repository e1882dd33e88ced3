#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace t2t {

/// Half-open pixel rectangle [x0, x1) x [y0, y1) in image coordinates.
struct Rect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return width() > 0 && height() > 0 ? long(width()) * height() : 0; }
    bool valid() const { return x0 < x1 && y0 < y1; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }

    bool operator==(const Rect&) const = default;
};

/// Interleaved HWC float image. Pixel values live in [0, 1] unless a
/// function says otherwise (the model works in [-1, 1]).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c = 3, float fill = 0.0f)
        : height(h), width(w), channels(c), data(std::size_t(h) * w * c, fill) {
        if (h <= 0 || w <= 0 || c <= 0) throw std::invalid_argument("Image: non-positive dimension");
    }

    std::size_t pixels() const { return std::size_t(height) * width; }
    std::size_t index(int y, int x, int c = 0) const {
        return (std::size_t(y) * width + x) * channels + c;
    }
    float& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
    float at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool operator==(const Image&) const = default;
};

/// [0,1] -> [-1,1]
Image to_signed(const Image& img);
/// [-1,1] -> [0,1], clipped.
Image from_signed(const Image& img);

/// Rearranges an image into row-major patch tokens: token (gy, gx) holds the
/// patch pixels in (py, px, c) order. Output is tokens * (patch*patch*channels).
std::vector<float> patchify(const Image& img, int patch);
Image unpatchify(const std::vector<float>& tokens, int height, int width, int channels, int patch);

}  // namespace t2t
