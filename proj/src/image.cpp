#include "t2t/image.hpp"

#include <algorithm>

namespace t2t {

Image to_signed(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = 2.0f * v - 1.0f;
    return out;
}

Image from_signed(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = std::clamp(0.5f * (v + 1.0f), 0.0f, 1.0f);
    return out;
}

std::vector<float> patchify(const Image& img, int patch) {
    if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0)
        throw std::invalid_argument("patchify: image size not divisible by patch");
    const int gh = img.height / patch;
    const int gw = img.width / patch;
    const int c = img.channels;
    const std::size_t token_dim = std::size_t(patch) * patch * c;
    std::vector<float> tokens(std::size_t(gh) * gw * token_dim);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            float* dst = tokens.data() + (std::size_t(gy) * gw + gx) * token_dim;
            for (int py = 0; py < patch; ++py) {
                const float* src = img.data.data() + img.index(gy * patch + py, gx * patch);
                std::copy(src, src + std::size_t(patch) * c, dst + std::size_t(py) * patch * c);
            }
        }
    return tokens;
}

Image unpatchify(const std::vector<float>& tokens, int height, int width, int channels, int patch) {
    if (patch <= 0 || height % patch != 0 || width % patch != 0)
        throw std::invalid_argument("unpatchify: image size not divisible by patch");
    const int gh = height / patch;
    const int gw = width / patch;
    const std::size_t token_dim = std::size_t(patch) * patch * channels;
    if (tokens.size() != std::size_t(gh) * gw * token_dim)
        throw std::invalid_argument("unpatchify: token buffer size mismatch");
    Image img(height, width, channels);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            const float* src = tokens.data() + (std::size_t(gy) * gw + gx) * token_dim;
            for (int py = 0; py < patch; ++py) {
                float* dst = img.data.data() + img.index(gy * patch + py, gx * patch);
                std::copy(src + std::size_t(py) * patch * channels,
                          src + std::size_t(py + 1) * patch * channels, dst);
            }
        }
    return img;
}

}  // namespace t2t
