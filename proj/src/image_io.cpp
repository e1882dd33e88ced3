#include "t2t/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace t2t {
namespace {

std::vector<std::uint8_t> to_bytes(const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("PNG output requires a 3-channel image");
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::clamp(img.data[i], 0.0f, 1.0f);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return bytes;
}

png_image make_header(int width, int height, png_uint_32 format) {
    png_image header;
    std::memset(&header, 0, sizeof(header));
    header.version = PNG_IMAGE_VERSION;
    header.width = png_uint_32(width);
    header.height = png_uint_32(height);
    header.format = format;
    return header;
}

void write_gray_or_rgb(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
                       int width, int height, png_uint_32 format) {
    png_image header = make_header(width, height, format);
    if (!png_image_write_to_file(&header, path.string().c_str(), 0, bytes.data(), 0, nullptr))
        throw std::runtime_error("failed to write PNG " + path.string() + ": " + header.message);
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format, int& width,
                                   int& height) {
    png_image header;
    std::memset(&header, 0, sizeof(header));
    header.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&header, path.string().c_str()))
        throw std::runtime_error("failed to read PNG " + path.string() + ": " + header.message);
    header.format = format;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(header));
    if (!png_image_finish_read(&header, nullptr, bytes.data(), 0, nullptr)) {
        png_image_free(&header);
        throw std::runtime_error("failed to decode PNG " + path.string() + ": " + header.message);
    }
    width = int(header.width);
    height = int(header.height);
    return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    write_gray_or_rgb(path, to_bytes(img), img.width, img.height, PNG_FORMAT_RGB);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    const auto bytes = to_bytes(img);
    png_image header = make_header(img.width, img.height, PNG_FORMAT_RGB);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&header, nullptr, &size, 0, bytes.data(), 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + header.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&header, out.data(), &size, 0, bytes.data(), 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + header.message);
    out.resize(size);
    return out;
}

Image read_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto bytes = read_raw(path, PNG_FORMAT_RGB, w, h);
    Image img(h, w, 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = float(bytes[i]) / 255.0f;
    return img;
}

Image quantize_8bit(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = float(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    return out;
}

void write_mask_png(const std::filesystem::path& path, const MaskSpec& mask) {
    std::vector<std::uint8_t> bytes(mask.keep.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.keep[i] ? 255 : 0;
    write_gray_or_rgb(path, bytes, mask.width, mask.height, PNG_FORMAT_GRAY);
}

MaskSpec read_mask_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto bytes = read_raw(path, PNG_FORMAT_GRAY, w, h);
    MaskSpec mask;
    mask.height = h;
    mask.width = w;
    mask.keep.resize(bytes.size());
    bool all_zero = true;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        mask.keep[i] = bytes[i] >= 128 ? 1 : 0;
        all_zero = all_zero && mask.keep[i] == 0;
    }
    mask.kind = all_zero ? MaskKind::full : MaskKind::large_area;
    return mask;
}

}  // namespace t2t
