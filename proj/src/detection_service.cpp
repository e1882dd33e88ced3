#include "t2t/detection_service.hpp"

#include <array>
#include <stdexcept>

#include <httplib.h>

#include "t2t/image_io.hpp"

namespace t2t {
namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

nlohmann::json post_json(const ServiceUrl& url, int timeout_seconds, const nlohmann::json& request) {
    httplib::Client client(url.scheme_host_port);
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    const auto res = client.Post(url.path, request.dump(), "application/json");
    if (!res) throw IngestionError("service request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IngestionError("service returned HTTP " + std::to_string(res->status));
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("service returned malformed JSON: ") + e.what());
    }
}

nlohmann::json bbox_json(const Rect& r) { return nlohmann::json::array({r.x0, r.y0, r.x1, r.y1}); }

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (std::uint32_t(bytes[i]) << 16) | (std::uint32_t(bytes[i + 1]) << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = std::uint32_t(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= std::uint32_t(bytes[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::array<int, 256> lookup;
    lookup.fill(-1);
    for (int i = 0; i < 64; ++i) lookup[std::uint8_t(kAlphabet[i])] = i;
    if (text.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t v = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char ch = text[i + k];
            if (ch == '=' && i + 4 == text.size() && k >= 2) {
                ++pad;
                v <<= 6;
                continue;
            }
            const int d = lookup[std::uint8_t(ch)];
            if (d < 0 || pad > 0) throw std::invalid_argument("base64: invalid character");
            v = (v << 6) | std::uint32_t(d);
        }
        out.push_back(std::uint8_t(v >> 16));
        if (pad < 2) out.push_back(std::uint8_t(v >> 8));
        if (pad < 1) out.push_back(std::uint8_t(v));
    }
    return out;
}

nlohmann::json detection_request_json(const Image& image, const std::vector<std::string>& classes) {
    return {{"image_png_base64", base64_encode(encode_png(image))}, {"classes", classes}};
}

std::vector<DetectionBox> parse_detection_response(const nlohmann::json& body) {
    std::vector<DetectionBox> boxes;
    try {
        for (const auto& item : body.at("boxes")) {
            const auto& b = item.at("bbox");
            if (!b.is_array() || b.size() != 4) throw IngestionError("detection bbox must have 4 entries");
            DetectionBox box;
            box.bbox = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
            box.class_name = item.at("class").get<std::string>();
            box.score = item.at("score").get<double>();
            if (!box.bbox.valid()) throw IngestionError("detection bbox is degenerate");
            if (!(box.score >= 0.0 && box.score <= 1.0)) throw IngestionError("detection score outside [0, 1]");
            boxes.push_back(std::move(box));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("detection response violates schema: ") + e.what());
    }
    return boxes;
}

nlohmann::json caption_request_json(const Image& image, const DetectionBox& box) {
    return {{"image_png_base64", base64_encode(encode_png(image))},
            {"bbox", bbox_json(box.bbox)},
            {"class", box.class_name}};
}

std::string parse_caption_response(const nlohmann::json& body) {
    try {
        return body.at("caption").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("caption response violates schema: ") + e.what());
    }
}

ServiceUrl parse_service_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("service URL lacks a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    ServiceUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (out.scheme_host_port.size() <= scheme_end + 3) throw std::invalid_argument("service URL lacks a host: " + url);
    return out;
}

HttpDetectionClient::HttpDetectionClient(std::string url, int timeout_seconds)
    : url_(parse_service_url(url)), timeout_seconds_(timeout_seconds) {}

std::vector<DetectionBox> HttpDetectionClient::detect(const Image& image, const std::vector<std::string>& classes) {
    return parse_detection_response(post_json(url_, timeout_seconds_, detection_request_json(image, classes)));
}

HttpObjectCaptioner::HttpObjectCaptioner(std::string url, Image image, int timeout_seconds)
    : url_(parse_service_url(url)), image_(std::move(image)), timeout_seconds_(timeout_seconds) {}

std::optional<std::string> HttpObjectCaptioner::caption(const DetectionBox& box) {
    return parse_caption_response(post_json(url_, timeout_seconds_, caption_request_json(image_, box)));
}

}  // namespace t2t
