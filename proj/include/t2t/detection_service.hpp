#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t2t/caption.hpp"
#include "t2t/image.hpp"

#include <json.hpp>

namespace t2t {

// Wire format (JSON over HTTP POST, Content-Type application/json):
//
//   detector request : {"image_png_base64": str, "classes": [str, ...]}
//   detector response: {"boxes": [{"bbox": [x0, y0, x1, y1], "class": str, "score": num}, ...]}
//   captioner request : {"image_png_base64": str, "bbox": [x0, y0, x1, y1], "class": str}
//   captioner response: {"caption": str}
//
// Any transport failure, non-200 status or schema violation is an IngestionError.

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

nlohmann::json detection_request_json(const Image& image, const std::vector<std::string>& classes);
std::vector<DetectionBox> parse_detection_response(const nlohmann::json& body);
nlohmann::json caption_request_json(const Image& image, const DetectionBox& box);
std::string parse_caption_response(const nlohmann::json& body);

struct ServiceUrl {
    std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
    std::string path;              // e.g. "/detect"
};
/// Splits "http://host:port/path"; throws std::invalid_argument otherwise.
ServiceUrl parse_service_url(const std::string& url);

class DetectionClient {
public:
    virtual ~DetectionClient() = default;
    virtual std::vector<DetectionBox> detect(const Image& image, const std::vector<std::string>& classes) = 0;
};

/// Opens a fresh connection per request, so one instance may be shared by
/// worker threads.
class HttpDetectionClient : public DetectionClient {
public:
    explicit HttpDetectionClient(std::string url, int timeout_seconds = 30);
    std::vector<DetectionBox> detect(const Image& image, const std::vector<std::string>& classes) override;

private:
    ServiceUrl url_;
    int timeout_seconds_;
};

/// Captions boxes of one image through a remote VLM endpoint.
class HttpObjectCaptioner : public ObjectCaptioner {
public:
    HttpObjectCaptioner(std::string url, Image image, int timeout_seconds = 30);
    std::optional<std::string> caption(const DetectionBox& box) override;

private:
    ServiceUrl url_;
    Image image_;
    int timeout_seconds_;
};

}  // namespace t2t
