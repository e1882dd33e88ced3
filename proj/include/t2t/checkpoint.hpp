#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2t/model.hpp"

namespace t2t {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
    bool operator==(const CheckpointArray&) const = default;
};

// File layout: 8-byte magic "T2TCKPT\0", u64 little-endian manifest length,
// UTF-8 JSON manifest, then the raw little-endian f32 payload. The manifest
// records the format version, kind, model config, each array's name, shape,
// dtype and byte offset into the payload, the payload size and its CRC-32,
// plus a free-form "state" object.
struct Checkpoint {
    std::string kind;  // "model", "lora" or "optimizer"
    ModelConfig config;
    nlohmann::json state = nlohmann::json::object();
    std::vector<CheckpointArray> arrays;

    const CheckpointArray& array(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on any inconsistency between manifest and payload.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames, so readers never see a partial file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

/// Every array of `params` in layout order, optionally with a name prefix.
void append_params(Checkpoint& ckpt, const Params<float>& params, const std::string& prefix = "");
/// Fills a buffer for `layout` from arrays named prefix + layout name; shapes must match.
Params<float> extract_params(const Checkpoint& ckpt, std::shared_ptr<const ParamLayout> layout,
                             const std::string& prefix = "");

}  // namespace t2t
