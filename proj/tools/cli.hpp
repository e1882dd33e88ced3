#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2t/caption.hpp"
#include "t2t/detection_service.hpp"
#include "t2t/manifest.hpp"
#include "t2t/trainer.hpp"

namespace t2t::cli {

/// Bad flag values found after parsing; reported like parse errors (exit 2).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Runs one command. Exit codes: 0 success, 1 runtime error, 2 usage error.
/// `env_seed` is the value of TEXT2TRAFFIC_SEED, if set.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const std::optional<std::string>& env_seed = std::nullopt);

/// flag > config file > TEXT2TRAFFIC_SEED > fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& config,
                           const std::optional<std::string>& env, std::uint64_t fallback = 0);

/// Stage defaults, then the config file, then flag values (same key names).
/// The stage comes from the flag, else the file, else 1.
TrainConfig resolve_train_config(const std::optional<int>& stage_flag,
                                 const std::map<std::string, std::string>& file_values,
                                 const std::map<std::string, std::string>& flag_values,
                                 const std::optional<std::string>& env_seed);

/// Re-annotates one manifest record: boxes from the detector (or ground
/// truth), then NMS, size filter and captions.
ManifestEntry recaption(const ManifestEntry& entry, const Image& image, const AnnotateParams& params,
                        DetectionClient* detector, const std::optional<std::string>& vlm_url);

/// Parses "x0,y0,x1,y1".
Rect parse_bbox(const std::string& text);

nlohmann::json format_versions();

}  // namespace t2t::cli
