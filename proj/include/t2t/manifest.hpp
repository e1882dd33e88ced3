#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "t2t/scene.hpp"

namespace t2t {

struct ManifestObject {
    Rect bbox;
    ObjectClass class_name = ObjectClass::car;
    Color color = Color::red;
    std::string local_caption;

    bool operator==(const ManifestObject&) const = default;
};

/// One JSONL line. `image_path` is relative to the manifest's directory.
struct ManifestEntry {
    std::string id;
    std::string image_path;
    int width = 0;
    int height = 0;
    View view = View::vehicle_side;
    Weather weather = Weather::clear;
    RoadType road_type = RoadType::urban;
    std::string global_caption;
    std::vector<ManifestObject> objects;
    std::string split = "train";
    std::uint64_t seed = 0;

    bool operator==(const ManifestEntry&) const = default;
};

ManifestEntry to_manifest_entry(const SampleRecord& record, std::string image_path, std::string split);
SceneLayout layout_of(const ManifestEntry& entry);

std::string to_jsonl_line(const ManifestEntry& entry);
/// Throws std::runtime_error with the offending line number on malformed input.
ManifestEntry parse_jsonl_line(const std::string& line);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Number of validation records for a corpus; the last ones become `val`.
std::size_t validation_count(std::size_t n, double val_fraction);

}  // namespace t2t
