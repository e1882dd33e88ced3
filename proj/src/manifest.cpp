#include "t2t/manifest.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace t2t {

using nlohmann::json;

ManifestEntry to_manifest_entry(const SampleRecord& record, std::string image_path, std::string split) {
    ManifestEntry e;
    e.id = record.id;
    e.image_path = std::move(image_path);
    e.width = record.layout.width;
    e.height = record.layout.height;
    e.view = record.layout.view;
    e.weather = record.layout.weather;
    e.road_type = record.layout.road_type;
    e.global_caption = record.global_caption;
    for (std::size_t i = 0; i < record.layout.objects.size(); ++i) {
        const auto& o = record.layout.objects[i];
        const std::string caption = i < record.object_captions.size() ? record.object_captions[i].second : "";
        e.objects.push_back({o.bbox, o.class_name, o.color, caption});
    }
    e.split = std::move(split);
    e.seed = record.layout.seed;
    return e;
}

SceneLayout layout_of(const ManifestEntry& entry) {
    SceneLayout layout;
    layout.view = entry.view;
    layout.weather = entry.weather;
    layout.road_type = entry.road_type;
    layout.width = entry.width;
    layout.height = entry.height;
    layout.seed = entry.seed;
    for (const auto& o : entry.objects)
        layout.objects.push_back({o.class_name, o.bbox, o.color, position_cell_of(o.bbox, entry.width, entry.height)});
    return layout;
}

std::string to_jsonl_line(const ManifestEntry& e) {
    json objects = json::array();
    for (const auto& o : e.objects)
        objects.push_back({{"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}},
                           {"class", to_string(o.class_name)},
                           {"color", to_string(o.color)},
                           {"local_caption", o.local_caption}});
    json j = {{"id", e.id},
              {"image_path", e.image_path},
              {"width", e.width},
              {"height", e.height},
              {"view", to_string(e.view)},
              {"weather", to_string(e.weather)},
              {"road_type", to_string(e.road_type)},
              {"global_caption", e.global_caption},
              {"objects", objects},
              {"split", e.split},
              {"seed", e.seed}};
    return j.dump();
}

ManifestEntry parse_jsonl_line(const std::string& line) {
    ManifestEntry e;
    try {
        const json j = json::parse(line);
        e.id = j.at("id").get<std::string>();
        e.image_path = j.at("image_path").get<std::string>();
        e.width = j.at("width").get<int>();
        e.height = j.at("height").get<int>();
        e.view = parse_view(j.at("view").get<std::string>());
        e.weather = parse_weather(j.at("weather").get<std::string>());
        e.road_type = parse_road_type(j.at("road_type").get<std::string>());
        e.global_caption = j.at("global_caption").get<std::string>();
        for (const auto& o : j.at("objects")) {
            const auto& b = o.at("bbox");
            if (b.size() != 4) throw std::runtime_error("bbox must have 4 entries");
            ManifestObject mo;
            mo.bbox = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
            mo.class_name = parse_object_class(o.at("class").get<std::string>());
            mo.color = parse_color(o.at("color").get<std::string>());
            mo.local_caption = o.at("local_caption").get<std::string>();
            e.objects.push_back(std::move(mo));
        }
        e.split = j.at("split").get<std::string>();
        if (e.split != "train" && e.split != "val") throw std::runtime_error("split must be train or val");
        e.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& ex) {
        throw std::runtime_error(std::string("manifest: ") + ex.what());
    } catch (const std::invalid_argument& ex) {
        throw std::runtime_error(std::string("manifest: ") + ex.what());
    }
    return e;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open manifest for writing: " + path.string());
    for (const auto& e : entries) out << to_jsonl_line(e) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            entries.push_back(parse_jsonl_line(line));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return entries;
}

std::size_t validation_count(std::size_t n, double val_fraction) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw std::invalid_argument("val_fraction must lie in [0, 1)");
    return std::size_t(std::llround(double(n) * val_fraction));
}

}  // namespace t2t
