#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "t2t/image.hpp"

namespace t2t {

enum class ObjectClass { car, truck, pedestrian, traffic_cone, pothole, stone, box, dog, puddle, plastic_bag };
enum class Color { red, orange, yellow, green, blue, white, black, gray, brown, silver };
enum class View { vehicle_side, roadside };
enum class Weather { clear, rain, fog, night };
enum class RoadType { urban, highway, rural, tunnel };
enum class Column { left, center, right };
enum class Band { near, middle, far };

inline constexpr int kNumClasses = 10;
inline constexpr int kNumColors = 10;

inline constexpr std::array<ObjectClass, kNumClasses> kAllClasses = {
    ObjectClass::car,     ObjectClass::truck, ObjectClass::pedestrian, ObjectClass::traffic_cone,
    ObjectClass::pothole, ObjectClass::stone, ObjectClass::box,        ObjectClass::dog,
    ObjectClass::puddle,  ObjectClass::plastic_bag};
inline constexpr std::array<Color, kNumColors> kAllColors = {
    Color::red,   Color::orange, Color::yellow, Color::green, Color::blue,
    Color::white, Color::black,  Color::gray,   Color::brown, Color::silver};

// Snake-case identifiers used in manifests and configs.
std::string to_string(ObjectClass c);
std::string to_string(Color c);
std::string to_string(View v);
std::string to_string(Weather w);
std::string to_string(RoadType r);
std::string to_string(Column c);
std::string to_string(Band b);

// Parsers throw std::invalid_argument on unknown names.
ObjectClass parse_object_class(std::string_view s);
Color parse_color(std::string_view s);
View parse_view(std::string_view s);
Weather parse_weather(std::string_view s);
RoadType parse_road_type(std::string_view s);

struct PositionCell {
    Column column = Column::center;
    Band band = Band::middle;
    bool operator==(const PositionCell&) const = default;
};

/// 3x3 grid cell of the bbox center: columns are thirds of the width, bands
/// are thirds of the height with `far` on top.
PositionCell position_cell_of(const Rect& bbox, int width, int height);

/// Allowed colors per class; the first entry is the class default.
const std::vector<Color>& class_colors(ObjectClass c);

struct SceneObject {
    ObjectClass class_name = ObjectClass::car;
    Rect bbox;
    Color color = Color::red;
    PositionCell position_cell;

    bool operator==(const SceneObject&) const = default;
};

struct SceneLayout {
    View view = View::vehicle_side;
    Weather weather = Weather::clear;
    RoadType road_type = RoadType::urban;
    std::vector<SceneObject> objects;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 0;

    bool operator==(const SceneLayout&) const = default;
};

struct SampleRecord {
    std::string id;
    Image image;
    SceneLayout layout;
    std::string global_caption;
    std::vector<std::pair<Rect, std::string>> object_captions;
};

/// Throws std::invalid_argument for out-of-bounds or degenerate boxes and
/// stale position cells.
void validate_layout(const SceneLayout& layout);

/// Pure function of the layout. Every object first darkens its whole bbox
/// (contact shadow) and then draws its class glyph, so an object changes
/// exactly its bbox pixels relative to the object-free render.
Image render(const SceneLayout& layout);

/// Row of the horizon for a view at the given image height.
int horizon_row(View view, int height);

struct CorpusConfig {
    std::array<double, kNumClasses> class_weights;
    std::array<double, 2> view_weights{0.5, 0.5};
    std::array<double, 4> weather_weights{0.4, 0.2, 0.2, 0.2};
    std::array<double, 4> road_type_weights{0.25, 0.25, 0.25, 0.25};
    /// (height, width) buckets and their weights.
    std::vector<std::pair<int, int>> resolutions{{64, 64}, {64, 96}};
    std::vector<double> resolution_weights{0.5, 0.5};
    int min_objects = 0;
    int max_objects = 5;
    double max_overlap_iou = 0.3;
    /// Largest share of the smaller box another box may cover.
    double max_covered_fraction = 0.5;
    int max_placement_retries = 100;

    CorpusConfig() { class_weights.fill(1.0); }
    /// Throws on negative or all-zero weights and invalid counts.
    void validate() const;
};

/// Layout drawn from a per-record seed.
SceneLayout generate_layout(std::uint64_t record_seed, const CorpusConfig& config);

/// Seed used for record `index` of a corpus seeded with `corpus_seed`.
std::uint64_t record_seed(std::uint64_t corpus_seed, std::size_t index);

/// Record `index` in isolation: layout, render and captions.
SampleRecord generate_record(std::uint64_t corpus_seed, std::size_t index, const CorpusConfig& config);

std::vector<SampleRecord> generate_corpus(std::size_t n, std::uint64_t seed, const CorpusConfig& config,
                                          int workers = 1);

}  // namespace t2t
