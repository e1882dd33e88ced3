#include "t2t/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "t2t/caption.hpp"
#include "t2t/parallel.hpp"
#include "t2t/rng.hpp"

namespace t2t {
namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<const char*, N>& names, const char* what) {
    for (std::size_t i = 0; i < N; ++i)
        if (s == names[i]) return static_cast<Enum>(i);
    throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(s));
}

constexpr std::array<const char*, 10> kClassNames = {"car",     "truck", "pedestrian", "traffic_cone",
                                                     "pothole", "stone", "box",        "dog",
                                                     "puddle",  "plastic_bag"};
constexpr std::array<const char*, 10> kColorNames = {"red",   "orange", "yellow", "green", "blue",
                                                     "white", "black",  "gray",   "brown", "silver"};
constexpr std::array<const char*, 2> kViewNames = {"vehicle_side", "roadside"};
constexpr std::array<const char*, 4> kWeatherNames = {"clear", "rain", "fog", "night"};
constexpr std::array<const char*, 4> kRoadNames = {"urban", "highway", "rural", "tunnel"};
constexpr std::array<const char*, 3> kColumnNames = {"left", "center", "right"};
constexpr std::array<const char*, 3> kBandNames = {"near", "middle", "far"};

struct Rgb {
    float r, g, b;
};

Rgb scale(Rgb c, float k) { return {c.r * k, c.g * k, c.b * k}; }
Rgb mix(Rgb a, Rgb b, float t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb palette(Color c) {
    switch (c) {
        case Color::red: return {0.85f, 0.12f, 0.10f};
        case Color::orange: return {1.00f, 0.50f, 0.05f};
        case Color::yellow: return {0.95f, 0.85f, 0.10f};
        case Color::green: return {0.15f, 0.65f, 0.20f};
        case Color::blue: return {0.15f, 0.30f, 0.85f};
        case Color::white: return {0.95f, 0.95f, 0.95f};
        case Color::black: return {0.08f, 0.08f, 0.09f};
        case Color::gray: return {0.50f, 0.50f, 0.52f};
        case Color::brown: return {0.50f, 0.32f, 0.15f};
        case Color::silver: return {0.75f, 0.77f, 0.80f};
    }
    return {0.f, 0.f, 0.f};
}

struct SizeRange {
    int w_min, w_max, h_min, h_max;
};

SizeRange class_size(ObjectClass c) {
    switch (c) {
        case ObjectClass::car: return {12, 18, 8, 11};
        case ObjectClass::truck: return {16, 24, 12, 16};
        case ObjectClass::pedestrian: return {4, 6, 10, 14};
        case ObjectClass::traffic_cone: return {8, 8, 8, 8};
        case ObjectClass::pothole: return {8, 14, 4, 6};
        case ObjectClass::stone: return {4, 7, 4, 6};
        case ObjectClass::box: return {6, 10, 6, 9};
        case ObjectClass::dog: return {7, 10, 5, 7};
        case ObjectClass::puddle: return {10, 16, 4, 6};
        case ObjectClass::plastic_bag: return {5, 7, 5, 7};
    }
    return {4, 4, 4, 4};
}

// Glyph membership in normalized bbox coordinates (u, v) in (0, 1). Returns
// 0 for "shadow only", 1 for body color, 2 for the accent color.
int glyph_cell(ObjectClass c, double u, double v) {
    auto ellipse = [](double u, double v, double cu, double cv, double ru, double rv) {
        const double du = (u - cu) / ru, dv = (v - cv) / rv;
        return du * du + dv * dv <= 1.0;
    };
    switch (c) {
        case ObjectClass::car: {
            if (v > 0.8 && ((u > 0.1 && u < 0.3) || (u > 0.7 && u < 0.9))) return 2;
            if (v < 0.3 && (u < 0.15 || u > 0.85)) return 0;
            if (v > 0.12 && v < 0.4 && u > 0.25 && u < 0.75) return 2;
            return 1;
        }
        case ObjectClass::truck: {
            if (v > 0.85 && ((u > 0.05 && u < 0.22) || (u > 0.6 && u < 0.8))) return 2;
            if (u >= 0.3 && u < 0.34) return 0;
            if (u < 0.3) return v > 0.25 ? (v < 0.45 && u > 0.08 ? 2 : 1) : 0;
            return 1;
        }
        case ObjectClass::pedestrian: {
            if (ellipse(u, v, 0.5, 0.14, 0.32, 0.14)) return 2;
            if (v >= 0.3 && v < 0.7 && u > 0.1 && u < 0.9) return 1;
            if (v >= 0.7 && ((u > 0.15 && u < 0.45) || (u > 0.55 && u < 0.85))) return 1;
            return 0;
        }
        case ObjectClass::traffic_cone: {
            if (v > 0.85) return 1;
            if (std::abs(u - 0.5) <= 0.55 * v) return (v > 0.45 && v < 0.62) ? 2 : 1;
            return 0;
        }
        case ObjectClass::pothole: return ellipse(u, v, 0.5, 0.5, 0.5, 0.5) ? 1 : 0;
        case ObjectClass::stone: return std::abs(u - 0.5) + 0.8 * std::abs(v - 0.5) <= 0.5 ? 1 : 0;
        case ObjectClass::box: return std::abs(u - 0.5) < 0.1 ? 2 : 1;
        case ObjectClass::dog: {
            if (ellipse(u, v, 0.84, 0.3, 0.16, 0.28)) return 1;
            if (ellipse(u, v, 0.45, 0.55, 0.4, 0.3)) return 1;
            if (v > 0.75 && ((u > 0.12 && u < 0.25) || (u > 0.6 && u < 0.72))) return 1;
            return 0;
        }
        case ObjectClass::puddle: {
            if (ellipse(u, v, 0.4, 0.4, 0.18, 0.18)) return 2;
            return ellipse(u, v, 0.5, 0.5, 0.5, 0.5) ? 1 : 0;
        }
        case ObjectClass::plastic_bag: {
            if (v < 0.3 && ((u > 0.15 && u < 0.35) || (u > 0.65 && u < 0.85))) return 1;
            return ellipse(u, v, 0.5, 0.62, 0.5, 0.38) ? 1 : 0;
        }
    }
    return 0;
}

Rgb accent(ObjectClass c, Rgb body) {
    switch (c) {
        case ObjectClass::car:
        case ObjectClass::truck: return {0.18f, 0.22f, 0.28f};  // windows / wheels
        case ObjectClass::pedestrian: return {0.85f, 0.68f, 0.55f};
        case ObjectClass::traffic_cone: return {0.97f, 0.97f, 0.97f};
        case ObjectClass::box: return {0.78f, 0.64f, 0.42f};
        case ObjectClass::puddle: return {0.70f, 0.80f, 0.95f};
        default: return body;
    }
}

struct Appearance {
    Rgb sky_top, sky_bottom, verge, road, marking;
    float light;      // global brightness multiplier
    float fog;        // blend toward fog color
    bool rain;
};

Appearance appearance(const SceneLayout& layout) {
    Appearance a{};
    switch (layout.road_type) {
        case RoadType::urban:
            a.sky_top = {0.45f, 0.58f, 0.80f};
            a.sky_bottom = {0.62f, 0.60f, 0.58f};  // building line
            a.verge = {0.62f, 0.60f, 0.57f};
            a.road = {0.30f, 0.30f, 0.32f};
            break;
        case RoadType::highway:
            a.sky_top = {0.40f, 0.60f, 0.90f};
            a.sky_bottom = {0.75f, 0.82f, 0.92f};
            a.verge = {0.38f, 0.46f, 0.30f};
            a.road = {0.27f, 0.27f, 0.29f};
            break;
        case RoadType::rural:
            a.sky_top = {0.50f, 0.68f, 0.88f};
            a.sky_bottom = {0.80f, 0.86f, 0.80f};
            a.verge = {0.28f, 0.55f, 0.22f};
            a.road = {0.42f, 0.36f, 0.28f};
            break;
        case RoadType::tunnel:
            a.sky_top = {0.20f, 0.15f, 0.10f};
            a.sky_bottom = {0.45f, 0.33f, 0.18f};
            a.verge = {0.30f, 0.24f, 0.17f};
            a.road = {0.22f, 0.21f, 0.21f};
            break;
    }
    a.marking = {0.92f, 0.90f, 0.80f};
    a.light = 1.0f;
    a.fog = 0.0f;
    a.rain = false;
    switch (layout.weather) {
        case Weather::clear: break;
        case Weather::rain:
            a.light = 0.8f;
            a.rain = true;
            break;
        case Weather::fog: a.fog = 0.45f; break;
        case Weather::night: a.light = 0.3f; break;
    }
    return a;
}

constexpr Rgb kFogColor = {0.82f, 0.83f, 0.86f};

// Road edges (in pixels) at a given row below the horizon.
std::pair<double, double> road_span(View view, int width, double depth) {
    // depth: 0 at the horizon, 1 at the bottom row.
    double left_h, right_h, left_b, right_b;
    if (view == View::vehicle_side) {
        left_h = 0.45, right_h = 0.55, left_b = 0.02, right_b = 0.98;
    } else {
        left_h = 0.20, right_h = 0.62, left_b = 0.05, right_b = 1.0;
    }
    return {width * (left_h + (left_b - left_h) * depth), width * (right_h + (right_b - right_h) * depth)};
}

Rgb background_pixel(const SceneLayout& layout, const Appearance& a, int horizon, int x, int y) {
    Rgb c;
    if (y < horizon) {
        const float t = horizon > 1 ? float(y) / float(horizon - 1) : 1.0f;
        c = mix(a.sky_top, a.sky_bottom, t);
    } else {
        const double depth = layout.height - 1 > horizon ? double(y - horizon) / double(layout.height - 1 - horizon) : 1.0;
        const auto [left, right] = road_span(layout.view, layout.width, depth);
        const double xc = x + 0.5;
        if (xc >= left && xc < right) {
            c = a.road;
            const double mid = 0.5 * (left + right);
            const double half_line = 0.012 * layout.width * (0.3 + depth);
            const bool dash = ((y - horizon) / 3) % 2 == 0;
            if (std::abs(xc - mid) < half_line + 0.5 && dash) c = a.marking;
        } else {
            c = a.verge;
        }
    }
    if (a.fog > 0.0f) {
        const float extra = y < horizon ? 0.25f : 0.0f;
        c = mix(c, kFogColor, a.fog + extra);
    }
    if (a.rain && (x * 7 + y * 3) % 23 == 0) c = mix(c, {0.80f, 0.85f, 0.95f}, 0.5f);
    c = scale(c, a.light);
    if (a.rain) c.b = std::min(1.0f, c.b + 0.04f);
    return c;
}

Rgb object_light(const Appearance& a, Rgb c) {
    if (a.fog > 0.0f) c = mix(c, kFogColor, 0.35f);
    if (a.light < 1.0f) c = scale(c, a.light < 0.5f ? 0.6f : 0.85f);
    return c;
}

int pick_weighted(Rng& rng, const double* weights, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += weights[i];
    double r = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
        if (r < weights[i]) return int(i);
        r -= weights[i];
    }
    for (std::size_t i = n; i-- > 0;)
        if (weights[i] > 0.0) return int(i);
    return 0;
}

void check_weights(const double* w, std::size_t n, const char* what) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(w[i] >= 0.0) || !std::isfinite(w[i]))
            throw std::invalid_argument(std::string("CorpusConfig: invalid ") + what + " weight");
        total += w[i];
    }
    if (total <= 0.0) throw std::invalid_argument(std::string("CorpusConfig: all ") + what + " weights zero");
}

}  // namespace

std::string to_string(ObjectClass c) { return kClassNames[std::size_t(c)]; }
std::string to_string(Color c) { return kColorNames[std::size_t(c)]; }
std::string to_string(View v) { return kViewNames[std::size_t(v)]; }
std::string to_string(Weather w) { return kWeatherNames[std::size_t(w)]; }
std::string to_string(RoadType r) { return kRoadNames[std::size_t(r)]; }
std::string to_string(Column c) { return kColumnNames[std::size_t(c)]; }
std::string to_string(Band b) { return kBandNames[std::size_t(b)]; }

ObjectClass parse_object_class(std::string_view s) { return parse_enum<ObjectClass>(s, kClassNames, "class"); }
Color parse_color(std::string_view s) { return parse_enum<Color>(s, kColorNames, "color"); }
View parse_view(std::string_view s) { return parse_enum<View>(s, kViewNames, "view"); }
Weather parse_weather(std::string_view s) { return parse_enum<Weather>(s, kWeatherNames, "weather"); }
RoadType parse_road_type(std::string_view s) { return parse_enum<RoadType>(s, kRoadNames, "road type"); }

PositionCell position_cell_of(const Rect& bbox, int width, int height) {
    // Compare 2*center against thirds scaled by 2 to stay in integers.
    const long cx2 = long(bbox.x0) + bbox.x1;
    const long cy2 = long(bbox.y0) + bbox.y1;
    auto third = [](long c2, int extent) { return std::clamp(int((3 * c2) / (2L * extent)), 0, 2); };
    PositionCell cell;
    cell.column = static_cast<Column>(third(cx2, width));
    cell.band = static_cast<Band>(2 - third(cy2, height));
    return cell;
}

const std::vector<Color>& class_colors(ObjectClass c) {
    static const std::array<std::vector<Color>, kNumClasses> table = {{
        {Color::red, Color::blue, Color::white, Color::black, Color::silver},
        {Color::white, Color::blue, Color::red, Color::yellow},
        {Color::red, Color::blue, Color::green, Color::yellow, Color::black},
        {Color::orange},
        {Color::black},
        {Color::gray, Color::brown},
        {Color::brown},
        {Color::brown, Color::black, Color::white},
        {Color::blue},
        {Color::white},
    }};
    return table[std::size_t(c)];
}

int horizon_row(View view, int height) {
    return view == View::vehicle_side ? int(std::lround(0.42 * height)) : int(std::lround(0.25 * height));
}

void validate_layout(const SceneLayout& layout) {
    if (layout.width < 1 || layout.height < 1) throw std::invalid_argument("layout: non-positive size");
    if (layout.objects.size() > 8) throw std::invalid_argument("layout: more than 8 objects");
    for (const auto& o : layout.objects) {
        const Rect& b = o.bbox;
        if (!(0 <= b.x0 && b.x0 < b.x1 && b.x1 <= layout.width && 0 <= b.y0 && b.y0 < b.y1 &&
              b.y1 <= layout.height))
            throw std::invalid_argument("layout: object bbox out of bounds or degenerate");
        if (o.position_cell != position_cell_of(b, layout.width, layout.height))
            throw std::invalid_argument("layout: stale position cell");
    }
}

Image render(const SceneLayout& layout) {
    validate_layout(layout);
    const Appearance a = appearance(layout);
    const int horizon = horizon_row(layout.view, layout.height);
    Image img(layout.height, layout.width, 3);
    for (int y = 0; y < layout.height; ++y)
        for (int x = 0; x < layout.width; ++x) {
            const Rgb c = background_pixel(layout, a, horizon, x, y);
            img.at(y, x, 0) = c.r;
            img.at(y, x, 1) = c.g;
            img.at(y, x, 2) = c.b;
        }
    for (const auto& o : layout.objects) {
        const Rgb body = object_light(a, palette(o.color));
        const Rgb acc = object_light(a, accent(o.class_name, palette(o.color)));
        const Rect& b = o.bbox;
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x) {
                const double u = (x - b.x0 + 0.5) / b.width();
                const double v = (y - b.y0 + 0.5) / b.height();
                const int cell = glyph_cell(o.class_name, u, v);
                Rgb c;
                if (cell == 0) {
                    c = {img.at(y, x, 0) * 0.55f, img.at(y, x, 1) * 0.55f, img.at(y, x, 2) * 0.55f};
                } else {
                    c = cell == 1 ? body : acc;
                }
                img.at(y, x, 0) = c.r;
                img.at(y, x, 1) = c.g;
                img.at(y, x, 2) = c.b;
            }
    }
    return img;
}

void CorpusConfig::validate() const {
    check_weights(class_weights.data(), class_weights.size(), "class");
    check_weights(view_weights.data(), view_weights.size(), "view");
    check_weights(weather_weights.data(), weather_weights.size(), "weather");
    check_weights(road_type_weights.data(), road_type_weights.size(), "road type");
    if (resolutions.empty() || resolutions.size() != resolution_weights.size())
        throw std::invalid_argument("CorpusConfig: resolution buckets and weights differ in length");
    check_weights(resolution_weights.data(), resolution_weights.size(), "resolution");
    for (auto [h, w] : resolutions)
        if (h < 16 || w < 16) throw std::invalid_argument("CorpusConfig: resolution too small");
    if (min_objects < 0 || max_objects > 8 || min_objects > max_objects)
        throw std::invalid_argument("CorpusConfig: object count range must lie in [0, 8]");
    if (max_placement_retries < 0) throw std::invalid_argument("CorpusConfig: negative retries");
}

SceneLayout generate_layout(std::uint64_t seed, const CorpusConfig& config) {
    config.validate();
    Rng rng(seed);
    SceneLayout layout;
    layout.seed = seed;
    const int res = pick_weighted(rng, config.resolution_weights.data(), config.resolution_weights.size());
    layout.height = config.resolutions[std::size_t(res)].first;
    layout.width = config.resolutions[std::size_t(res)].second;
    layout.view = static_cast<View>(pick_weighted(rng, config.view_weights.data(), 2));
    layout.weather = static_cast<Weather>(pick_weighted(rng, config.weather_weights.data(), 4));
    layout.road_type = static_cast<RoadType>(pick_weighted(rng, config.road_type_weights.data(), 4));

    const int horizon = horizon_row(layout.view, layout.height);
    const int count = rng.uniform_int(config.min_objects, config.max_objects);
    for (int i = 0; i < count; ++i) {
        const auto cls = static_cast<ObjectClass>(pick_weighted(rng, config.class_weights.data(), kNumClasses));
        const auto& colors = class_colors(cls);
        const Color color = colors[std::size_t(rng.uniform_int(0, int(colors.size()) - 1))];
        const SizeRange sz = class_size(cls);
        const int w = std::min(layout.width, rng.uniform_int(sz.w_min, sz.w_max));
        const int h = std::min(layout.height, rng.uniform_int(sz.h_min, sz.h_max));
        bool placed = false;
        for (int attempt = 0; attempt <= config.max_placement_retries && !placed; ++attempt) {
            const int y1 = rng.uniform_int(std::min(layout.height, std::max(h, horizon + 4)), layout.height);
            const int x0 = rng.uniform_int(0, layout.width - w);
            const Rect bbox{x0, y1 - h, x0 + w, y1};
            const bool overlaps = std::any_of(layout.objects.begin(), layout.objects.end(), [&](const SceneObject& o) {
                if (iou(o.bbox, bbox) > config.max_overlap_iou) return true;
                // A small box inside a large one passes the IoU test but would be hidden.
                const Rect inter{std::max(o.bbox.x0, bbox.x0), std::max(o.bbox.y0, bbox.y0),
                                 std::min(o.bbox.x1, bbox.x1), std::min(o.bbox.y1, bbox.y1)};
                return double(inter.area()) > config.max_covered_fraction * double(std::min(o.bbox.area(), bbox.area()));
            });
            if (overlaps) continue;
            layout.objects.push_back({cls, bbox, color, position_cell_of(bbox, layout.width, layout.height)});
            placed = true;
        }
    }
    return layout;
}

std::uint64_t record_seed(std::uint64_t corpus_seed, std::size_t index) {
    return derive_seed(corpus_seed, {0x636f72707573ULL, index});
}

SampleRecord generate_record(std::uint64_t corpus_seed, std::size_t index, const CorpusConfig& config) {
    SampleRecord rec;
    rec.layout = generate_layout(record_seed(corpus_seed, index), config);
    char id[32];
    std::snprintf(id, sizeof(id), "s%06zu", index);
    rec.id = id;
    rec.image = render(rec.layout);
    rec.global_caption = build_global_caption(rec.layout);
    for (const auto& o : rec.layout.objects)
        rec.object_captions.emplace_back(o.bbox, build_object_caption(o, rec.layout.width, rec.layout.height));
    return rec;
}

std::vector<SampleRecord> generate_corpus(std::size_t n, std::uint64_t seed, const CorpusConfig& config,
                                          int workers) {
    if (n < 1) throw std::invalid_argument("generate_corpus: n must be >= 1");
    config.validate();
    std::vector<SampleRecord> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = generate_record(seed, i, config); });
    return out;
}

}  // namespace t2t
