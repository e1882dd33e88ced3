#include "t2t/caption.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace t2t {

double iou(const Rect& a, const Rect& b) {
    const long area_a = a.area();
    const long area_b = b.area();
    if (area_a == 0 || area_b == 0) return 0.0;
    const Rect inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
    const long inter_area = inter.area();
    if (inter_area == 0) return 0.0;
    return double(inter_area) / double(area_a + area_b - inter_area);
}

std::vector<DetectionBox> nms(const std::vector<DetectionBox>& boxes, double iou_threshold, bool class_aware) {
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
    std::vector<DetectionBox> kept;
    for (std::size_t idx : order) {
        const DetectionBox& cand = boxes[idx];
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const DetectionBox& k) {
            if (class_aware && k.class_name != cand.class_name) return false;
            return iou(k.bbox, cand.bbox) > iou_threshold;
        });
        if (!suppressed) kept.push_back(cand);
    }
    return kept;
}

std::vector<DetectionBox> size_filter(const std::vector<DetectionBox>& boxes, int min_side, long min_area) {
    std::vector<DetectionBox> out;
    for (const auto& b : boxes)
        if (b.bbox.width() >= min_side && b.bbox.height() >= min_side && b.bbox.area() >= min_area)
            out.push_back(b);
    return out;
}

std::string class_phrase(ObjectClass c) {
    std::string s = to_string(c);
    std::replace(s.begin(), s.end(), '_', ' ');
    return s;
}

std::string class_plural(ObjectClass c) {
    if (c == ObjectClass::box) return "boxes";
    return class_phrase(c) + "s";
}

std::string weather_word(Weather w) {
    switch (w) {
        case Weather::clear: return "clear";
        case Weather::rain: return "rainy";
        case Weather::fog: return "foggy";
        case Weather::night: return "night";
    }
    return "clear";
}

std::string view_phrase(View v) { return v == View::vehicle_side ? "vehicle-side" : "roadside"; }

std::string article_for(std::string_view word) {
    if (!word.empty() && std::string_view("aeiou").find(word.front()) != std::string_view::npos) return "an";
    return "a";
}

std::string render_global_caption(const GlobalCaptionSlots& slots) {
    std::vector<std::string> items;
    for (ObjectClass c : kAllClasses) {
        const auto it = slots.counts.find(c);
        if (it == slots.counts.end() || it->second <= 0) continue;
        if (it->second == 1) {
            const std::string name = class_phrase(c);
            items.push_back(article_for(name) + " " + name);
        } else {
            items.push_back(std::to_string(it->second) + " " + class_plural(c));
        }
    }
    std::string summary;
    if (items.empty()) {
        summary = "an empty road";
    } else {
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i > 0) summary += (i + 1 == items.size()) ? " and " : ", ";
            summary += items[i];
        }
    }
    return weather_word(slots.weather) + " " + to_string(slots.road_type) + " scene from a " +
           view_phrase(slots.view) + " camera, with " + summary;
}

std::string build_global_caption(const SceneLayout& layout) {
    GlobalCaptionSlots slots;
    slots.weather = layout.weather;
    slots.road_type = layout.road_type;
    slots.view = layout.view;
    for (const auto& o : layout.objects) ++slots.counts[o.class_name];
    return render_global_caption(slots);
}

std::string render_object_caption(ObjectClass cls, std::optional<Color> color, PositionCell cell) {
    const std::string noun = color ? to_string(*color) + " " + class_phrase(cls) : class_phrase(cls);
    return article_for(noun) + " " + noun + " in the " + to_string(cell.column) + "-" + to_string(cell.band) +
           " of the road";
}

std::string build_object_caption(const SceneObject& obj, int image_width, int image_height) {
    return render_object_caption(obj.class_name, obj.color, position_cell_of(obj.bbox, image_width, image_height));
}

std::optional<ObjectCaptionSlots> parse_object_caption(std::string_view text) {
    // The object language is finite (10 classes x 11 color options x 9 cells),
    // so an exhaustive table is the exact parser.
    static const auto table = [] {
        std::unordered_map<std::string, ObjectCaptionSlots> t;
        for (ObjectClass c : kAllClasses)
            for (int ci = -1; ci < kNumColors; ++ci)
                for (int col = 0; col < 3; ++col)
                    for (int band = 0; band < 3; ++band) {
                        ObjectCaptionSlots s;
                        s.class_name = c;
                        if (ci >= 0) s.color = kAllColors[std::size_t(ci)];
                        s.cell = {static_cast<Column>(col), static_cast<Band>(band)};
                        t.emplace(render_object_caption(c, s.color, s.cell), s);
                    }
        return t;
    }();
    const auto it = table.find(std::string(text));
    if (it == table.end()) return std::nullopt;
    return it->second;
}

namespace {

bool consume(std::string_view& s, std::string_view prefix) {
    if (s.substr(0, prefix.size()) != prefix) return false;
    s.remove_prefix(prefix.size());
    return true;
}

template <typename Enum, typename Fn, std::size_t N>
std::optional<Enum> consume_word(std::string_view& s, const std::array<Enum, N>& values, Fn&& render) {
    for (Enum v : values) {
        const std::string w = render(v);
        if (s.substr(0, w.size()) == w && s.size() > w.size() && s[w.size()] == ' ') {
            s.remove_prefix(w.size() + 1);
            return v;
        }
    }
    return std::nullopt;
}

std::optional<std::pair<ObjectClass, int>> parse_item(std::string_view item) {
    for (ObjectClass c : kAllClasses) {
        const std::string name = class_phrase(c);
        if (item == article_for(name) + " " + name) return std::make_pair(c, 1);
        const std::string plural = " " + class_plural(c);
        if (item.size() > plural.size() && item.substr(item.size() - plural.size()) == plural) {
            const std::string_view digits = item.substr(0, item.size() - plural.size());
            if (digits.empty() || digits.size() > 3 || digits.front() == '0') continue;
            if (!std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
                continue;
            const int n = std::stoi(std::string(digits));
            if (n >= 2) return std::make_pair(c, n);
        }
    }
    return std::nullopt;
}

}  // namespace

std::optional<GlobalCaptionSlots> parse_global_caption(std::string_view text) {
    GlobalCaptionSlots slots;
    std::string_view s = text;
    constexpr std::array<Weather, 4> weathers = {Weather::clear, Weather::rain, Weather::fog, Weather::night};
    constexpr std::array<RoadType, 4> roads = {RoadType::urban, RoadType::highway, RoadType::rural,
                                               RoadType::tunnel};
    constexpr std::array<View, 2> views = {View::vehicle_side, View::roadside};

    const auto w = consume_word(s, weathers, weather_word);
    if (!w) return std::nullopt;
    const auto r = consume_word(s, roads, [](RoadType x) { return to_string(x); });
    if (!r) return std::nullopt;
    if (!consume(s, "scene from a ")) return std::nullopt;
    const auto v = consume_word(s, views, view_phrase);
    if (!v) return std::nullopt;
    if (!consume(s, "camera, with ")) return std::nullopt;
    slots.weather = *w;
    slots.road_type = *r;
    slots.view = *v;

    if (s != "an empty road") {
        std::vector<std::string_view> items;
        const std::size_t and_pos = s.rfind(" and ");
        std::string_view head = s;
        if (and_pos != std::string_view::npos) {
            head = s.substr(0, and_pos);
        }
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = head.find(", ", start);
            items.push_back(head.substr(start, comma == std::string_view::npos ? head.size() - start : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 2;
        }
        if (and_pos != std::string_view::npos) items.push_back(s.substr(and_pos + 5));
        for (auto item : items) {
            const auto parsed = parse_item(item);
            if (!parsed || slots.counts.count(parsed->first)) return std::nullopt;
            slots.counts[parsed->first] = parsed->second;
        }
    }
    // Canonical form only: order, separators and articles must match exactly.
    if (render_global_caption(slots) != text) return std::nullopt;
    return slots;
}

std::vector<DetectionBox> ground_truth_boxes(const SceneLayout& layout) {
    std::vector<DetectionBox> out;
    for (const auto& o : layout.objects) out.push_back({o.bbox, to_string(o.class_name), 1.0});
    return out;
}

CaptionRecord annotate(const std::vector<DetectionBox>& boxes, const SceneLayout& layout,
                       const AnnotateParams& params, ObjectCaptioner* captioner) {
    if (!(params.iou_threshold > 0.0 && params.iou_threshold <= 1.0))
        throw std::invalid_argument("annotate: iou_threshold must lie in (0, 1]");
    if (params.min_side < 0 || params.min_area < 0)
        throw std::invalid_argument("annotate: negative size thresholds");

    const auto kept = size_filter(nms(boxes, params.iou_threshold, params.class_aware), params.min_side,
                                  params.min_area);
    CaptionRecord rec;
    rec.global_caption = build_global_caption(layout);
    for (const auto& box : kept) {
        ObjectClass cls;
        try {
            cls = parse_object_class(box.class_name);
        } catch (const std::invalid_argument& e) {
            throw IngestionError(std::string("detection with unsupported class: ") + e.what());
        }
        if (!box.bbox.valid() || box.bbox.x0 < 0 || box.bbox.y0 < 0 || box.bbox.x1 > layout.width ||
            box.bbox.y1 > layout.height)
            throw IngestionError("detection box outside image bounds");

        std::optional<Color> color;
        double best = 0.5;
        for (const auto& o : layout.objects) {
            if (o.class_name != cls) continue;
            const double overlap = iou(o.bbox, box.bbox);
            if (overlap >= best) {
                best = overlap;
                color = o.color;
            }
        }
        std::optional<std::string> text;
        if (captioner) {
            try {
                text = captioner->caption(box);
            } catch (const IngestionError&) {
                throw;
            } catch (const std::exception& e) {
                throw IngestionError(std::string("object captioner failed: ") + e.what());
            }
        }
        if (!text) text = render_object_caption(cls, color, position_cell_of(box.bbox, layout.width, layout.height));
        rec.object_captions.emplace_back(box, *text);
    }
    return rec;
}

}  // namespace t2t
