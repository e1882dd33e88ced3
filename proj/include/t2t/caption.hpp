#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "t2t/image.hpp"
#include "t2t/scene.hpp"

namespace t2t {

/// Intersection over union of two half-open rectangles. Zero-area inputs give 0.
double iou(const Rect& a, const Rect& b);

struct DetectionBox {
    Rect bbox;
    std::string class_name;
    double score = 1.0;

    bool operator==(const DetectionBox&) const = default;
};

/// Greedy suppression in descending score order; ties go to the lower input
/// index. With `class_aware` set, boxes only suppress boxes of their own class.
std::vector<DetectionBox> nms(const std::vector<DetectionBox>& boxes, double iou_threshold,
                              bool class_aware = true);

/// Keeps boxes whose sides are both >= min_side and whose area is >= min_area.
std::vector<DetectionBox> size_filter(const std::vector<DetectionBox>& boxes, int min_side, long min_area);

// Caption grammar. Both caption kinds are lowercase and single-spaced.
//
//   object  := article " " [color " "] class " in the " column "-" band " of the road"
//   global  := weather " " road " scene from a " view " camera, with " summary
//   summary := "an empty road" | items
//   items   := item | item " and " item | item (", " item)* " and " item
//   item    := ("a" | "an") " " class-singular | count " " class-plural   (count >= 2)
//   view    := "vehicle-side" | "roadside"
//   weather := "clear" | "rainy" | "foggy" | "night"
//
// Items appear in the fixed class order of kAllClasses.

/// Human-readable class name ("traffic cone") and its plural.
std::string class_phrase(ObjectClass c);
std::string class_plural(ObjectClass c);
std::string weather_word(Weather w);
std::string view_phrase(View v);
/// "a" or "an" for the following word.
std::string article_for(std::string_view word);

std::string build_global_caption(const SceneLayout& layout);
std::string build_object_caption(const SceneObject& obj, int image_width, int image_height);
/// Object caption from slots. A missing color omits the color word.
std::string render_object_caption(ObjectClass cls, std::optional<Color> color, PositionCell cell);

struct ObjectCaptionSlots {
    ObjectClass class_name = ObjectClass::car;
    std::optional<Color> color;
    PositionCell cell;
    bool operator==(const ObjectCaptionSlots&) const = default;
};

struct GlobalCaptionSlots {
    Weather weather = Weather::clear;
    RoadType road_type = RoadType::urban;
    View view = View::vehicle_side;
    std::map<ObjectClass, int> counts;
    bool operator==(const GlobalCaptionSlots&) const = default;
};

/// Exact parsers for the grammar above; nullopt when the text does not parse.
std::optional<ObjectCaptionSlots> parse_object_caption(std::string_view text);
std::optional<GlobalCaptionSlots> parse_global_caption(std::string_view text);
std::string render_global_caption(const GlobalCaptionSlots& slots);

struct CaptionRecord {
    std::string global_caption;
    std::vector<std::pair<DetectionBox, std::string>> object_captions;
};

struct AnnotateParams {
    double iou_threshold = 0.5;
    int min_side = 4;
    long min_area = 16;
    bool class_aware = true;
};

/// Raised when detections or captions cannot be ingested (e.g. a service
/// failure). annotate never returns partial output.
class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optional per-box captioner (a VLM stand-in). Returning nullopt falls back
/// to the template caption.
class ObjectCaptioner {
public:
    virtual ~ObjectCaptioner() = default;
    virtual std::optional<std::string> caption(const DetectionBox& box) = 0;
};

/// boxes -> nms -> size_filter -> captions. Colors come from the best-matching
/// layout object of the same class (IoU >= 0.5) when one exists.
CaptionRecord annotate(const std::vector<DetectionBox>& boxes, const SceneLayout& layout,
                       const AnnotateParams& params, ObjectCaptioner* captioner = nullptr);

/// Ground-truth detections for a layout (score 1).
std::vector<DetectionBox> ground_truth_boxes(const SceneLayout& layout);

}  // namespace t2t
