#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "t2t/sampler.hpp"
#include "t2t/scene.hpp"
#include "t2t/trainer.hpp"

namespace t2t {

/// Reconstruction-style evaluation: a ground-truth image is masked, restored
/// from its caption and compared with the original.
///   t2i      full mask, global caption
///   edit     one sample per annotated object: object mask, local caption, composited
///   inpaint  seeded large-area mask, global caption
enum class EvalMode { t2i, edit, inpaint };
EvalMode parse_eval_mode(const std::string& s);
std::string to_string(EvalMode m);

struct EvalOptions {
    std::vector<EvalMode> modes{EvalMode::t2i, EvalMode::edit};
    int steps = 32;
    std::uint64_t seed = 0;
    double guidance_scale = 1.0;
    std::optional<ObjectClass> object_class;  // edit mode: only objects of this class
    int dilation = 2;
    std::pair<double, double> inpaint_area{0.4, 1.0};
    int batch_size = 16;
    int workers = 1;
};

struct ModeReport {
    EvalMode mode = EvalMode::t2i;
    std::size_t samples = 0;
    // Means over samples; PSNR values are +inf if any sample is exact.
    double psnr = 0.0;
    double ssim = 0.0;
    double masked_psnr = 0.0;
    double frechet_proxy = 0.0;  // NaN with fewer than two samples
    bool operator==(const ModeReport&) const = default;
};

struct EvalReport {
    std::vector<ModeReport> modes;
    const ModeReport& at(EvalMode m) const;
    bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate(const DiT<float>& model, const ModelParams& params, const LoraAdapter* lora,
                    const std::vector<TrainRecord>& records, const EvalOptions& options);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json eval_options_to_json(const EvalOptions& options);

}  // namespace t2t
