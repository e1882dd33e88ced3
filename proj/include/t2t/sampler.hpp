#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2t/masking.hpp"
#include "t2t/model.hpp"

namespace t2t {

enum class PromptKind { canonical, object, global, passthrough };
std::string to_string(PromptKind k);

struct AlignedPrompt {
    std::string text;
    PromptKind kind = PromptKind::passthrough;
    bool warning = false;  // the prompt could not be mapped onto the caption grammar
};

/// Rule-based prompt normalizer. Canonical captions are returned unchanged.
/// Prompts naming an object class become object captions (class default
/// color, center column and middle band fill missing slots); prompts that
/// describe a scene (weather, road type, "scene") become global captions;
/// anything else passes through lowercased with a warning.
AlignedPrompt align_prompt(const std::string& raw);

enum class SampleMode { t2i, edit };

struct SampleRequest {
    SampleMode mode = SampleMode::t2i;
    std::string prompt;
    std::optional<Image> source;   // edit only
    std::optional<MaskSpec> mask;  // edit only
    int height = 64;               // t2i only
    int width = 64;
    int steps = 32;
    std::uint64_t seed = 0;
    double guidance_scale = 1.0;
    bool align = true;

    /// Throws std::invalid_argument when the request is inconsistent.
    void validate() const;
    int out_height() const { return mode == SampleMode::edit && source ? source->height : height; }
    int out_width() const { return mode == SampleMode::edit && source ? source->width : width; }
};

struct SampleResult {
    Image image;      // composited in edit mode, raw in t2i mode
    Image raw;        // generated image before compositing
    AlignedPrompt prompt;
};

class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// v(z, t) for a batch of flattened token states.
using VelocityFn = std::function<std::vector<float>(const std::vector<float>& z, double t)>;

/// Euler integration of dz/dt = v from t = 0 to 1 with t_k = k / steps; the
/// state is kept in double and handed to `velocity` as float.
std::vector<double> integrate_euler(std::vector<double> z0, int steps, const VelocityFn& velocity);

/// v_uncond + scale * (v_cond - v_uncond).
float guidance_combine(float v_cond, float v_uncond, double scale);

/// Conditional velocity; for scale > 1 also evaluates the all-PAD caption and
/// extrapolates.
std::vector<float> guided_velocity(const DiT<float>& model, const ModelParams& params, const LoraAdapter* lora,
                                   const ModelInput<float>& input, double scale, int workers = 1);

/// final = source where mask keeps context, generated elsewhere.
Image composite(const Image& source, const MaskSpec& mask, const Image& generated);

/// Seeded initial noise in token layout for one request.
std::vector<double> initial_noise(std::uint64_t seed, std::size_t size);

/// Samples every request (all must share one output resolution) as one batch.
std::vector<SampleResult> euler_sample(const DiT<float>& model, const ModelParams& params, const LoraAdapter* lora,
                                       const std::vector<SampleRequest>& requests, int workers = 1);

}  // namespace t2t
