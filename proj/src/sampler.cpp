#include "t2t/sampler.hpp"

#include <cctype>
#include <cmath>
#include <map>

#include "t2t/caption.hpp"
#include "t2t/rng.hpp"
#include "t2t/tokenizer.hpp"

namespace t2t {

namespace {

constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;

std::vector<std::string> prompt_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isalnum(uc)) {
            cur += char(std::tolower(uc));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

struct Synonym {
    std::vector<std::string> words;
    ObjectClass cls;
    bool plural;
};

const std::vector<Synonym>& class_synonyms() {
    // Two-word phrases first so "traffic cone" wins over "cone".
    static const std::vector<Synonym> table = {
        {{"traffic", "cones"}, ObjectClass::traffic_cone, true},
        {{"traffic", "cone"}, ObjectClass::traffic_cone, false},
        {{"plastic", "bags"}, ObjectClass::plastic_bag, true},
        {{"plastic", "bag"}, ObjectClass::plastic_bag, false},
        {{"cone"}, ObjectClass::traffic_cone, false},
        {{"cones"}, ObjectClass::traffic_cone, true},
        {{"pylon"}, ObjectClass::traffic_cone, false},
        {{"pylons"}, ObjectClass::traffic_cone, true},
        {{"bag"}, ObjectClass::plastic_bag, false},
        {{"bags"}, ObjectClass::plastic_bag, true},
        {{"car"}, ObjectClass::car, false},
        {{"cars"}, ObjectClass::car, true},
        {{"sedan"}, ObjectClass::car, false},
        {{"automobile"}, ObjectClass::car, false},
        {{"suv"}, ObjectClass::car, false},
        {{"truck"}, ObjectClass::truck, false},
        {{"trucks"}, ObjectClass::truck, true},
        {{"lorry"}, ObjectClass::truck, false},
        {{"van"}, ObjectClass::truck, false},
        {{"pedestrian"}, ObjectClass::pedestrian, false},
        {{"pedestrians"}, ObjectClass::pedestrian, true},
        {{"person"}, ObjectClass::pedestrian, false},
        {{"people"}, ObjectClass::pedestrian, true},
        {{"man"}, ObjectClass::pedestrian, false},
        {{"woman"}, ObjectClass::pedestrian, false},
        {{"child"}, ObjectClass::pedestrian, false},
        {{"walker"}, ObjectClass::pedestrian, false},
        {{"pothole"}, ObjectClass::pothole, false},
        {{"potholes"}, ObjectClass::pothole, true},
        {{"hole"}, ObjectClass::pothole, false},
        {{"stone"}, ObjectClass::stone, false},
        {{"stones"}, ObjectClass::stone, true},
        {{"rock"}, ObjectClass::stone, false},
        {{"rocks"}, ObjectClass::stone, true},
        {{"boulder"}, ObjectClass::stone, false},
        {{"box"}, ObjectClass::box, false},
        {{"boxes"}, ObjectClass::box, true},
        {{"crate"}, ObjectClass::box, false},
        {{"carton"}, ObjectClass::box, false},
        {{"dog"}, ObjectClass::dog, false},
        {{"dogs"}, ObjectClass::dog, true},
        {{"puppy"}, ObjectClass::dog, false},
        {{"puddle"}, ObjectClass::puddle, false},
        {{"puddles"}, ObjectClass::puddle, true},
    };
    return table;
}

struct Mention {
    ObjectClass cls;
    std::size_t pos;  // index of the first word
    bool plural;
};

std::vector<Mention> find_classes(const std::vector<std::string>& w) {
    std::vector<Mention> out;
    for (std::size_t i = 0; i < w.size();) {
        bool hit = false;
        for (const auto& s : class_synonyms()) {
            if (i + s.words.size() > w.size()) continue;
            if (!std::equal(s.words.begin(), s.words.end(), w.begin() + std::ptrdiff_t(i))) continue;
            out.push_back({s.cls, i, s.plural});
            i += s.words.size();
            hit = true;
            break;
        }
        if (!hit) ++i;
    }
    return out;
}

std::optional<Color> find_color(const std::vector<std::string>& w) {
    for (const auto& word : w) {
        if (word == "grey") return Color::gray;
        for (Color c : kAllColors)
            if (word == to_string(c)) return c;
    }
    return std::nullopt;
}

const std::map<std::string, Weather>& weather_words() {
    static const std::map<std::string, Weather> m = {
        {"clear", Weather::clear}, {"sunny", Weather::clear},  {"rain", Weather::rain},   {"rainy", Weather::rain},
        {"raining", Weather::rain}, {"fog", Weather::fog},     {"foggy", Weather::fog},   {"mist", Weather::fog},
        {"misty", Weather::fog},   {"night", Weather::night}, {"dark", Weather::night}};
    return m;
}

const std::map<std::string, RoadType>& road_words() {
    static const std::map<std::string, RoadType> m = {
        {"urban", RoadType::urban},     {"city", RoadType::urban},       {"street", RoadType::urban},
        {"highway", RoadType::highway}, {"freeway", RoadType::highway},  {"motorway", RoadType::highway},
        {"rural", RoadType::rural},     {"countryside", RoadType::rural}, {"tunnel", RoadType::tunnel}};
    return m;
}

std::optional<int> number_word(const std::string& w) {
    static const std::map<std::string, int> m = {{"a", 1},     {"an", 1},    {"one", 1},   {"single", 1},
                                                  {"two", 2},   {"three", 3}, {"four", 4},  {"five", 5},
                                                  {"six", 6},   {"seven", 7}, {"eight", 8}, {"several", 3}};
    const auto it = m.find(w);
    if (it != m.end()) return it->second;
    if (!w.empty() && w.size() <= 2 && std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        const int n = std::stoi(w);
        if (n >= 1) return n;
    }
    return std::nullopt;
}

bool has_word(const std::vector<std::string>& w, std::initializer_list<const char*> any) {
    for (const auto& word : w)
        for (const char* a : any)
            if (word == a) return true;
    return false;
}

}  // namespace

std::string to_string(PromptKind k) {
    switch (k) {
        case PromptKind::canonical: return "canonical";
        case PromptKind::object: return "object";
        case PromptKind::global: return "global";
        case PromptKind::passthrough: return "passthrough";
    }
    return "passthrough";
}

AlignedPrompt align_prompt(const std::string& raw) {
    const std::string norm = Tokenizer::normalize(raw);
    if (parse_object_caption(norm) || parse_global_caption(norm)) return {norm, PromptKind::canonical, false};

    const auto words = prompt_words(norm);
    const auto mentions = find_classes(words);

    std::optional<Weather> weather;
    std::optional<RoadType> road;
    for (const auto& w : words) {
        if (!weather && weather_words().count(w)) weather = weather_words().at(w);
        if (!road && road_words().count(w)) road = road_words().at(w);
    }
    const bool scene = weather || road || has_word(words, {"scene", "roadside"});

    if (scene) {
        GlobalCaptionSlots slots;
        slots.weather = weather.value_or(Weather::clear);
        slots.road_type = road.value_or(RoadType::urban);
        slots.view = has_word(words, {"roadside", "infrastructure", "pole"}) ? View::roadside : View::vehicle_side;
        for (const auto& m : mentions) {
            int n = m.plural ? 2 : 1;
            if (m.pos > 0)
                if (const auto k = number_word(words[m.pos - 1])) n = *k;
            slots.counts[m.cls] += n;
        }
        return {render_global_caption(slots), PromptKind::global, false};
    }

    if (!mentions.empty()) {
        const ObjectClass cls = mentions.front().cls;
        const Color color = find_color(words).value_or(class_colors(cls).front());
        PositionCell cell;  // center-middle
        if (has_word(words, {"left"})) cell.column = Column::left;
        else if (has_word(words, {"right"})) cell.column = Column::right;
        if (has_word(words, {"near", "close", "foreground", "bottom", "nearby"})) cell.band = Band::near;
        else if (has_word(words, {"far", "distant", "background", "top", "distance"})) cell.band = Band::far;
        return {render_object_caption(cls, color, cell), PromptKind::object, false};
    }

    return {norm, PromptKind::passthrough, true};
}

void SampleRequest::validate() const {
    if (steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
    if (!(guidance_scale >= 1.0) || !std::isfinite(guidance_scale))
        throw std::invalid_argument("sample: guidance_scale must be >= 1");
    if (mode == SampleMode::edit) {
        if (!source || !mask) throw std::invalid_argument("sample: edit mode requires a source image and a mask");
        if (source->channels != 3) throw std::invalid_argument("sample: source must be RGB");
        if (mask->height != source->height || mask->width != source->width)
            throw std::invalid_argument("sample: mask and source sizes differ");
    } else if (height < 1 || width < 1) {
        throw std::invalid_argument("sample: non-positive output size");
    }
}

std::vector<double> integrate_euler(std::vector<double> z, int steps, const VelocityFn& velocity) {
    if (steps < 1) throw std::invalid_argument("integrate_euler: steps must be >= 1");
    const double dt = 1.0 / steps;
    std::vector<float> zf(z.size());
    for (int k = 0; k < steps; ++k) {
        const double t = double(k) / steps;
        for (std::size_t i = 0; i < z.size(); ++i) zf[i] = float(z[i]);
        const auto v = velocity(zf, t);
        if (v.size() != z.size()) throw std::invalid_argument("integrate_euler: velocity has the wrong size");
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] += dt * double(v[i]);
            if (!std::isfinite(z[i]))
                throw SamplingError("non-finite sampler state at step " + std::to_string(k));
        }
    }
    return z;
}

float guidance_combine(float v_cond, float v_uncond, double scale) {
    return float(double(v_uncond) + scale * (double(v_cond) - double(v_uncond)));
}

std::vector<float> guided_velocity(const DiT<float>& model, const ModelParams& params, const LoraAdapter* lora,
                                   const ModelInput<float>& input, double scale, int workers) {
    auto v = model.forward(params, lora, input, nullptr, workers);
    if (scale == 1.0) return v;
    ModelInput<float> uncond = input;
    std::fill(uncond.text.begin(), uncond.text.end(), Tokenizer::kPad);
    const auto vu = model.forward(params, lora, uncond, nullptr, workers);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = guidance_combine(v[i], vu[i], scale);
    return v;
}

Image composite(const Image& source, const MaskSpec& mask, const Image& generated) {
    if (!source.same_shape(generated)) throw std::invalid_argument("composite: image shapes differ");
    if (mask.height != source.height || mask.width != source.width)
        throw std::invalid_argument("composite: mask shape differs");
    Image out = generated;
    for (int y = 0; y < source.height; ++y)
        for (int x = 0; x < source.width; ++x)
            if (mask.at(y, x))
                for (int c = 0; c < source.channels; ++c) out.at(y, x, c) = source.at(y, x, c);
    return out;
}

std::vector<double> initial_noise(std::uint64_t seed, std::size_t size) {
    Rng rng(derive_seed(seed, {kNoiseTag}));
    std::vector<double> z(size);
    for (auto& v : z) v = double(float(rng.normal()));
    return z;
}

std::vector<SampleResult> euler_sample(const DiT<float>& model, const ModelParams& params, const LoraAdapter* lora,
                                       const std::vector<SampleRequest>& requests, int workers) {
    if (requests.empty()) return {};
    const ModelConfig& cfg = model.config();
    const int h = requests[0].out_height(), w = requests[0].out_width();
    if (!cfg.supports(h, w))
        throw std::invalid_argument("sample: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                                    " is not supported by the model");
    const double scale = requests[0].guidance_scale;
    const int steps = requests[0].steps;

    std::vector<SampleResult> results(requests.size());
    std::vector<ConditionBundle> bundles;
    std::vector<std::vector<float>> latents;
    const std::size_t per = std::size_t(h / cfg.patch) * std::size_t(w / cfg.patch) * std::size_t(cfg.latent_token_dim());
    std::vector<double> z;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        const auto& r = requests[i];
        r.validate();
        if (r.out_height() != h || r.out_width() != w) throw std::invalid_argument("sample: mixed resolutions in a batch");
        if (r.guidance_scale != scale || r.steps != steps)
            throw std::invalid_argument("sample: a batch must share steps and guidance scale");
        results[i].prompt = r.align ? align_prompt(r.prompt) : AlignedPrompt{r.prompt, PromptKind::passthrough, false};
        const MaskSpec mask = r.mode == SampleMode::edit ? *r.mask : full_mask(h, w);
        const Image source = r.mode == SampleMode::edit ? *r.source : Image(h, w, 3);
        bundles.push_back({apply_mask(source, mask), mask,
                           Tokenizer::caption_vocabulary().encode(results[i].prompt.text, cfg.max_text_tokens), 0.0});
        latents.emplace_back(per, 0.0f);
        const auto zi = initial_noise(r.seed, per);
        z.insert(z.end(), zi.begin(), zi.end());
    }

    ModelInput<float> input = make_model_input(bundles, latents, cfg);
    const auto zt = integrate_euler(std::move(z), steps, [&](const std::vector<float>& zf, double t) {
        input.latent = zf;
        std::fill(input.t.begin(), input.t.end(), float(t));
        return guided_velocity(model, params, lora, input, scale, workers);
    });

    for (std::size_t i = 0; i < requests.size(); ++i) {
        std::vector<float> tokens(per);
        for (std::size_t k = 0; k < per; ++k) tokens[k] = float(zt[i * per + k]);
        results[i].raw = from_signed(unpatchify(tokens, h, w, 3, cfg.patch));
        const auto& r = requests[i];
        results[i].image = r.mode == SampleMode::edit ? composite(*r.source, *r.mask, results[i].raw) : results[i].raw;
    }
    return results;
}

}  // namespace t2t
