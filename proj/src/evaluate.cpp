#include "t2t/evaluate.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "t2t/metrics.hpp"

namespace t2t {

using nlohmann::json;

namespace {

struct Case {
    const TrainRecord* record;
    MaskSpec mask;
    std::string prompt;
    std::uint64_t seed;
};

std::uint64_t mode_tag(EvalMode m) { return 0x6576616c00ULL + std::uint64_t(m); }

std::vector<Case> build_cases(const std::vector<TrainRecord>& records, EvalMode mode, const EvalOptions& opt) {
    std::vector<Case> cases;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const int h = r.image.height, w = r.image.width;
        const std::uint64_t seed = derive_seed(opt.seed, {mode_tag(mode), std::uint64_t(i)});
        switch (mode) {
            case EvalMode::t2i:
                cases.push_back({&r, full_mask(h, w), r.global_caption, seed});
                break;
            case EvalMode::inpaint: {
                Rng rng(seed);
                cases.push_back({&r, large_area_mask(h, w, rng, opt.inpaint_area), r.global_caption, seed});
                break;
            }
            case EvalMode::edit:
                for (std::size_t k = 0; k < r.objects.size(); ++k) {
                    const auto& o = r.objects[k];
                    if (opt.object_class && o.class_name != *opt.object_class) continue;
                    cases.push_back({&r, object_mask(h, w, o.bbox, opt.dilation), o.local_caption,
                                     derive_seed(seed, {std::uint64_t(k)})});
                }
                break;
        }
    }
    return cases;
}

double mean_db(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        if (std::isinf(x)) return std::numeric_limits<double>::infinity();
        s += x;
    }
    return s / double(v.size());
}

json number_or_string(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

}  // namespace

EvalMode parse_eval_mode(const std::string& s) {
    if (s == "t2i") return EvalMode::t2i;
    if (s == "edit") return EvalMode::edit;
    if (s == "inpaint") return EvalMode::inpaint;
    throw std::invalid_argument("unknown eval mode: " + s);
}

std::string to_string(EvalMode m) {
    switch (m) {
        case EvalMode::t2i: return "t2i";
        case EvalMode::edit: return "edit";
        case EvalMode::inpaint: return "inpaint";
    }
    return "t2i";
}

const ModeReport& EvalReport::at(EvalMode m) const {
    for (const auto& r : modes)
        if (r.mode == m) return r;
    throw std::out_of_range("no report for mode " + to_string(m));
}

EvalReport evaluate(const DiT<float>& model, const ModelParams& params, const LoraAdapter* lora,
                    const std::vector<TrainRecord>& records, const EvalOptions& opt) {
    if (opt.batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be positive");
    EvalReport report;
    const Embedder embed = random_projection_embedder();
    for (EvalMode mode : opt.modes) {
        const auto cases = build_cases(records, mode, opt);
        ModeReport mr;
        mr.mode = mode;
        mr.samples = cases.size();
        if (cases.empty()) {
            mr.psnr = mr.ssim = mr.masked_psnr = mr.frechet_proxy = std::nan("");
            report.modes.push_back(mr);
            continue;
        }

        // Group by resolution, keeping case order inside each group.
        std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < cases.size(); ++i)
            groups[{cases[i].record->image.height, cases[i].record->image.width}].push_back(i);

        std::vector<Image> outputs(cases.size());
        for (const auto& [res, idx] : groups) {
            for (std::size_t b = 0; b < idx.size(); b += std::size_t(opt.batch_size)) {
                std::vector<SampleRequest> reqs;
                const std::size_t end = std::min(idx.size(), b + std::size_t(opt.batch_size));
                for (std::size_t j = b; j < end; ++j) {
                    const Case& c = cases[idx[j]];
                    SampleRequest r;
                    r.mode = mode == EvalMode::t2i ? SampleMode::t2i : SampleMode::edit;
                    r.prompt = c.prompt;
                    r.height = res.first;
                    r.width = res.second;
                    if (r.mode == SampleMode::edit) {
                        r.source = c.record->image;
                        r.mask = c.mask;
                    }
                    r.steps = opt.steps;
                    r.seed = c.seed;
                    r.guidance_scale = opt.guidance_scale;
                    reqs.push_back(std::move(r));
                }
                auto results = euler_sample(model, params, lora, reqs, opt.workers);
                for (std::size_t j = b; j < end; ++j) outputs[idx[j]] = std::move(results[j - b].image);
            }
        }

        std::vector<double> p(cases.size()), s(cases.size()), mp(cases.size());
        std::vector<Image> refs;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const Image& ref = cases[i].record->image;
            p[i] = psnr(outputs[i], ref);
            s[i] = ssim(outputs[i], ref);
            mp[i] = masked_psnr(outputs[i], ref, cases[i].mask);
            refs.push_back(ref);
        }
        mr.psnr = mean_db(p);
        mr.masked_psnr = mean_db(mp);
        double ss = 0.0;
        for (double x : s) ss += x;
        mr.ssim = ss / double(s.size());
        mr.frechet_proxy = cases.size() >= 2
                               ? frechet_distance(feature_stats(outputs, embed), feature_stats(refs, embed))
                               : std::nan("");
        report.modes.push_back(mr);
    }
    return report;
}

json to_json(const EvalReport& report) {
    json j = json::object();
    for (const auto& m : report.modes)
        j[to_string(m.mode)] = {{"samples", m.samples},
                                {"psnr", number_or_string(m.psnr)},
                                {"ssim", number_or_string(m.ssim)},
                                {"masked_psnr", number_or_string(m.masked_psnr)},
                                {"frechet_proxy", number_or_string(m.frechet_proxy)}};
    return j;
}

json eval_options_to_json(const EvalOptions& o) {
    json modes = json::array();
    for (auto m : o.modes) modes.push_back(to_string(m));
    return {{"modes", modes},
            {"steps", o.steps},
            {"seed", o.seed},
            {"guidance_scale", o.guidance_scale},
            {"object_class", o.object_class ? json(to_string(*o.object_class)) : json(nullptr)},
            {"dilation", o.dilation},
            {"inpaint_area", {o.inpaint_area.first, o.inpaint_area.second}},
            {"batch_size", o.batch_size},
            {"workers", o.workers}};
}

}  // namespace t2t
