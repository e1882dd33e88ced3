#include "t2t/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "t2t/caption.hpp"
#include "t2t/flow.hpp"
#include "t2t/masking.hpp"
#include "t2t/model.hpp"
#include "t2t/rng.hpp"
#include "t2t/tokenizer.hpp"

namespace t2t {

namespace {

struct Problem {
    ModelInput<double> input;
    std::vector<double> target;
    std::vector<double> weights;  // per position
};

double loss_of(const std::vector<double>& pred, const Problem& p) {
    const std::size_t per = pred.size() / p.weights.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - p.target[i];
        sum += p.weights[i / per] * d * d;
    }
    return sum / double(pred.size());
}

Problem make_problem(const ModelConfig& cfg, Rng& rng) {
    const int h = 16, w = 24, batch = 2;
    const auto& tok = Tokenizer::caption_vocabulary();
    const char* captions[batch] = {"an orange traffic cone in the left-near of the road",
                                   "rainy rural scene from a roadside camera, with 2 cars"};
    const Rect boxes[batch] = {{2, 3, 9, 10}, {12, 6, 20, 14}};
    Problem p;
    p.input.batch = batch;
    p.input.height = h;
    p.input.width = w;
    std::vector<float> weights;
    for (int b = 0; b < batch; ++b) {
        Image img(h, w, 3);
        for (auto& v : img.data) v = float(rng.uniform());
        const MaskSpec mask = object_mask(h, w, boxes[b], 1);
        const auto cond = condition_tokens(apply_mask(img, mask), mask, cfg.patch);
        p.input.cond.insert(p.input.cond.end(), cond.begin(), cond.end());
        const auto x = patchify(to_signed(img), cfg.patch);
        const double t = rng.uniform(0.05, 0.95);
        for (float xv : x) {
            const double eps = rng.normal();
            p.input.latent.push_back(t * xv + (1.0 - t) * eps);
            p.target.push_back(xv - eps);
        }
        const auto ids = tok.encode(captions[b], cfg.max_text_tokens);
        p.input.text.insert(p.input.text.end(), ids.begin(), ids.end());
        p.input.t.push_back(t);

        const std::size_t positions = x.size() / std::size_t(cfg.latent_token_dim());
        const auto pooled_cond = pool_positions(patchify(signed_condition_image(apply_mask(img, mask), mask), cfg.patch), positions);
        const auto pooled_target = pool_positions(x, positions);
        const auto ind = downsample_indicator(mask, cfg.patch);
        const WeightMap wm = region_weights(pooled_cond, pooled_target, ind);
        p.weights.insert(p.weights.end(), wm.w.begin(), wm.w.end());
    }
    return p;
}

}  // namespace

GradCheckResult gradient_check(const GradCheckOptions& options) {
    ModelConfig cfg;
    cfg.dim = options.dim;
    cfg.depth = options.depth;
    cfg.heads = options.heads;
    cfg.predict_clean = options.predict_clean;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 4.0;
    DiT<double> model(cfg);
    Params<double> params = model.init_params(options.seed, true);
    Params<double> lora = model.init_lora(options.seed);
    Rng rng(derive_seed(options.seed, {0x67726164ULL}));
    for (auto& v : lora.values) v = 0.1 * rng.normal();
    const Params<double>* lora_ptr = options.with_lora ? &lora : nullptr;
    const Problem prob = make_problem(model.config(), rng);

    ForwardCache<double> cache;
    const auto pred = model.forward(params, lora_ptr, prob.input, &cache);
    std::vector<double> d_out(pred.size());
    const std::size_t per = pred.size() / prob.weights.size();
    for (std::size_t i = 0; i < pred.size(); ++i)
        d_out[i] = 2.0 * prob.weights[i / per] * (pred[i] - prob.target[i]) / double(pred.size());
    Params<double> grad(model.layout());
    Params<double> lora_grad(model.lora_layout());
    const std::vector<std::uint8_t> all(model.layout()->entries().size(), 1);
    model.backward(params, lora_ptr, prob.input, cache, d_out, grad, options.with_lora ? &lora_grad : nullptr, all);

    GradCheckResult res;
    auto check_buffer = [&](Params<double>& buf, const Params<double>& g) {
        for (const auto& e : buf.layout->entries()) {
            for (std::size_t k = 0; k < e.size; ++k) {
                if (!rng.bernoulli(options.fraction)) continue;
                const std::size_t idx = e.offset + k;
                const double orig = buf.values[idx];
                buf.values[idx] = orig + options.step;
                const double lp = loss_of(model.forward(params, lora_ptr, prob.input), prob);
                buf.values[idx] = orig - options.step;
                const double lm = loss_of(model.forward(params, lora_ptr, prob.input), prob);
                buf.values[idx] = orig;
                const double numeric = (lp - lm) / (2.0 * options.step);
                const double analytic = g.values[idx];
                const double rel =
                    std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
                ++res.checked;
                if (rel > res.max_rel_err || res.worst_name.empty()) {
                    res.max_rel_err = std::max(rel, res.max_rel_err);
                    res.worst_name = e.name + "[" + std::to_string(k) + "]";
                    res.worst_analytic = analytic;
                    res.worst_numeric = numeric;
                }
            }
        }
    };
    check_buffer(params, grad);
    if (options.with_lora) check_buffer(lora, lora_grad);
    res.passed = res.checked > 0 && res.max_rel_err < options.tolerance;
    return res;
}

}  // namespace t2t
