#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "t2t/gradcheck.hpp"
#include "t2t/model.hpp"
#include "t2t/rng.hpp"
#include "t2t/tokenizer.hpp"

using namespace t2t;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.dim = 32;
    c.heads = 4;
    c.depth = 2;
    c.lora_rank = 4;
    c.lora_alpha = 8.0;
    return c;
}

Image random_image(int h, int w, Rng& rng) {
    Image img(h, w, 3);
    for (auto& v : img.data) v = float(rng.uniform());
    return img;
}

ModelInput<float> random_input(const ModelConfig& cfg, int h, int w, Rng& rng, const MaskSpec* mask = nullptr,
                               const Image* source = nullptr, const std::vector<float>* latent = nullptr) {
    const Image img = source ? *source : random_image(h, w, rng);
    MaskSpec m = mask ? *mask : object_mask(h, w, {8, 8, 20, 20}, 2);
    ConditionBundle b{apply_mask(img, m), m,
                      Tokenizer::caption_vocabulary().encode("a red car in the left-near of the road", cfg.max_text_tokens),
                      0.4};
    std::vector<float> lat;
    if (latent) {
        lat = *latent;
    } else {
        lat.resize(std::size_t(h / cfg.patch) * std::size_t(w / cfg.patch) * std::size_t(cfg.latent_token_dim()));
        for (auto& v : lat) v = float(rng.normal());
    }
    return make_model_input({b}, {lat}, cfg);
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = ModelConfig{};
    c.patch = 7;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("parameter names are unique and arrays start finite") {
    DiT<float> model(small_config());
    const auto params = model.init_params(1);
    std::set<std::string> names;
    for (const auto& e : params.layout->entries()) CHECK(names.insert(e.name).second);
    CHECK(params.all_finite());
    CHECK(params.values.size() == params.layout->total_size());
}

TEST_CASE("output shape matches the latent for both resolution buckets") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(2, true);
    Rng rng(3);
    for (auto [h, w] : {std::pair{64, 64}, std::pair{64, 96}}) {
        const auto in = random_input(cfg, h, w, rng);
        const auto out = model.forward(params, nullptr, in);
        CHECK(out.size() == in.latent.size());
        CHECK(std::all_of(out.begin(), out.end(), [](float v) { return std::isfinite(v); }));
    }
}

TEST_CASE("forward rejects unsupported resolutions and non-finite inputs") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(2);
    Rng rng(4);
    auto in = random_input(cfg, 64, 64, rng);
    in.latent[5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(model.forward(params, nullptr, in), std::invalid_argument);
    auto big = random_input(cfg, 64, 64, rng);
    big.height = 128;
    CHECK_THROWS_AS(model.forward(params, nullptr, big), std::invalid_argument);
}

TEST_CASE("full mask makes the output independent of the source image") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(5, true);
    Rng rng(6);
    const MaskSpec full = full_mask(64, 96);
    std::vector<float> latent(std::size_t(8 * 12 * cfg.latent_token_dim()));
    for (auto& v : latent) v = float(rng.normal());
    const Image a = random_image(64, 96, rng), b = random_image(64, 96, rng);
    const auto in_a = random_input(cfg, 64, 96, rng, &full, &a, &latent);
    const auto in_b = random_input(cfg, 64, 96, rng, &full, &b, &latent);
    CHECK(model.forward(params, nullptr, in_a) == model.forward(params, nullptr, in_b));
}

TEST_CASE("forward is deterministic and independent of the worker count") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(7, true);
    Rng rng(8);
    const auto in = random_input(cfg, 64, 64, rng);
    const auto a = model.forward(params, nullptr, in, nullptr, 1);
    CHECK(a == model.forward(params, nullptr, in, nullptr, 1));
    CHECK(a == model.forward(params, nullptr, in, nullptr, 4));
}

TEST_CASE("tokens after the first PAD do not affect the output") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(9, true);
    Rng rng(10);
    auto in = random_input(cfg, 64, 64, rng);
    const int len = text_length(in.text, 0, cfg.max_text_tokens);
    REQUIRE(len < cfg.max_text_tokens - 2);
    const auto base = model.forward(params, nullptr, in);
    for (int j = len + 1; j < cfg.max_text_tokens; ++j) in.text[std::size_t(j)] = rng.uniform_int(3, 20);
    CHECK(model.forward(params, nullptr, in) == base);
}

TEST_CASE("fresh LoRA is an exact no-op") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(11, true);
    const auto lora = model.init_lora(12);
    for (const auto& e : lora.layout->entries())
        if (e.name.ends_with("lora_b")) CHECK(lora.mat(e.name).isZero(0.0));
    Rng rng(13);
    const auto in = random_input(cfg, 64, 96, rng);
    CHECK(model.forward(params, nullptr, in) == model.forward(params, &lora, in));
    CHECK(merge_lora(model, params, lora).values == params.values);
}

TEST_CASE("merge arithmetic on a rank-1 adapter") {
    ModelConfig cfg = small_config();
    cfg.lora_rank = 1;
    cfg.lora_alpha = 2.0;
    DiT<float> model(cfg);
    const auto params = model.init_params(14);
    auto lora = model.init_lora(15);
    std::fill(lora.values.begin(), lora.values.end(), 0.0f);
    lora.mat("blocks.0.attn.q.lora_a")(0, 0) = 1.0f;
    lora.mat("blocks.0.attn.q.lora_b")(0, 0) = 1.0f;
    const auto w = effective_weight(model, params, &lora, "blocks.0.attn.q");
    CHECK(w(0, 0) == params.mat("blocks.0.attn.q.w")(0, 0) + 2.0f);
    CHECK(w(0, 1) == params.mat("blocks.0.attn.q.w")(0, 1));
    CHECK(w(1, 0) == params.mat("blocks.0.attn.q.w")(1, 0));
}

TEST_CASE("merged weights reproduce the adapted forward") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(16, true);
    auto lora = model.init_lora(17);
    Rng rng(18);
    for (auto& v : lora.values) v = float(0.05 * rng.normal());
    const auto merged = merge_lora(model, params, lora);
    for (int trial = 0; trial < 3; ++trial) {
        const auto in = random_input(cfg, 64, 64, rng);
        const auto a = model.forward(merged, nullptr, in);
        const auto b = model.forward(params, &lora, in);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num = std::max(num, double(std::abs(a[i] - b[i])));
            den = std::max(den, double(std::abs(b[i])));
        }
        CHECK(num / den <= 1e-5);
    }
}

TEST_CASE("merge rejects mismatched adapters") {
    DiT<float> model(small_config());
    ModelConfig other = small_config();
    other.lora_rank = 2;
    DiT<float> model2(other);
    CHECK_THROWS_AS(merge_lora(model, model.init_params(1), model2.init_lora(1)), std::invalid_argument);
}

TEST_CASE("trainable sets per stage") {
    DiT<float> model(small_config());
    const auto s1 = model.trainable_set(TrainStage::stage1);
    const auto s2 = model.trainable_set(TrainStage::stage2);
    CHECK(!s2.empty());
    const std::set<std::string> all(s1.begin(), s1.end());
    CHECK(all.size() == model.layout()->entries().size());
    for (const auto& n : s2) {
        if (n.find("lora_") != std::string::npos) continue;
        CHECK(all.count(n) == 1);
        const bool allowed = n.find(".ffn.") != std::string::npos || n.find("mod.") != std::string::npos;
        CHECK_MESSAGE(allowed, n);
    }
    CHECK(std::count_if(s2.begin(), s2.end(), [](const std::string& n) { return n.find("attn.q.w") != std::string::npos; }) == 0);
    CHECK(std::count_if(s2.begin(), s2.end(), [](const std::string& n) { return n.find("lora_a") != std::string::npos; }) ==
          4 * 2);
}

TEST_CASE("analytic gradients match central finite differences") {
    GradCheckOptions opt;
    opt.fraction = 0.05;
    const auto res = gradient_check(opt);
    INFO("worst ", res.worst_name, " analytic ", res.worst_analytic, " numeric ", res.worst_numeric);
    CHECK(res.checked > 100);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("velocity head gradients match central finite differences") {
    GradCheckOptions opt;
    opt.fraction = 0.05;
    opt.predict_clean = false;
    const auto res = gradient_check(opt);
    INFO("worst ", res.worst_name);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("fresh model velocity under each head parameterization") {
    ModelConfig cfg = small_config();
    Rng rng(31);
    auto in = random_input(cfg, 64, 64, rng);
    for (const bool clean : {false, true}) {
        cfg.predict_clean = clean;
        DiT<float> model(cfg);
        const auto params = model.init_params(5);
        for (const float t : {0.0f, 0.4f, 0.99f}) {
            in.t[0] = t;
            const auto v = model.forward(params, nullptr, in);
            // Zero head: x̂ = 0, so v = -x_t / max(1 - t, 0.05).
            const float scale = clean ? -1.0f / std::max(1.0f - t, 0.05f) : 0.0f;
            for (std::size_t i = 0; i < v.size(); ++i) REQUIRE(v[i] == doctest::Approx(scale * in.latent[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("position tables start as non-overlapping sin-cos codes") {
    const ModelConfig cfg = small_config();
    DiT<float> model(cfg);
    const auto params = model.init_params(7);
    const auto& layout = *params.layout;
    const auto row = params.mat(layout.index("pos_row")), col = params.mat(layout.index("pos_col"));
    const int half = cfg.dim / 2;
    CHECK(row(0, half / 2) == 1.0f);
    CHECK(row(3, 0) == doctest::Approx(std::sin(3.0)));
    CHECK(col(3, half) == doctest::Approx(std::sin(3.0)));
    CHECK(row.rightCols(half).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(col.leftCols(half).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("float and double models agree") {
    const ModelConfig cfg = small_config();
    DiT<float> mf(cfg);
    DiT<double> md(cfg);
    const auto pf = mf.init_params(19, true);
    const auto pd = pf.cast<double>();
    Rng rng(20);
    const auto in = random_input(cfg, 64, 64, rng);
    ModelInput<double> ind{in.batch, in.height, in.width, {in.cond.begin(), in.cond.end()},
                           {in.latent.begin(), in.latent.end()}, in.text, {in.t.begin(), in.t.end()}};
    const auto a = mf.forward(pf, nullptr, in);
    const auto b = md.forward(pd, nullptr, ind);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(double(a[i]) - b[i]) < 1e-3);
}
