#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "t2t/flow.hpp"
#include "t2t/rng.hpp"

using namespace t2t;

namespace {

std::vector<float> gaussian(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.normal());
    return v;
}

}  // namespace

TEST_CASE("interpolation boundaries and hand example") {
    Rng rng(1);
    const auto x = gaussian(rng, 50), eps = gaussian(rng, 50);
    CHECK(interpolate(x, eps, 0.0).x_t == eps);
    CHECK(interpolate(x, eps, 1.0).x_t == x);
    const std::vector<float> x2{2.0f, -2.0f}, e2{0.0f, 0.0f};
    const auto it = interpolate(x2, e2, 0.5);
    CHECK(it.x_t == std::vector<float>{1.0f, -1.0f});
    CHECK(it.v_target == std::vector<float>{2.0f, -2.0f});
}

TEST_CASE("interpolation symmetry under swapped roles") {
    Rng rng(2);
    const auto x = gaussian(rng, 64), eps = gaussian(rng, 64);
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const auto a = interpolate(x, eps, t).x_t;
        const auto b = interpolate(eps, x, 1.0 - t).x_t;
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
    }
}

TEST_CASE("interpolation errors") {
    const std::vector<float> a(3), b(4);
    CHECK_THROWS_AS(interpolate(a, b, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(a, a, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(a, a, -0.1), std::invalid_argument);
}

TEST_CASE("flow sample fields are consistent") {
    Rng rng(3);
    const auto s = make_flow_sample(gaussian(rng, 10), gaussian(rng, 10), 0.3);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(s.x_t[i] == float(0.3) * s.x[i] + float(0.7) * s.eps[i]);
        CHECK(s.v_target[i] == s.x[i] - s.eps[i]);
    }
}

TEST_CASE("flow loss examples") {
    Rng rng(4);
    const auto v = gaussian(rng, 30);
    CHECK(flow_loss(v, v) == 0.0);
    auto shifted = v;
    for (auto& x : shifted) x += 1.0f;
    CHECK(flow_loss(shifted, v) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(flow_loss(std::vector<float>{3.0f}, std::vector<float>{1.0f}) == 4.0);
    CHECK_THROWS_AS(flow_loss(std::vector<float>(2), std::vector<float>(3)), std::invalid_argument);
}

TEST_CASE("region weights examples") {
    const std::vector<float> same{0.1f, 0.2f, 0.3f, 0.4f};
    const auto none = region_weights(same, same, std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(none.w == std::vector<float>(4, 1.0f));

    const std::vector<float> I{0.0f, 0.0f, 0.0f, 0.0f};
    const std::vector<float> J{0.0f, 2.0f, 0.0f, 0.0f};
    const auto one = region_weights(I, J, std::vector<std::uint8_t>{1, 0, 1, 1});
    CHECK(one.w == std::vector<float>{1.0f, 0.25f, 1.0f, 1.0f});
    CHECK(one.edited_mass == 4.0);

    const std::vector<float> K{1.0f, 0.0f, 0.0f, -1.0f};
    const auto two = region_weights(I, K, std::vector<std::uint8_t>{0, 1, 1, 0});
    CHECK(two.w == std::vector<float>{0.5f, 1.0f, 1.0f, 0.5f});

    // Edited positions with no difference hit the epsilon guard.
    const auto guard = region_weights(I, I, std::vector<std::uint8_t>{0, 1, 1, 1});
    CHECK(guard.w[0] == float(1.0 / kWeightEpsilon));
    CHECK_THROWS_AS(region_weights(I, std::vector<float>(3), std::vector<std::uint8_t>(4, 1)), std::invalid_argument);
}

TEST_CASE("region weights share one value per multi-channel position and stay positive") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = gaussian(rng, 24), b = gaussian(rng, 24);
        std::vector<std::uint8_t> ind(8);
        for (auto& v : ind) v = std::uint8_t(rng.bernoulli(0.6));
        const auto m = region_weights(a, b, ind);
        double mass = 0.0;
        for (std::size_t p = 0; p < 8; ++p)
            if (!ind[p])
                for (std::size_t c = 0; c < 3; ++c) mass += std::pow(double(a[p * 3 + c]) - double(b[p * 3 + c]), 2);
        CHECK(m.edited_mass == doctest::Approx(mass).epsilon(1e-12));
        for (std::size_t p = 0; p < 8; ++p) {
            CHECK(m.w[p] > 0.0f);
            CHECK(m.w[p] == (ind[p] ? 1.0f : float(1.0 / std::max(mass, kWeightEpsilon))));
        }
    }
}

TEST_CASE("weighted loss reduces to flow loss bitwise with unit weights") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t positions = std::size_t(rng.uniform_int(1, 20));
        const std::size_t per = std::size_t(rng.uniform_int(1, 12));
        const auto p = gaussian(rng, positions * per), t = gaussian(rng, positions * per);
        const std::vector<float> ones(positions, 1.0f);
        REQUIRE(weighted_flow_loss(p, t, ones) == flow_loss(p, t));
    }
}

TEST_CASE("weighted loss cancels the edit magnitude and is linear in w") {
    for (double d : {0.5, 2.0, 8.0}) {
        const std::vector<float> pred{float(d)}, target{0.0f};
        const std::vector<float> w{float(1.0 / (d * d))};
        CHECK(weighted_flow_loss(pred, target, w) == doctest::Approx(1.0).epsilon(1e-7));
    }
    Rng rng(7);
    const auto p = gaussian(rng, 12), t = gaussian(rng, 12);
    std::vector<float> w(4);
    for (auto& x : w) x = float(rng.uniform(0.1, 3.0));
    auto w2 = w;
    for (auto& x : w2) x *= 2.0f;
    CHECK(weighted_flow_loss(p, t, w2) == doctest::Approx(2.0 * weighted_flow_loss(p, t, w)).epsilon(1e-12));
}

TEST_CASE("weighted loss gradient matches formula and finite differences") {
    Rng rng(8);
    const auto p = gaussian(rng, 18), t = gaussian(rng, 18);
    std::vector<float> w(6);
    for (auto& x : w) x = float(rng.uniform(0.2, 2.0));
    const auto g = weighted_flow_loss_grad(p, t, w);
    const double h = 1e-3;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double formula = 2.0 * double(w[i / 3]) * (double(p[i]) - double(t[i])) / 18.0;
        CHECK(double(g[i]) == doctest::Approx(formula).epsilon(1e-6));
        // Finite differences in double on the same formula as the loss.
        auto loss_at = [&](double delta) {
            double s = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double d = double(p[k]) + (k == i ? delta : 0.0) - double(t[k]);
                s += double(w[k / 3]) * d * d;
            }
            return s / 18.0;
        };
        const double numeric = (loss_at(h) - loss_at(-h)) / (2 * h);
        CHECK(std::abs(numeric - double(g[i])) / std::max(std::abs(numeric), 1e-12) < 1e-4);
    }
}

TEST_CASE("timestep sampling") {
    Rng rng(9);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double t = sample_timestep(rng);
        REQUIRE((t >= 0.0 && t <= 1.0));
        sum += t;
    }
    const double mean = sum / n;
    CHECK((mean >= 0.497 && mean <= 0.503));
    Rng a(10), b(10);
    for (int i = 0; i < 100; ++i) {
        const double x = sample_timestep(a, TimestepMode::logit_normal);
        CHECK(x == sample_timestep(b, TimestepMode::logit_normal));
        CHECK((x > 0.0 && x < 1.0));
    }
    CHECK(parse_timestep_mode("logit_normal") == TimestepMode::logit_normal);
    CHECK_THROWS(parse_timestep_mode("cosine"));
}

TEST_CASE("pool positions averages channels") {
    const std::vector<float> v{1, 2, 3, 4, 5, 6};
    CHECK(pool_positions(v, 2) == std::vector<float>{2.0f, 5.0f});
}
