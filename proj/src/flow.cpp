#include "t2t/flow.hpp"

#include <cmath>
#include <stdexcept>

namespace t2t {
namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

std::size_t channels_per_position(std::size_t elements, std::size_t positions, const char* what) {
    if (positions == 0 || elements % positions != 0)
        throw std::invalid_argument(std::string(what) + ": weights do not tile the elements");
    return elements / positions;
}

// Shared by the plain and weighted losses so unit weights reproduce the plain
// loss bit for bit.
double mean_weighted_sq(std::span<const float> a, std::span<const float> b, const float* weights,
                        std::size_t per_position) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        const double w = weights ? double(weights[i / per_position]) : 1.0;
        sum += w * (d * d);
    }
    return a.empty() ? 0.0 : sum / double(a.size());
}

}  // namespace

Interpolant interpolate(std::span<const float> x, std::span<const float> eps, double t) {
    require_same_size(x.size(), eps.size(), "interpolate");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t outside [0, 1]");
    Interpolant out;
    out.x_t.resize(x.size());
    out.v_target.resize(x.size());
    const float tf = float(t);
    const float sf = float(1.0 - t);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.x_t[i] = tf * x[i] + sf * eps[i];
        out.v_target[i] = x[i] - eps[i];
    }
    return out;
}

FlowSample make_flow_sample(std::vector<float> x, std::vector<float> eps, double t) {
    auto ip = interpolate(x, eps, t);
    return {std::move(x), std::move(eps), t, std::move(ip.x_t), std::move(ip.v_target)};
}

double flow_loss(std::span<const float> v_pred, std::span<const float> v_target) {
    require_same_size(v_pred.size(), v_target.size(), "flow_loss");
    return mean_weighted_sq(v_pred, v_target, nullptr, 1);
}

WeightMap region_weights(std::span<const float> latent, std::span<const float> target_latent,
                         std::span<const std::uint8_t> edited_indicator) {
    require_same_size(latent.size(), target_latent.size(), "region_weights");
    const std::size_t per = channels_per_position(latent.size(), edited_indicator.size(), "region_weights");
    WeightMap map;
    map.w.assign(edited_indicator.size(), 1.0f);
    bool any_edited = false;
    for (std::size_t p = 0; p < edited_indicator.size(); ++p) {
        if (edited_indicator[p] != 0) continue;
        any_edited = true;
        for (std::size_t c = 0; c < per; ++c) {
            const double d = double(latent[p * per + c]) - double(target_latent[p * per + c]);
            map.edited_mass += d * d;
        }
    }
    if (!any_edited) return map;
    const float w_edit = float(1.0 / std::max(map.edited_mass, kWeightEpsilon));
    for (std::size_t p = 0; p < edited_indicator.size(); ++p)
        if (edited_indicator[p] == 0) map.w[p] = w_edit;
    return map;
}

double weighted_flow_loss(std::span<const float> v_pred, std::span<const float> v_target,
                          std::span<const float> weights) {
    require_same_size(v_pred.size(), v_target.size(), "weighted_flow_loss");
    const std::size_t per = channels_per_position(v_pred.size(), weights.size(), "weighted_flow_loss");
    return mean_weighted_sq(v_pred, v_target, weights.data(), per);
}

std::vector<float> weighted_flow_loss_grad(std::span<const float> v_pred, std::span<const float> v_target,
                                           std::span<const float> weights) {
    require_same_size(v_pred.size(), v_target.size(), "weighted_flow_loss_grad");
    const std::size_t per = channels_per_position(v_pred.size(), weights.size(), "weighted_flow_loss_grad");
    std::vector<float> grad(v_pred.size());
    const double scale = 2.0 / double(v_pred.size());
    for (std::size_t i = 0; i < v_pred.size(); ++i)
        grad[i] = float(scale * double(weights[i / per]) * (double(v_pred[i]) - double(v_target[i])));
    return grad;
}

std::vector<float> pool_positions(std::span<const float> tokens, std::size_t positions) {
    const std::size_t per = channels_per_position(tokens.size(), positions, "pool_positions");
    std::vector<float> out(positions);
    for (std::size_t p = 0; p < positions; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < per; ++c) s += tokens[p * per + c];
        out[p] = float(s / double(per));
    }
    return out;
}

TimestepMode parse_timestep_mode(const std::string& s) {
    if (s == "uniform") return TimestepMode::uniform;
    if (s == "logit_normal" || s == "logit-normal") return TimestepMode::logit_normal;
    throw std::invalid_argument("unknown timestep mode: " + s);
}

std::string to_string(TimestepMode m) { return m == TimestepMode::uniform ? "uniform" : "logit_normal"; }

double sample_timestep(Rng& rng, TimestepMode mode) {
    if (mode == TimestepMode::uniform) return rng.uniform();
    return 1.0 / (1.0 + std::exp(-rng.normal()));
}

}  // namespace t2t
