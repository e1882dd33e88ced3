#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t2t/rng.hpp"

namespace t2t {

/// One flow-matching training example in patch-token layout.
struct FlowSample {
    std::vector<float> x;    // clean latent in [-1, 1]
    std::vector<float> eps;  // Gaussian noise, same shape
    double t = 0.0;
    std::vector<float> x_t;       // t * x + (1 - t) * eps
    std::vector<float> v_target;  // x - eps
};

struct Interpolant {
    std::vector<float> x_t;
    std::vector<float> v_target;
};

/// x_t = t*x + (1-t)*eps and v* = x - eps. Throws on shape mismatch or t
/// outside [0, 1].
Interpolant interpolate(std::span<const float> x, std::span<const float> eps, double t);
FlowSample make_flow_sample(std::vector<float> x, std::vector<float> eps, double t);

/// Mean squared error over all elements.
double flow_loss(std::span<const float> v_pred, std::span<const float> v_target);

inline constexpr double kWeightEpsilon = 1e-8;

/// Per-position loss weights. Positions are the cells of the latent grid;
/// each position may carry several channels.
struct WeightMap {
    std::vector<float> w;      // one weight per position
    double edited_mass = 0.0;  // sum of (I - I')^2 over edited positions
};

/// Weight 1 where the indicator is 1; 1 / max(edited_mass, 1e-8) where it is
/// 0. `latent` and `target_latent` hold positions * channels values and the
/// indicator holds one entry per position (0 = edited).
WeightMap region_weights(std::span<const float> latent, std::span<const float> target_latent,
                         std::span<const std::uint8_t> edited_indicator);

/// mean_i w[pos(i)] * (v_pred_i - v_target_i)^2, where consecutive runs of
/// size/weights.size() elements share one position weight.
double weighted_flow_loss(std::span<const float> v_pred, std::span<const float> v_target,
                          std::span<const float> weights);

/// d/dv_pred of weighted_flow_loss: 2 * w * (v_pred - v_target) / N.
std::vector<float> weighted_flow_loss_grad(std::span<const float> v_pred, std::span<const float> v_target,
                                           std::span<const float> weights);

/// Mean over the channels of each position: tokens holds positions * k values.
std::vector<float> pool_positions(std::span<const float> tokens, std::size_t positions);

enum class TimestepMode { uniform, logit_normal };
TimestepMode parse_timestep_mode(const std::string& s);
std::string to_string(TimestepMode m);

double sample_timestep(Rng& rng, TimestepMode mode = TimestepMode::uniform);

}  // namespace t2t
