#pragma once

// Independent reference implementations used by the unit tests, the
// acceptance runner and `t2t selfcheck`.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t2t/caption.hpp"

namespace t2t::oracle {

/// Classic formulation: repeatedly take the best remaining box (highest
/// score, then lowest index) and delete every remaining box it overlaps.
std::vector<DetectionBox> brute_force_nms(const std::vector<DetectionBox>& boxes, double iou_threshold,
                                          bool class_aware);

using LMat = std::vector<std::vector<long double>>;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix in long double.
void jacobi_eigen(LMat a, std::vector<long double>& values, LMat& vectors);

/// Frechet distance between Gaussians with every step in long double.
long double frechet(const std::vector<long double>& mu1, const LMat& s1, const std::vector<long double>& mu2,
                    const LMat& s2);

long double weighted_loss(std::span<const float> pred, std::span<const float> target, std::span<const float> w);

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<SuiteResult> run_oracle_suites(std::uint64_t seed = 1, int nms_sets = 1000, int frechet_pairs = 100);

}  // namespace t2t::oracle
