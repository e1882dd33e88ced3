#pragma once

#include <cstdint>
#include <string>

namespace t2t {

struct GradCheckOptions {
    std::uint64_t seed = 0;
    int dim = 16;
    int depth = 2;
    int heads = 2;
    double fraction = 0.01;  // share of parameters sampled
    double step = 1e-3;
    double tolerance = 1e-3;
    bool with_lora = true;
    bool predict_clean = true;
};

struct GradCheckResult {
    std::size_t checked = 0;
    double max_rel_err = 0.0;
    std::string worst_name;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = false;
};

/// Central finite differences of the end-to-end weighted flow loss against
/// the analytic backward pass, in double precision, on a randomly
/// initialized small model (modulation and head randomized so no path is
/// trivially zero). Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult gradient_check(const GradCheckOptions& options);

}  // namespace t2t
