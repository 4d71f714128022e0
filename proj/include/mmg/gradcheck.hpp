#pragma once

#include "mmg/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmg {

// Central-difference verification of the reverse-mode gradients through
// the entire pipeline: synthetic episode -> temporal aggregation -> graph
// -> modulated attention layers (with message scaling, so the refinement
// parameters sit on the loss path) -> fusion -> cross-entropy.
struct GradCheckGroup {
    std::string name;       // parameter tensor, e.g. "gat0.w"
    double max_rel_err = 0.0;
    double max_abs_diff = 0.0;
};

struct GradCheckResult {
    std::vector<GradCheckGroup> groups;
    double worst_rel_err = 0.0;
    std::string worst_group;

    bool within(double tolerance) const { return worst_rel_err < tolerance; }
};

// Builds a two-frame, one-object-per-frame episode at the configured
// widths, then compares every analytic partial against (f(x+h)-f(x-h))/2h.
// Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator.
GradCheckResult grad_check_model(const ModelConfig& cfg, std::uint64_t seed,
                                 double step = 1e-6);

std::string grad_check_report(const GradCheckResult& r);

} // namespace mmg
