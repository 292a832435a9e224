// Dual ascent on the constraint multipliers.
#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "core.hpp"

namespace fgrpo {

struct ConstraintBatchScore {
    std::optional<double> cbar; // applicable-mass-weighted mean, absent when nothing applies
    int applicable = 0;
};

// Mean of signal k over every rollout in the batch whose mask is on.
inline ConstraintBatchScore batch_constraint_score(const std::vector<RolloutGroup>& batch,
                                                   Constraint k) {
    ConstraintBatchScore out;
    double sum = 0.0;
    for (const auto& g : batch) {
        for (const auto& r : g.rollouts) {
            const auto& v = constraint_value(r.rewards, k);
            if (v) {
                sum += *v;
                ++out.applicable;
            }
        }
    }
    if (out.applicable > 0) out.cbar = sum / static_cast<double>(out.applicable);
    return out;
}

// One ascent step: lambda <- clip(lambda + eta * (tau - cbar), 0, lambda_max).
// Batches with too little applicable evidence leave the multiplier untouched.
inline void dual_update(LagrangeState& state, Constraint k, const ConstraintBatchScore& score) {
    const int ki = static_cast<int>(k);
    state.last_cbar[ki] = score.cbar;
    state.last_applicable[ki] = score.applicable;
    if (!score.cbar || score.applicable < state.min_applicable) return;
    const double next = state.lambda[ki] + state.eta_lambda * (state.tau[ki] - *score.cbar);
    state.lambda[ki] = std::clamp(next, 0.0, state.lambda_max);
}

// All three multipliers advance independently from the same batch.
inline void step_duals(LagrangeState& state, const std::vector<RolloutGroup>& batch) {
    for (Constraint k : kConstraints) dual_update(state, k, batch_constraint_score(batch, k));
}

} // namespace fgrpo
