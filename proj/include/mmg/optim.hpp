#pragma once

#include "mmg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace mmg {

// Adam with bias correction.  One state object serves one fixed list of
// parameter tensors; moment buffers are indexed positionally, so the
// parameter list must keep a stable order across steps (ours is the
// model's named-tensor order).
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step_count = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;

    bool initialized() const { return !first_moment.empty(); }
};

// One update over all params from their accumulated .grad() buffers:
//   m <- b1 m + (1-b1) g;      v <- b2 v + (1-b2) g^2
//   p <- p - lr * m^ / (sqrt(v^) + eps)       (^ = bias-corrected)
// Moment buffers are created lazily on the first call.  Throws ShapeError
// if a moment buffer no longer matches its parameter.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

// Linear warm-up into cosine annealing, indexed by epoch:
//   e <  warmup: base * (1 + e*(warmup-1)/warmup) / warmup
//                (ramps linearly from base/warmup at e=0, reaching base
//                 exactly where the cosine takes over)
//   e >= warmup: base * 0.5 * (1 + cos(pi*(e-warmup)/(total-warmup)))
struct LrSchedule {
    double base_lr = 1e-4;
    int warmup_epochs = 5;
    int total_epochs = 50;
};

double lr_at(const LrSchedule& schedule, int epoch);

} // namespace mmg
