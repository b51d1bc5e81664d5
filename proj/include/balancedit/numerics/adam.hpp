#pragma once

#include <cstdint>

#include "balancedit/numerics/tensor.hpp"

namespace balancedit::numerics {

struct AdamHyper {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    Tensor m;
    Tensor v;

    AdamState() = default;
    AdamState(const Parameter& p, AdamHyper hyper = {});
};

// Bias-corrected Adam update. Zeroes p.grad afterwards. Throws ErrorKind::numeric
// (naming the parameter) if any gradient entry is not finite; p is untouched then.
void adam_step(Parameter& p, AdamState& state);

}  // namespace balancedit::numerics
