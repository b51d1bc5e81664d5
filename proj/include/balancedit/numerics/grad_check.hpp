#pragma once

#include <functional>
#include <span>
#include <string>

#include "balancedit/numerics/tensor.hpp"

namespace balancedit::numerics {

// Evaluates the scalar loss at the current parameter values. When `accumulate`
// is true it must also add d loss / d param into each Parameter::grad.
using DifferentiableFn = std::function<double(bool accumulate)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

// Central differences against reverse-mode gradients. The per-element error is
// |analytic - numeric| / max(|numeric|, floor). Never throws on mismatch; only
// reports. Parameter values are restored exactly before returning.
GradCheckReport grad_check(const DifferentiableFn& f, std::span<Parameter* const> params, double h = 1e-5,
                           double floor = 1e-8);

}  // namespace balancedit::numerics
