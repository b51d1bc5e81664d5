#include "balancedit/numerics/adam.hpp"

#include <cmath>

#include "balancedit/common/error.hpp"

namespace balancedit::numerics {

AdamState::AdamState(const Parameter& p, AdamHyper hyper)
    : hyper(hyper), m(p.value.shape()), v(p.value.shape()) {}

void adam_step(Parameter& p, AdamState& state) {
    if (!p.grad.same_shape(p.value) || !state.m.same_shape(p.value) || !state.v.same_shape(p.value)) {
        fail(ErrorKind::shape, "adam: state shapes do not match parameter '" + p.name + "' " +
                                   shape_string(p.value.shape()));
    }
    if (!p.grad.all_finite()) {
        fail(ErrorKind::numeric, "adam: non-finite gradient in parameter '" + p.name + "'");
    }
    const AdamHyper& h = state.hyper;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = state.m.data();
    auto v = state.v.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        value[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
    p.zero_grad();
}

}  // namespace balancedit::numerics
