#include "balancedit/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace balancedit::numerics {

GradCheckReport grad_check(const DifferentiableFn& f, std::span<Parameter* const> params, double h,
                           double floor) {
    for (Parameter* p : params) {
        p->grad = Tensor(p->value.shape());
    }
    f(true);

    GradCheckReport report;
    for (Parameter* p : params) {
        const Tensor analytic = p->grad;
        auto value = p->value.data();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double up = f(false);
            value[i] = saved - h;
            const double down = f(false);
            value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), floor);
            ++report.checked;
            if (!(err <= report.max_rel_error)) {
                report.max_rel_error = std::isnan(err) ? INFINITY : err;
                report.worst_parameter = p->name;
                report.worst_index = i;
                report.analytic = analytic[i];
                report.numeric = numeric;
            }
        }
        p->zero_grad();
    }
    return report;
}

}  // namespace balancedit::numerics
