#include "combolab/core/grad_check.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace combolab::core {

namespace {

double evaluate(const LossBuilder& loss_fn) {
    Tape tape(false);
    const double loss = loss_fn(tape).value().item();
    if (!std::isfinite(loss)) throw NumericError("grad_check: loss is not finite");
    return loss;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss_fn, ParamStore& params, double eps,
                           std::size_t sample, std::uint64_t seed) {
    params.zero_grad();
    {
        Tape tape(true);
        Var loss = loss_fn(tape);
        if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: loss is not finite");
        tape.backward(loss);
    }

    GradCheckResult result;
    SeededRng rng(seed, "grad_check");
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = params.value_at(p);
        const Tensor& grad = params.grad_at(p);
        const auto coords = rng.sample_indices(value.size(), std::min(sample, value.size()));
        for (std::size_t idx : coords) {
            const double saved = value[idx];
            value[idx] = saved + eps;
            const double up = evaluate(loss_fn);
            value[idx] = saved - eps;
            const double down = evaluate(loss_fn);
            value[idx] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = grad[idx];
            const double rel = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            ++result.coordinates_checked;
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_param = fmt::format("{}[{}]", params.names()[p], idx);
            }
        }
    }
    return result;
}

}  // namespace combolab::core
