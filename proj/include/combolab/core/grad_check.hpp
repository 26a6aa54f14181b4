#pragma once

#include "combolab/core/autodiff.hpp"
#include "combolab/core/param_store.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace combolab::core {

// Builds a scalar loss on the given tape from parameters in the store the
// caller closed over. Must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_param;
    std::size_t coordinates_checked = 0;
};

// Compares reverse-mode gradients with central differences
// (f(t+eps) - f(t-eps)) / (2 eps) on up to `sample` coordinates per named
// tensor. Relative error is |a-b| / max(1, |a|, |b|).
GradCheckResult grad_check(const LossBuilder& loss_fn, ParamStore& params, double eps = 1e-4,
                           std::size_t sample = 8, std::uint64_t seed = 0);

}  // namespace combolab::core
