#pragma once

#include "combolab/core/param_store.hpp"
#include "combolab/train/config.hpp"

#include <cstdint>
#include <vector>

namespace combolab::train {

// First and second moments, parallel to the ParamStore's insertion order.
struct AdamState {
    std::vector<core::Tensor> m;
    std::vector<core::Tensor> v;
    std::uint64_t step = 0;

    static AdamState zeros_like(const core::ParamStore& params);
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One Adam update with bias correction using the gradients held in `params`.
// Decoupled weight decay (theta -= lr * wd * theta) applies to matrices only.
// Non-finite gradients throw core::NumericError naming the tensor.
void adam_step(core::ParamStore& params, AdamState& state, double lr, const TrainConfig& config);

}  // namespace combolab::train
