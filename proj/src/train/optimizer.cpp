#include "combolab/train/optimizer.hpp"

#include <fmt/format.h>

#include <cmath>

namespace combolab::train {

AdamState AdamState::zeros_like(const core::ParamStore& params) {
    AdamState s;
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m.emplace_back(params.value_at(i).shape());
        s.v.emplace_back(params.value_at(i).shape());
    }
    return s;
}

void adam_step(core::ParamStore& params, AdamState& state, double lr, const TrainConfig& c) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw core::DimensionError(fmt::format("adam_step: optimizer state holds {} tensors, model has {}",
                                               state.m.size(), params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!core::all_finite(params.grad_at(i).values())) {
            throw core::NumericError(fmt::format("non-finite gradient in '{}'", params.names()[i]));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(c.beta1, t);
    const double correct2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        core::Tensor& w = params.value_at(i);
        const core::Tensor& g = params.grad_at(i);
        core::Tensor& m = state.m[i];
        core::Tensor& v = state.v[i];
        if (m.shape() != w.shape() || v.shape() != w.shape()) {
            throw core::DimensionError(fmt::format("adam_step: state shape mismatch for '{}'", params.names()[i]));
        }
        const double decay = w.rank() == 2 ? lr * c.weight_decay : 0.0;
        double* wp = w.data();
        double* mp = m.data();
        double* vp = v.data();
        const double* gp = g.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            wp[k] -= decay * wp[k];
            mp[k] = c.beta1 * mp[k] + (1.0 - c.beta1) * gp[k];
            vp[k] = c.beta2 * vp[k] + (1.0 - c.beta2) * gp[k] * gp[k];
            wp[k] -= lr * (mp[k] / correct1) / (std::sqrt(vp[k] / correct2) + c.adam_eps);
        }
    }
}

}  // namespace combolab::train
