#include "combolab/core/param_store.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace combolab::core {

Tensor& ParamStore::add(std::string name, Tensor value) {
    if (index_.contains(name)) {
        throw std::invalid_argument(fmt::format("duplicate parameter name '{}'", name));
    }
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    grads_.emplace_back(value.shape());
    values_.push_back(std::move(value));
    return values_.back();
}

bool ParamStore::contains(std::string_view name) const {
    return index_.contains(std::string(name));
}

std::size_t ParamStore::index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw std::out_of_range(fmt::format("unknown parameter '{}'", name));
    }
    return it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t total = 0;
    for (const auto& v : values_) total += v.size();
    return total;
}

void ParamStore::zero_grad() {
    for (auto& g : grads_) g.fill(0.0);
}

}  // namespace combolab::core
