#pragma once

#include "combolab/core/tensor.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace combolab::core {

// Named parameters with parallel gradient buffers. Iteration follows
// insertion order, which fixes the order of optimizer updates.
class ParamStore {
public:
    Tensor& add(std::string name, Tensor value);

    bool contains(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;

    Tensor& value(std::string_view name) { return values_[index_of(name)]; }
    const Tensor& value(std::string_view name) const { return values_[index_of(name)]; }
    Tensor& grad(std::string_view name) { return grads_[index_of(name)]; }
    const Tensor& grad(std::string_view name) const { return grads_[index_of(name)]; }

    Tensor& value_at(std::size_t i) { return values_[i]; }
    const Tensor& value_at(std::size_t i) const { return values_[i]; }
    Tensor& grad_at(std::size_t i) { return grads_[i]; }
    const Tensor& grad_at(std::size_t i) const { return grads_[i]; }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    // Total number of scalar parameters.
    std::size_t scalar_count() const;

    void zero_grad();

    friend bool operator==(const ParamStore& a, const ParamStore& b) {
        return a.names_ == b.names_ && a.values_ == b.values_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace combolab::core
