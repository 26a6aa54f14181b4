#include "combolab/core/tensor.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace combolab::core {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(fmt::format("{}: expected a matrix, got shape {}", what,
                                         to_string(t.shape())));
    }
}

}  // namespace

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    for (auto dim : shape_) {
        if (dim == 0) throw DimensionError("tensor dimensions must be positive: " + to_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw DimensionError(fmt::format("shape {} holds {} values, got {}", to_string(shape_),
                                         element_count(shape_), data_.size()));
    }
    for (auto dim : shape_) {
        if (dim == 0) throw DimensionError("tensor dimensions must be positive: " + to_string(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<double> Tensor::row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
}

std::span<const double> Tensor::row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw DimensionError("item() requires a single-element tensor, got " + to_string(shape_));
    }
    return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError(fmt::format("matmul: inner dimensions differ for {} and {}",
                                         to_string(a.shape()), to_string(b.shape())));
    }
    Tensor out({a.rows(), b.cols()});
    MutMap(out.data(), a.rows(), b.cols()).noalias() =
        ConstMap(a.data(), a.rows(), a.cols()) * ConstMap(b.data(), b.rows(), b.cols());
    return out;
}

void accumulate_matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
    MutMap(out.data(), a.cols(), b.cols()).noalias() +=
        ConstMap(a.data(), a.rows(), a.cols()).transpose() * ConstMap(b.data(), b.rows(), b.cols());
}

void accumulate_matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
    MutMap(out.data(), a.rows(), b.rows()).noalias() +=
        ConstMap(a.data(), a.rows(), a.cols()) * ConstMap(b.data(), b.rows(), b.cols()).transpose();
}

}  // namespace combolab::core
