#include "combolab/analysis/tp.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace combolab::analysis {

namespace {

double norm(const double* x, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[j] * x[j];
    return std::sqrt(s);
}

}  // namespace

TpCentroids tp_centroids(const core::Tensor& reps, std::span<const int> targets, std::size_t min_count) {
    if (reps.rank() != 2 || reps.rows() != targets.size()) {
        throw std::invalid_argument("tp_centroids: reps and targets differ in length");
    }
    const std::size_t d = reps.cols();
    TpCentroids out;
    std::map<int, std::vector<double>> sums;
    std::map<int, std::size_t> counts, unit_rows;
    for (std::size_t i = 0; i < reps.rows(); ++i) {
        ++counts[targets[i]];
        auto& s = sums[targets[i]];
        s.resize(d, 0.0);
        const double* x = reps.data() + i * d;
        const double len = norm(x, d);
        if (len == 0.0) {
            ++out.zero_rows;
            continue;
        }
        for (std::size_t j = 0; j < d; ++j) s[j] += x[j] / len;
        ++unit_rows[targets[i]];
    }
    for (const auto& [tok, c] : counts) {
        if (c >= min_count) out.tokens.push_back(tok);
    }
    if (out.tokens.empty()) {
        throw std::invalid_argument(
            fmt::format("no token has at least {} samples; lower min_count", min_count));
    }
    out.vectors = core::Tensor({out.tokens.size(), d});
    for (std::size_t t = 0; t < out.tokens.size(); ++t) {
        const auto& s = sums[out.tokens[t]];
        const std::size_t c = unit_rows[out.tokens[t]];
        for (std::size_t j = 0; j < d; ++j) out.vectors(t, j) = c == 0 ? 0.0 : s[j] / static_cast<double>(c);
    }
    return out;
}

double tp_accuracy(const core::Tensor& reps, std::span<const int> targets, const TpCentroids& centroids) {
    if (reps.rank() != 2 || reps.rows() != targets.size()) {
        throw std::invalid_argument("tp_accuracy: reps and targets differ in length");
    }
    const std::size_t d = reps.cols();
    if (d != centroids.vectors.cols()) throw std::invalid_argument("tp_accuracy: width mismatch");
    std::vector<double> cnorm(centroids.tokens.size());
    for (std::size_t t = 0; t < cnorm.size(); ++t) cnorm[t] = norm(centroids.vectors.data() + t * d, d);

    std::size_t evaluated = 0, correct = 0;
    for (std::size_t i = 0; i < reps.rows(); ++i) {
        if (!std::binary_search(centroids.tokens.begin(), centroids.tokens.end(), targets[i])) continue;
        ++evaluated;
        const double* x = reps.data() + i * d;
        const double xn = norm(x, d);
        int best = -1;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < cnorm.size(); ++t) {
            if (cnorm[t] == 0.0) continue;
            double dot = 0.0;
            const double* c = centroids.vectors.data() + t * d;
            for (std::size_t j = 0; j < d; ++j) dot += x[j] * c[j];
            const double sim = xn == 0.0 ? 0.0 : dot / (xn * cnorm[t]);
            if (sim > best_sim) {
                best_sim = sim;
                best = centroids.tokens[t];
            }
        }
        if (best == targets[i]) ++correct;
    }
    return evaluated == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(evaluated);
}

std::vector<double> tp_curve(const ActivationTrace& trace, std::size_t min_count) {
    trace.validate();
    std::vector<double> out;
    for (const auto& rep : trace.reps) {
        out.push_back(tp_accuracy(rep, trace.targets, tp_centroids(rep, trace.targets, min_count)));
    }
    return out;
}

}  // namespace combolab::analysis
