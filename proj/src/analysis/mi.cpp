#include "combolab/analysis/mi.hpp"

#include <fmt/format.h>

#include <cmath>

namespace combolab::analysis {

namespace {

double entropy(const std::map<int, std::size_t>& totals, std::size_t n) {
    double h = 0.0;
    for (const auto& [v, c] : totals) {
        const double p = static_cast<double>(c) / static_cast<double>(n);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

JointHistogram JointHistogram::build(std::span<const int> x, std::span<const int> y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument(fmt::format("histogram inputs differ in length ({} vs {})", x.size(), y.size()));
    }
    if (x.empty()) throw std::invalid_argument("histogram needs at least one sample");
    JointHistogram h;
    for (std::size_t i = 0; i < x.size(); ++i) {
        ++h.counts[{x[i], y[i]}];
        ++h.x_totals[x[i]];
        ++h.y_totals[y[i]];
    }
    h.total = x.size();
    return h;
}

double JointHistogram::mutual_information() const {
    const double n = static_cast<double>(total);
    double mi = 0.0;
    for (const auto& [xy, c] : counts) {
        const double cx = static_cast<double>(x_totals.at(xy.first));
        const double cy = static_cast<double>(y_totals.at(xy.second));
        const double cxy = static_cast<double>(c);
        mi += cxy / n * std::log(cxy * n / (cx * cy));
    }
    return std::max(0.0, mi);
}

double JointHistogram::entropy_x() const { return entropy(x_totals, total); }
double JointHistogram::entropy_y() const { return entropy(y_totals, total); }

double discrete_mi(std::span<const int> labels, std::span<const int> targets) {
    return JointHistogram::build(labels, targets).mutual_information();
}

std::vector<double> mi_curve(const ActivationTrace& trace, const KMeansOptions& options) {
    trace.validate();
    std::vector<double> out;
    for (const auto& rep : trace.reps) {
        const ClusterModel model = minibatch_kmeans(rep, options);
        out.push_back(discrete_mi(assign_clusters(model, rep), trace.targets));
    }
    return out;
}

}  // namespace combolab::analysis
