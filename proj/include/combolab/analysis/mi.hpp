#pragma once

#include "combolab/analysis/kmeans.hpp"
#include "combolab/analysis/trace.hpp"

#include <map>
#include <span>
#include <utility>
#include <vector>

namespace combolab::analysis {

struct JointHistogram {
    std::map<std::pair<int, int>, std::size_t> counts;
    std::map<int, std::size_t> x_totals;
    std::map<int, std::size_t> y_totals;
    std::size_t total = 0;

    static JointHistogram build(std::span<const int> x, std::span<const int> y);
    double mutual_information() const;  // nats
    double entropy_x() const;
    double entropy_y() const;
};

// Plug-in estimate over the empirical joint table, natural log.
double discrete_mi(std::span<const int> labels, std::span<const int> targets);

// Clusters each site independently and measures MI with the targets.
std::vector<double> mi_curve(const ActivationTrace& trace, const KMeansOptions& options);

}  // namespace combolab::analysis
