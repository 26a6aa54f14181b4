#pragma once

#include "combolab/analysis/trace.hpp"

#include <span>
#include <vector>

namespace combolab::analysis {

inline constexpr std::size_t kDeskMinCount = 5;

struct TpCentroids {
    std::vector<int> tokens;       // ascending
    core::Tensor vectors;          // [tokens x d], mean of unit rows
    std::size_t zero_rows = 0;     // rows skipped for having zero norm
};

// Throws std::invalid_argument when no token reaches min_count rows.
TpCentroids tp_centroids(const core::Tensor& reps, std::span<const int> targets, std::size_t min_count = kDeskMinCount);

// Share of rows (with a kept target) whose most cosine-similar centroid is
// their own token. Zero centroids never win; ties go to the lowest token id.
double tp_accuracy(const core::Tensor& reps, std::span<const int> targets, const TpCentroids& centroids);

// Per site: centroids fitted on that site's rows, accuracy on the same rows.
std::vector<double> tp_curve(const ActivationTrace& trace, std::size_t min_count = kDeskMinCount);

}  // namespace combolab::analysis
