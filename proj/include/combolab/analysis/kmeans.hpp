#pragma once

#include "combolab/core/tensor.hpp"

#include <cstdint>
#include <vector>

namespace combolab::analysis {

struct KMeansOptions {
    std::size_t k = 64;
    std::size_t batch_size = 1024;
    std::size_t passes = 10;
    std::uint64_t seed = 0;
};

struct ClusterModel {
    core::Tensor centroids;  // [k_eff x d]
    std::size_t requested_k = 0;
    KMeansOptions options;

    std::size_t k() const { return centroids.rows(); }
};

// Mini-batch k-means with per-centroid 1/count step sizes.
// Rows are sorted lexicographically before anything is drawn, so the result
// does not depend on input row order. k-means++ seeding runs on a seeded
// subsample of 3 * batch_size rows (all rows when too few distinct ones are
// in it). Each pass walks a fresh seeded permutation of all rows in
// mini-batches. k is capped at the number of distinct rows.
ClusterModel minibatch_kmeans(const core::Tensor& reps, const KMeansOptions& options);

// Nearest centroid by squared Euclidean distance, ties to the lowest index.
std::vector<int> assign_clusters(const ClusterModel& model, const core::Tensor& reps);

std::size_t distinct_rows(const core::Tensor& reps);

}  // namespace combolab::analysis
