#include "combolab/analysis/kmeans.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numeric>

namespace combolab::analysis {

namespace {

bool row_less(const core::Tensor& x, std::size_t a, std::size_t b) {
    const double* pa = x.data() + a * x.cols();
    const double* pb = x.data() + b * x.cols();
    return std::lexicographical_compare(pa, pa + x.cols(), pb, pb + x.cols());
}

bool row_equal(const core::Tensor& x, std::size_t a, std::size_t b) {
    const double* pa = x.data() + a * x.cols();
    return std::equal(pa, pa + x.cols(), x.data() + b * x.cols());
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

std::size_t nearest(const core::Tensor& c, const double* x) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c.rows(); ++i) {
        const double d = sq_dist(c.data() + i * c.cols(), x, c.cols());
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

core::Tensor sorted_copy(const core::Tensor& reps) {
    std::vector<std::size_t> order(reps.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row_less(reps, a, b); });
    core::Tensor out({reps.rows(), reps.cols()});
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::copy_n(reps.data() + order[i] * reps.cols(), reps.cols(), out.data() + i * reps.cols());
    }
    return out;
}

std::size_t distinct_sorted(const core::Tensor& x, std::span<const std::size_t> rows) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i == 0 || !row_equal(x, rows[i - 1], rows[i])) ++n;
    }
    return n;
}

core::Tensor kmeans_pp(const core::Tensor& x, std::span<const std::size_t> pool, std::size_t k, core::SeededRng rng) {
    const std::size_t d = x.cols();
    core::Tensor c({k, d});
    std::vector<double> dist(pool.size(), std::numeric_limits<double>::infinity());
    std::size_t pick = pool[rng.uniform_index(pool.size())];
    for (std::size_t ci = 0; ci < k; ++ci) {
        std::copy_n(x.data() + pick * d, d, c.data() + ci * d);
        double total = 0.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            dist[i] = std::min(dist[i], sq_dist(x.data() + pool[i] * d, c.data() + ci * d, d));
            total += dist[i];
        }
        if (ci + 1 == k) break;
        double u = rng.uniform() * total;
        std::size_t chosen = pool.size();
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (dist[i] <= 0.0) continue;
            chosen = i;
            u -= dist[i];
            if (u < 0.0) break;
        }
        pick = pool[chosen];
    }
    return c;
}

}  // namespace

std::size_t distinct_rows(const core::Tensor& reps) {
    const core::Tensor x = sorted_copy(reps);
    std::vector<std::size_t> all(x.rows());
    std::iota(all.begin(), all.end(), 0);
    return distinct_sorted(x, all);
}

ClusterModel minibatch_kmeans(const core::Tensor& reps, const KMeansOptions& options) {
    if (reps.rank() != 2 || reps.rows() == 0) throw std::invalid_argument("k-means needs a non-empty [n x d] matrix");
    if (options.k == 0) throw std::invalid_argument("k-means: k must be positive");
    if (options.batch_size == 0) throw std::invalid_argument("k-means: batch_size must be positive");
    const core::Tensor x = sorted_copy(reps);
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const std::size_t k = std::min(options.k, distinct_sorted(x, all));

    const core::SeededRng root(options.seed, "kmeans");
    core::SeededRng sub_rng = root.substream("subsample");
    std::vector<std::size_t> pool = sub_rng.sample_indices(n, std::min(n, 3 * options.batch_size));
    if (distinct_sorted(x, pool) < k) pool = all;

    ClusterModel model;
    model.requested_k = options.k;
    model.options = options;
    model.centroids = kmeans_pp(x, pool, k, root.substream("init"));

    std::vector<std::size_t> counts(k, 0);
    std::vector<std::size_t> order = all;
    std::vector<std::size_t> labels;
    for (std::size_t pass = 0; pass < options.passes; ++pass) {
        core::SeededRng prng = root.substream(fmt::format("pass/{}", pass));
        prng.shuffle(std::span(order));
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t end = std::min(n, start + options.batch_size);
            labels.clear();
            for (std::size_t i = start; i < end; ++i) labels.push_back(nearest(model.centroids, x.data() + order[i] * d));
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t c = labels[i - start];
                const double eta = 1.0 / static_cast<double>(++counts[c]);
                double* cp = model.centroids.data() + c * d;
                const double* xp = x.data() + order[i] * d;
                for (std::size_t j = 0; j < d; ++j) cp[j] += eta * (xp[j] - cp[j]);
            }
        }
    }
    return model;
}

std::vector<int> assign_clusters(const ClusterModel& model, const core::Tensor& reps) {
    if (reps.cols() != model.centroids.cols()) {
        throw std::invalid_argument(fmt::format("assign_clusters: width {} does not match centroid width {}",
                                                reps.cols(), model.centroids.cols()));
    }
    std::vector<int> out(reps.rows());
    for (std::size_t i = 0; i < reps.rows(); ++i) {
        out[i] = static_cast<int>(nearest(model.centroids, reps.data() + i * reps.cols()));
    }
    return out;
}

}  // namespace combolab::analysis
