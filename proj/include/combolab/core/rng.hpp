#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace combolab::core {

// Deterministic random source keyed by (seed, stream name).
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. Distributions are implemented here rather than taken from
// <random> because the library distributions are implementation-defined.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed, std::string stream = "root");

    // Independent generator for a named child stream. Depends only on
    // (seed, stream path), never on how many draws this generator made.
    SeededRng substream(std::string_view name) const;

    std::uint64_t seed() const { return seed_; }
    const std::string& stream() const { return stream_; }

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }
    // Standard normal via Box-Muller.
    double normal();
    // Normal(mean, stddev) resampled until within bound_sigmas standard deviations.
    double truncated_normal(double mean, double stddev, double bound_sigmas);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[uniform_index(i)]);
        }
    }

    // k distinct indices from [0, n), returned in ascending order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

private:
    std::uint64_t seed_;
    std::string stream_;
    std::mt19937_64 engine_;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

}  // namespace combolab::core
