#pragma once

#include "combolab/arch/model.hpp"
#include "combolab/data/batching.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace combolab::analysis {

enum class PositionPolicy {
    MaskedPositions,  // BERT: positions selected for masking
    NextToken,        // GPT: every position with a next-token target
};

PositionPolicy default_policy(arch::Family family);
std::string to_string(PositionPolicy p);

struct ActivationTrace {
    std::vector<std::string> sites;
    std::vector<core::Tensor> reps;  // per site [n x d]
    std::vector<int> targets;
    std::map<std::string, std::string> meta;

    std::size_t samples() const { return targets.size(); }
    // Throws std::invalid_argument if sites and targets disagree.
    void validate() const;
};

struct TraceOptions {
    std::size_t sample_budget = 100000;
    PositionPolicy policy = PositionPolicy::NextToken;
    std::uint64_t seed = 0;
    std::size_t batch = 32;
};

// Enumerates eligible positions over every dataset row (masking drawn with
// `seed`), samples min(budget, eligible) of them, and records each site at
// those positions. Throws std::invalid_argument when nothing is eligible.
ActivationTrace collect_trace(arch::Model& model, const data::Dataset& dataset, const TraceOptions& options);

// Float32 container: "CMBLTRCE", u32 version, u64 header length, header
// text, int32 targets, then one [n x d] float32 matrix per site.
void write_trace(const std::filesystem::path& path, const ActivationTrace& trace);
ActivationTrace read_trace(const std::filesystem::path& path);

}  // namespace combolab::analysis
