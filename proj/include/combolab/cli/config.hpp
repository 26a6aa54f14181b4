#pragma once

#include "combolab/arch/arch_spec.hpp"
#include "combolab/train/config.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace combolab::cli {

inline constexpr int kSchemaVersion = 1;

// Parse and validation failures; the message names the line or field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string manifest;
    double dev_fraction = 0.05;
    std::string tokenizer = "char";  // byte, char or word-list
    std::string word_list;           // one word per line, word-list mode only

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct AnalysisConfig {
    std::size_t k = 64;
    std::size_t sample_budget = 100000;
    std::size_t min_count = 5;
    std::size_t kmeans_batch = 1024;
    std::size_t kmeans_passes = 10;
    std::uint64_t trace_seed = 99;

    friend bool operator==(const AnalysisConfig&, const AnalysisConfig&) = default;
};

// "desk" or "paper" (k 2000, 6.94M samples, min_count 50).
AnalysisConfig analysis_preset(std::string_view name);

struct EvalConfig {
    std::string ood = "all";  // all, none, or comma-separated domain names
    std::size_t ood_max_rows = 0;
    std::string mcq_tasks;
    std::string mcq_dev;
    std::string mcq_demos;
    std::string fewshot = "zero";  // zero, one, five
    std::string scoring = "best";  // best or a scoring mode name

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct SweepConfig {
    std::vector<arch::Ratio> ratios;
    double align_tolerance = 0.01;
    std::string align_target = "worst";  // worst or a loss value
    std::size_t parallelism = 1;

    friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

std::vector<arch::Ratio> default_sweep_ratios();

struct RunConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 1;
    std::string output_dir = "runs";
    arch::ArchSpec arch;
    train::TrainConfig train;
    DataConfig data;
    AnalysisConfig analysis;
    EvalConfig eval;
    SweepConfig sweep;
    // Directory relative paths resolve against; not serialized.
    std::filesystem::path base_dir = ".";

    std::filesystem::path resolve(const std::string& path) const;
    // Field checks plus existence of every referenced path.
    void validate() const;

    friend bool operator==(const RunConfig& a, const RunConfig& b) {
        return a.schema_version == b.schema_version && a.seed == b.seed && a.output_dir == b.output_dir &&
               a.arch == b.arch && a.train == b.train && a.data == b.data && a.analysis == b.analysis &&
               a.eval == b.eval && a.sweep == b.sweep;
    }
};

// "desk", "paper-small", "paper-large", "moe-desk".
RunConfig run_preset(std::string_view name);

// key = value lines, [section] headers, '#' comments. "preset" inside
// [arch], [train] or [analysis] applies that preset before the other keys of
// the section. Errors read "<source>:<line>: <field>: <problem>".
// Keys override `base` (the desk preset unless given).
RunConfig parse_config(const std::string& text, const std::string& source = "config",
                       const RunConfig& base = run_preset("desk"));
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = run_preset("desk"));
std::string serialize_config(const RunConfig& config);

}  // namespace combolab::cli
