#pragma once

#include "combolab/analysis/contribution.hpp"
#include "combolab/analysis/trace.hpp"
#include "combolab/cli/config.hpp"
#include "combolab/data/corpus.hpp"
#include "combolab/data/tokenizer.hpp"
#include "combolab/train/align.hpp"
#include "combolab/train/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace combolab::cli {

// Creates and returns <root>/<verb>-NNN with NNN one past the highest existing.
std::filesystem::path next_run_dir(const std::filesystem::path& root, const std::string& verb);

struct PreparedData {
    data::Corpus corpus;
    data::Tokenizer tokenizer;
};

// Loads the manifest, splits dev documents and builds the tokenizer over
// every document of every domain.
PreparedData prepare_data(const RunConfig& config);

data::Objective objective_for(const arch::ArchSpec& spec);

// Trains one model into `dir`: config.txt, tokenizer.json, loss.csv,
// train_log.csv, checkpoints/ and summary.txt.
train::TrainResult pretrain_into(const RunConfig& config, const PreparedData& data, const std::filesystem::path& dir,
                                 std::ostream& log, bool keep_snapshots = false);

struct PretrainOutcome {
    std::filesystem::path run_dir;
    train::TrainResult result;
};

PretrainOutcome cmd_pretrain(const RunConfig& config, const std::filesystem::path& out_root, std::ostream& log);

// Trace on the dev split of `data` and the contribution report of `metric`.
struct AnalysisOutcome {
    analysis::ActivationTrace trace;
    std::vector<double> curve;
    analysis::ContributionReport report;
};

AnalysisOutcome analyze_model(arch::Model& model, const RunConfig& config, const PreparedData& data,
                              analysis::Metric metric);

// Mean loss over the OOD domains selected by eval.ood; empty when disabled.
std::map<std::string, double> selected_ood_losses(arch::Model& model, const RunConfig& config,
                                                  const PreparedData& data);

// Merges `curve` with a per-step evaluation of the stretch around its point
// nearest `target`, resumed from the run's full checkpoints. Throws if the
// resumed run disagrees with a recorded value.
train::LossCurve refine_curve(const RunConfig& config, const PreparedData& data, const std::filesystem::path& run_dir,
                              const train::LossCurve& curve, double target);

// Parameter-only checkpoint of the run at exactly `step`.
train::Checkpoint reproduce_step(const RunConfig& config, const PreparedData& data, const std::filesystem::path& run_dir,
                                 std::uint64_t step);

struct SweepRow {
    arch::Ratio ratio;
    train::Alignment alignment;
    double outer_ffn_contribution = 0.0;
    std::optional<double> ood_loss;
};

struct SweepOutcome {
    std::filesystem::path dir;
    double target = 0.0;
    std::vector<SweepRow> rows;
    std::optional<double> spearman;  // over aligned rows only
};

SweepOutcome cmd_sweep(const RunConfig& config, const std::filesystem::path& out_root, std::ostream& log);

std::filesystem::path cmd_analyze(const std::filesystem::path& checkpoint, analysis::Metric metric,
                                  const RunConfig& config, const std::filesystem::path& out_root, std::ostream& log,
                                  bool save_trace = false);

std::filesystem::path cmd_eval(const std::filesystem::path& checkpoint, const std::string& which,
                               const RunConfig& config, const std::filesystem::path& out_root, std::ostream& log);

// Throws train::AlignmentError after writing alignment.csv when a run misses.
std::filesystem::path cmd_align(const std::vector<std::filesystem::path>& run_dirs, const std::string& target,
                                double tolerance, const std::filesystem::path& out_root, std::ostream& log);

struct ReportRow {
    std::string run;
    std::map<std::string, std::string> values;
};

// Merges summary.txt files (pretrain, analyze, eval) by source run.
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& dirs);
std::filesystem::path cmd_report(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out_root,
                                 std::ostream& log);

// Average-rank Spearman correlation; empty with fewer than two points or no
// variance in either variable.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

std::string architecture_label(const arch::ArchSpec& spec);

}  // namespace combolab::cli
