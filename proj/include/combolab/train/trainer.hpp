#pragma once

#include "combolab/arch/model.hpp"
#include "combolab/data/batching.hpp"
#include "combolab/train/checkpoint.hpp"
#include "combolab/train/config.hpp"
#include "combolab/train/optimizer.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace combolab::train {

arch::TokenGrid to_grid(const data::MaskedBatch& batch);

// Mean next-token (LM) or masked-token (MLM) loss over every target in the
// batches, excluding auxiliary losses. Deterministic.
double evaluate_loss(arch::Model& model, const std::vector<data::MaskedBatch>& batches);

struct TrainState {
    arch::Model model;
    AdamState optimizer;
    std::uint64_t step = 0;

    static TrainState fresh(arch::Model model);
    static TrainState from_checkpoint(const Checkpoint& ckpt);
    Checkpoint checkpoint(double dev_loss, bool with_optimizer) const;
};

struct StepLog {
    std::uint64_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double aux_loss = 0.0;
    // Mean entropy (nats) of expert-assignment histograms; 0 without MoE.
    double routing_entropy = 0.0;
};

struct TrainOptions {
    // Full checkpoints (with optimizer state) go here when set.
    std::filesystem::path checkpoint_dir;
    // Keep parameter-only snapshots of every evaluated step in memory.
    bool keep_snapshots = true;
    std::map<std::string, std::string> checkpoint_meta;
    std::function<void(const StepLog&, std::optional<double> dev_loss)> on_step;
};

struct TrainResult {
    LossCurve curve;
    std::vector<Checkpoint> snapshots;  // parameter-only, one per evaluation
    std::vector<StepLog> log;
    bool diverged = false;
    std::string divergence_message;
    // Last checkpoint whose dev loss was finite.
    std::optional<Checkpoint> last_good;
};

// Runs from state.step to config.last_step(); evaluates every eval_every
// steps and at the final step. Batches depend only on (seed, step), so a run
// resumed from a checkpoint continues bitwise-identically.
TrainResult train(TrainState& state, const data::Dataset& train_data, const data::Dataset& dev_data,
                  const TrainConfig& config, const TrainOptions& options = {});

std::string checkpoint_filename(std::uint64_t step);

}  // namespace combolab::train
