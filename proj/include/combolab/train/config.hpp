#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace combolab::train {

struct TrainConfig {
    double peak_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 200;
    std::size_t max_steps = 2000;
    // Training halts here without changing the schedule; 0 means max_steps.
    std::size_t stop_step = 0;
    std::size_t batch = 16;
    std::size_t seq = 64;
    std::size_t eval_every = 100;
    // Disk checkpoint cadence in steps; 0 writes one at every evaluation.
    std::size_t checkpoint_every = 0;
    std::size_t eval_batch = 32;
    // Dev rows used per evaluation (first rows of the dev set); 0 means all.
    std::size_t eval_rows = 0;
    std::uint64_t seed = 1;
    std::uint64_t eval_seed = 4242;

    std::size_t last_step() const { return stop_step == 0 ? max_steps : stop_step; }
    // Throws std::invalid_argument naming the offending field.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// "desk": scaled-down schedule; "paper": BERT/GPT schedule (1e-4, 10k warmup);
// "paper-moe": MoE schedule (5e-4, beta2 0.95, 2.5k warmup).
TrainConfig train_preset(std::string_view name);

std::vector<std::pair<std::string, std::string>> to_fields(const TrainConfig& c);
void apply_fields(TrainConfig& c, const std::map<std::string, std::string>& fields);

// Linear warmup from 0 to peak_lr, then linear decay to 0 at max_steps.
double lr_at(std::size_t step, const TrainConfig& config);

}  // namespace combolab::train
