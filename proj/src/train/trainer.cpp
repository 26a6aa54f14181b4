#include "combolab/train/trainer.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace combolab::train {

namespace {

double histogram_entropy(const std::vector<std::size_t>& counts) {
    double total = 0.0;
    for (std::size_t c : counts) total += static_cast<double>(c);
    double h = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / total;
        h -= p * std::log(p);
    }
    return h;
}

std::size_t count_targets(const std::vector<int>& targets) {
    std::size_t n = 0;
    for (int t : targets) n += t != core::kIgnoreIndex;
    return n;
}

}  // namespace

arch::TokenGrid to_grid(const data::MaskedBatch& batch) {
    return arch::TokenGrid{batch.batch, batch.seq, batch.input_ids};
}

double evaluate_loss(arch::Model& model, const std::vector<data::MaskedBatch>& batches) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& b : batches) {
        const std::size_t n = count_targets(b.targets);
        if (n == 0) continue;
        core::Tape tape(false);
        arch::ForwardOutput out = arch::forward(model, tape, to_grid(b));
        total += core::cross_entropy(out.logits, b.targets).value().item() * static_cast<double>(n);
        count += n;
    }
    if (count == 0) throw std::invalid_argument("evaluate_loss: no target tokens in the evaluation set");
    return total / static_cast<double>(count);
}

TrainState TrainState::fresh(arch::Model model) {
    AdamState opt = AdamState::zeros_like(model.params());
    return TrainState{std::move(model), std::move(opt), 0};
}

TrainState TrainState::from_checkpoint(const Checkpoint& ck) {
    if (!ck.optimizer) throw CheckpointError("checkpoint has no optimizer state; cannot resume training");
    return TrainState{arch::Model(ck.spec, ck.params), *ck.optimizer, ck.step};
}

Checkpoint TrainState::checkpoint(double dev_loss, bool with_optimizer) const {
    Checkpoint ck;
    ck.step = step;
    ck.dev_loss = dev_loss;
    ck.spec = model.spec();
    ck.params = model.params();
    if (with_optimizer) ck.optimizer = optimizer;
    return ck;
}

std::string checkpoint_filename(std::uint64_t step) { return fmt::format("step-{:07d}.ckpt", step); }

TrainResult train(TrainState& state, const data::Dataset& train_data, const data::Dataset& dev_data,
                  const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (train_data.vocab() != state.model.spec().vocab || dev_data.vocab() != state.model.spec().vocab) {
        throw std::invalid_argument(fmt::format("vocabulary mismatch: model {} vs data {}", state.model.spec().vocab,
                                                train_data.vocab()));
    }
    if (train_data.seq() != config.seq) {
        throw std::invalid_argument(fmt::format("train.seq {} differs from dataset rows of {}", config.seq, train_data.seq()));
    }
    const auto dev_batches = dev_data.eval_batches(config.eval_batch, config.eval_seed, config.eval_rows);
    if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

    TrainResult result;
    const std::uint64_t last = config.last_step();
    auto& params = state.model.params();
    while (state.step < last) {
        StepLog log;
        log.step = state.step + 1;
        log.lr = lr_at(log.step, config);
        try {
            const data::MaskedBatch batch = train_data.train_batch(state.step, config.batch, config.seed);
            params.zero_grad();
            core::Tape tape;
            arch::ForwardOutput out = arch::forward(state.model, tape, to_grid(batch));
            core::Var ce = core::cross_entropy(out.logits, batch.targets);
            core::Var loss = state.model.spec().has_moe() ? core::add(ce, out.aux_loss) : ce;
            tape.backward(loss);
            log.train_loss = ce.value().item();
            log.aux_loss = out.aux_loss.value().item();
            for (const auto& h : out.routing) log.routing_entropy += histogram_entropy(h) / static_cast<double>(out.routing.size());
            adam_step(params, state.optimizer, log.lr, config);
        } catch (const core::NumericError& e) {
            result.diverged = true;
            result.divergence_message = fmt::format("step {}: {}", log.step, e.what());
            break;
        }
        state.step = log.step;
        result.log.push_back(log);

        std::optional<double> dev;
        if (state.step % config.eval_every == 0 || state.step == last) {
            double loss = std::numeric_limits<double>::quiet_NaN();
            try {
                loss = evaluate_loss(state.model, dev_batches);
            } catch (const core::NumericError&) {
            }
            dev = loss;
            if (!std::isfinite(loss)) {
                result.diverged = true;
                result.divergence_message = fmt::format("step {}: dev loss is not finite", state.step);
            } else {
                result.curve.push_back({state.step, loss});
                if (options.keep_snapshots) {
                    result.snapshots.push_back(state.checkpoint(loss, false));
                    result.snapshots.back().meta = options.checkpoint_meta;
                }
                const bool due = config.checkpoint_every == 0 ? true : state.step % config.checkpoint_every == 0;
                Checkpoint full = state.checkpoint(loss, true);
                full.meta = options.checkpoint_meta;
                if (!options.checkpoint_dir.empty() && (due || state.step == last)) {
                    write_checkpoint(options.checkpoint_dir / checkpoint_filename(state.step), full);
                }
                result.last_good = std::move(full);
            }
        }
        if (options.on_step) options.on_step(log, dev);
        if (result.diverged) break;
    }
    return result;
}

}  // namespace combolab::train
