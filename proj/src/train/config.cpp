#include "combolab/train/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <stdexcept>

namespace combolab::train {

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw std::invalid_argument(fmt::format("train.{}: '{}' is not a non-negative integer", key, value));
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(fmt::format("train.{}: '{}' is not a number", key, value));
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](std::string_view field, const std::string& why) {
        throw std::invalid_argument(fmt::format("train.{}: {}", field, why));
    };
    if (!(peak_lr > 0)) fail("peak_lr", "must be positive");
    if (!(beta1 > 0 && beta1 < 1)) fail("beta1", "must lie in (0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) fail("beta2", "must lie in (0, 1)");
    if (!(adam_eps > 0)) fail("adam_eps", "must be positive");
    if (weight_decay < 0) fail("weight_decay", "must be non-negative");
    if (max_steps == 0) fail("max_steps", "must be positive");
    if (warmup_steps > max_steps) fail("warmup_steps", fmt::format("{} exceeds max_steps {}", warmup_steps, max_steps));
    if (stop_step > max_steps) fail("stop_step", fmt::format("{} exceeds max_steps {}", stop_step, max_steps));
    if (batch == 0) fail("batch", "must be positive");
    if (seq < 2) fail("seq", "must be at least 2");
    if (eval_every == 0) fail("eval_every", "must be positive");
    if (eval_batch == 0) fail("eval_batch", "must be positive");
}

TrainConfig train_preset(std::string_view name) {
    TrainConfig c;
    if (name == "desk") return c;
    if (name == "paper") {
        c.peak_lr = 1e-4;
        c.warmup_steps = 10000;
        c.max_steps = 100000;
        c.batch = 256;
        c.seq = 128;
        c.eval_every = 1000;
        return c;
    }
    if (name == "paper-moe") {
        c.peak_lr = 5e-4;
        c.beta2 = 0.95;
        c.warmup_steps = 2500;
        c.max_steps = 50000;
        c.batch = 256;
        c.seq = 1024;
        c.eval_every = 1000;
        return c;
    }
    throw std::invalid_argument(fmt::format("unknown train preset '{}' (desk, paper, paper-moe)", name));
}

std::vector<std::pair<std::string, std::string>> to_fields(const TrainConfig& c) {
    return {
        {"peak_lr", fmt::format("{}", c.peak_lr)},
        {"beta1", fmt::format("{}", c.beta1)},
        {"beta2", fmt::format("{}", c.beta2)},
        {"adam_eps", fmt::format("{}", c.adam_eps)},
        {"weight_decay", fmt::format("{}", c.weight_decay)},
        {"warmup_steps", std::to_string(c.warmup_steps)},
        {"max_steps", std::to_string(c.max_steps)},
        {"stop_step", std::to_string(c.stop_step)},
        {"batch", std::to_string(c.batch)},
        {"seq", std::to_string(c.seq)},
        {"eval_every", std::to_string(c.eval_every)},
        {"checkpoint_every", std::to_string(c.checkpoint_every)},
        {"eval_batch", std::to_string(c.eval_batch)},
        {"eval_rows", std::to_string(c.eval_rows)},
        {"seed", std::to_string(c.seed)},
        {"eval_seed", std::to_string(c.eval_seed)},
    };
}

void apply_fields(TrainConfig& c, const std::map<std::string, std::string>& fields) {
    for (const auto& [key, value] : fields) {
        if (key == "peak_lr") c.peak_lr = parse_double(key, value);
        else if (key == "beta1") c.beta1 = parse_double(key, value);
        else if (key == "beta2") c.beta2 = parse_double(key, value);
        else if (key == "adam_eps") c.adam_eps = parse_double(key, value);
        else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
        else if (key == "warmup_steps") c.warmup_steps = parse_size(key, value);
        else if (key == "max_steps") c.max_steps = parse_size(key, value);
        else if (key == "stop_step") c.stop_step = parse_size(key, value);
        else if (key == "batch") c.batch = parse_size(key, value);
        else if (key == "seq") c.seq = parse_size(key, value);
        else if (key == "eval_every") c.eval_every = parse_size(key, value);
        else if (key == "checkpoint_every") c.checkpoint_every = parse_size(key, value);
        else if (key == "eval_batch") c.eval_batch = parse_size(key, value);
        else if (key == "eval_rows") c.eval_rows = parse_size(key, value);
        else if (key == "seed") c.seed = parse_size(key, value);
        else if (key == "eval_seed") c.eval_seed = parse_size(key, value);
        else throw std::invalid_argument(fmt::format("train.{}: unknown key", key));
    }
}

double lr_at(std::size_t step, const TrainConfig& c) {
    if (step >= c.max_steps) return 0.0;
    if (step < c.warmup_steps) {
        return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
    }
    const double remaining = static_cast<double>(c.max_steps - step);
    return c.peak_lr * remaining / static_cast<double>(c.max_steps - c.warmup_steps);
}

}  // namespace combolab::train
