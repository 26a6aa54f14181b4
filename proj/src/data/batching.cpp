#include "combolab/data/batching.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace combolab::data {

std::size_t MaskedBatch::target_count() const {
    return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](int t) { return t != kIgnore; }));
}

std::size_t masked_count(std::size_t eligible) {
    const auto n = static_cast<std::size_t>(std::floor(kMaskFraction * static_cast<double>(eligible) + 0.5));
    return std::max<std::size_t>(1, n);
}

void mask_row(std::span<int> ids, std::span<int> targets, std::span<std::uint8_t> selected, std::size_t vocab,
              std::uint64_t seed, std::uint64_t epoch, std::uint64_t row_key) {
    std::vector<std::size_t> chosen, rest;
    core::SeededRng rng(seed, fmt::format("mask/{}/{}", epoch, row_key));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (Tokenizer::is_special(ids[i])) continue;
        (rng.bernoulli(kMaskFraction) ? chosen : rest).push_back(i);
    }
    const std::size_t eligible = chosen.size() + rest.size();
    if (eligible == 0) throw std::invalid_argument("mask_row: row has no maskable token");
    const std::size_t want = masked_count(eligible);
    auto move_one = [&](std::vector<std::size_t>& from, std::vector<std::size_t>& to) {
        const std::size_t k = rng.uniform_index(from.size());
        to.push_back(from[k]);
        from[k] = from.back();
        from.pop_back();
    };
    while (chosen.size() > want) move_one(chosen, rest);
    while (chosen.size() < want) move_one(rest, chosen);
    std::sort(chosen.begin(), chosen.end());

    std::fill(targets.begin(), targets.end(), kIgnore);
    std::fill(selected.begin(), selected.end(), 0);
    const std::size_t ordinary = vocab - kSpecialCount;
    for (std::size_t i : chosen) {
        targets[i] = ids[i];
        selected[i] = 1;
        const double u = rng.uniform();
        if (u < 0.8) {
            ids[i] = kMask;
        } else if (u < 0.9) {
            ids[i] = kSpecialCount + static_cast<int>(rng.uniform_index(ordinary));
        }
    }
}

Dataset::Dataset(Objective objective, const std::vector<std::string>& docs, const Tokenizer& tokenizer,
                 std::size_t seq)
    : objective_(objective), seq_(seq), vocab_(tokenizer.size()) {
    if (seq < 2) throw std::invalid_argument("Dataset: sequence length must be at least 2");
    if (vocab_ <= kSpecialCount) throw std::invalid_argument("Dataset: vocabulary has no ordinary tokens");
    std::vector<int> stream;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        std::vector<int> ids = tokenizer.encode(docs[d]);
        if (ids.empty()) continue;
        if (objective == Objective::MaskedLm) {
            if (!stream.empty()) stream.push_back(kSep);
        } else {
            stream.push_back(kBos);
        }
        stream.insert(stream.end(), ids.begin(), ids.end());
    }
    if (objective == Objective::MaskedLm) {
        const std::size_t body = seq - 1;
        for (std::size_t start = 0; start < stream.size(); start += body) {
            std::vector<int> row{kCls};
            const std::size_t end = std::min(stream.size(), start + body);
            row.insert(row.end(), stream.begin() + static_cast<std::ptrdiff_t>(start),
                       stream.begin() + static_cast<std::ptrdiff_t>(end));
            // A chunk holding nothing but [SEP] carries no maskable token.
            if (std::none_of(row.begin(), row.end(), [](int t) { return !Tokenizer::is_special(t); })) continue;
            row.resize(seq, kPad);
            rows_.push_back(std::move(row));
        }
        return;
    }
    for (std::size_t start = 0; start < stream.size(); start += seq) {
        std::vector<int> row(seq, kPad), target(seq, kIgnore);
        for (std::size_t i = 0; i < seq && start + i < stream.size(); ++i) {
            row[i] = stream[start + i];
            const std::size_t next = start + i + 1;
            if (next < stream.size() && !Tokenizer::is_special(stream[next])) target[i] = stream[next];
        }
        rows_.push_back(std::move(row));
        lm_targets_.push_back(std::move(target));
    }
}

std::size_t Dataset::token_count() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](int t) { return t != kPad; }));
    return n;
}

MaskedBatch Dataset::batch(std::span<const std::size_t> row_ids, std::uint64_t seed, std::uint64_t epoch) const {
    if (row_ids.empty()) throw std::invalid_argument("Dataset::batch: empty batch");
    MaskedBatch b;
    b.batch = row_ids.size();
    b.seq = seq_;
    b.input_ids.reserve(b.batch * seq_);
    for (std::size_t r : row_ids) {
        const auto& row = rows_.at(r);
        b.input_ids.insert(b.input_ids.end(), row.begin(), row.end());
    }
    if (objective_ == Objective::CausalLm) {
        for (std::size_t r : row_ids) b.targets.insert(b.targets.end(), lm_targets_[r].begin(), lm_targets_[r].end());
        return b;
    }
    b.targets.resize(b.input_ids.size());
    b.mask_positions.resize(b.input_ids.size());
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        const std::size_t off = i * seq_;
        mask_row(std::span(b.input_ids).subspan(off, seq_), std::span(b.targets).subspan(off, seq_),
                 std::span(b.mask_positions).subspan(off, seq_), vocab_, seed, epoch, row_ids[i]);
    }
    return b;
}

MaskedBatch Dataset::train_batch(std::uint64_t step, std::size_t batch_size, std::uint64_t seed) const {
    const std::size_t n = rows_.size();
    if (n == 0 || batch_size == 0) throw std::invalid_argument("Dataset::train_batch: empty batch");
    const core::SeededRng order(seed, "order");
    std::vector<std::size_t> perm(n);
    std::uint64_t cached_epoch = ~std::uint64_t{0};
    MaskedBatch out;
    out.batch = batch_size;
    out.seq = seq_;
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::uint64_t g = step * batch_size + i;
        const std::uint64_t epoch = g / n;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            core::SeededRng r = order.substream(std::to_string(epoch));
            r.shuffle(std::span(perm));
            cached_epoch = epoch;
        }
        const std::size_t id = perm[g % n];
        // Masks are keyed by (row, epoch) so every epoch re-masks.
        MaskedBatch one = batch(std::span<const std::size_t>(&id, 1), seed, epoch);
        out.input_ids.insert(out.input_ids.end(), one.input_ids.begin(), one.input_ids.end());
        out.targets.insert(out.targets.end(), one.targets.begin(), one.targets.end());
        out.mask_positions.insert(out.mask_positions.end(), one.mask_positions.begin(), one.mask_positions.end());
    }
    return out;
}

std::vector<MaskedBatch> Dataset::eval_batches(std::size_t batch_size, std::uint64_t eval_seed,
                                               std::size_t max_rows) const {
    if (batch_size == 0) throw std::invalid_argument("Dataset::eval_batches: batch size must be positive");
    const std::size_t n = max_rows == 0 ? rows_.size() : std::min(max_rows, rows_.size());
    std::vector<MaskedBatch> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::vector<std::size_t> ids(std::min(batch_size, n - start));
        std::iota(ids.begin(), ids.end(), start);
        out.push_back(batch(ids, eval_seed, 0));
    }
    return out;
}

namespace {

MaskedBatch first_rows(const Dataset& ds, std::size_t batch, std::uint64_t seed) {
    if (batch == 0 || ds.rows() == 0) throw std::invalid_argument("empty batch");
    if (batch > ds.rows()) {
        throw std::invalid_argument(fmt::format("requested {} rows but the documents yield {}", batch, ds.rows()));
    }
    std::vector<std::size_t> ids(batch);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ds.batch(ids, seed, 0);
}

}  // namespace

MaskedBatch make_mlm_batch(const std::vector<std::string>& docs, const Tokenizer& tokenizer, std::size_t seq,
                           std::size_t batch, std::uint64_t epoch_seed) {
    return first_rows(Dataset(Objective::MaskedLm, docs, tokenizer, seq), batch, epoch_seed);
}

MaskedBatch make_lm_batch(const std::vector<std::string>& docs, const Tokenizer& tokenizer, std::size_t seq,
                          std::size_t batch) {
    return first_rows(Dataset(Objective::CausalLm, docs, tokenizer, seq), batch, 0);
}

}  // namespace combolab::data
