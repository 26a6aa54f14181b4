#pragma once

#include "combolab/data/tokenizer.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace combolab::data {

inline constexpr int kIgnore = -1;
inline constexpr double kMaskFraction = 0.15;

enum class Objective { MaskedLm, CausalLm };

// Row-major [batch x seq]. For MLM, targets hold the original token at
// selected positions and kIgnore elsewhere; mask_positions mirrors that.
// For LM, targets are next-token ids and mask_positions is empty.
struct MaskedBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> input_ids;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask_positions;

    std::size_t target_count() const;
};

// max(1, round-half-up(0.15 * eligible)).
std::size_t masked_count(std::size_t eligible);

// Masks one row in place. Selection: per-position Bernoulli(0.15) over
// non-special tokens, then random additions/removals to reach masked_count.
// Replacement: 80% [MASK], 10% random non-special id, 10% unchanged.
// The draw depends only on (seed, epoch, row_key).
void mask_row(std::span<int> ids, std::span<int> targets, std::span<std::uint8_t> selected,
              std::size_t vocab, std::uint64_t seed, std::uint64_t epoch, std::uint64_t row_key);

// Fixed-length rows cut from a document stream.
//  MLM: docs joined by [SEP]; each row is [CLS] followed by seq-1 stream tokens.
//  LM:  each doc prefixed by [BOS]; rows are consecutive seq-token windows and
//       targets are the following stream token (kIgnore at specials and the end).
// A trailing partial row is padded with [PAD] (never masked, never a target).
class Dataset {
public:
    Dataset(Objective objective, const std::vector<std::string>& docs, const Tokenizer& tokenizer,
            std::size_t seq);

    Objective objective() const { return objective_; }
    std::size_t rows() const { return rows_.size(); }
    std::size_t seq() const { return seq_; }
    std::size_t vocab() const { return vocab_; }
    const std::vector<int>& row(std::size_t i) const { return rows_.at(i); }
    // Non-pad tokens across all rows.
    std::size_t token_count() const;

    MaskedBatch batch(std::span<const std::size_t> row_ids, std::uint64_t seed, std::uint64_t epoch) const;

    // Training batch `step`: global sample g = step*batch + i walks a fresh
    // seeded permutation of the rows each epoch, so batches are a pure
    // function of (seed, step).
    MaskedBatch train_batch(std::uint64_t step, std::size_t batch_size, std::uint64_t seed) const;

    // Every row once (or the first max_rows when nonzero), in order, masked
    // with the evaluation seed.
    std::vector<MaskedBatch> eval_batches(std::size_t batch_size, std::uint64_t eval_seed,
                                          std::size_t max_rows = 0) const;

private:
    Objective objective_;
    std::size_t seq_;
    std::size_t vocab_;
    std::vector<std::vector<int>> rows_;
    std::vector<std::vector<int>> lm_targets_;
};

// Masked batch over the first `batch` rows of the documents.
MaskedBatch make_mlm_batch(const std::vector<std::string>& docs, const Tokenizer& tokenizer, std::size_t seq,
                           std::size_t batch, std::uint64_t epoch_seed);
// Causal batch over the first `batch` rows of the documents.
MaskedBatch make_lm_batch(const std::vector<std::string>& docs, const Tokenizer& tokenizer, std::size_t seq,
                          std::size_t batch);

}  // namespace combolab::data
