#pragma once

#include "combolab/arch/model.hpp"
#include "combolab/data/corpus.hpp"
#include "combolab/data/tokenizer.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace combolab::eval {

inline constexpr std::uint64_t kOodEvalSeed = 4242;

struct OodOptions {
    std::size_t seq = 64;
    std::size_t batch = 32;
    std::uint64_t eval_seed = kOodEvalSeed;
    std::size_t max_rows = 0;  // 0 keeps every row
};

// Mean per-token NLL over the documents: causal LM for GPT, masked LM for
// BERT with masks drawn from eval_seed. Same path as the training dev loss.
double ood_loss(arch::Model& model, const std::vector<std::string>& docs, const data::Tokenizer& tokenizer,
                const OodOptions& options);

// One entry per OOD domain of the corpus.
std::map<std::string, double> ood_losses(arch::Model& model, const data::Corpus& corpus,
                                         const data::Tokenizer& tokenizer, const OodOptions& options);

}  // namespace combolab::eval
