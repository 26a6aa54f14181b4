#include "combolab/eval/ood.hpp"

#include "combolab/data/batching.hpp"
#include "combolab/train/trainer.hpp"

#include <fmt/format.h>

namespace combolab::eval {

double ood_loss(arch::Model& model, const std::vector<std::string>& docs, const data::Tokenizer& tokenizer,
                const OodOptions& options) {
    if (docs.empty()) throw std::invalid_argument("ood_loss: the domain has no documents");
    const auto objective = model.spec().causal() ? data::Objective::CausalLm : data::Objective::MaskedLm;
    const data::Dataset ds(objective, docs, tokenizer, options.seq);
    if (ds.rows() == 0) throw std::invalid_argument("ood_loss: the domain has no tokens");
    return train::evaluate_loss(model, ds.eval_batches(options.batch, options.eval_seed, options.max_rows));
}

std::map<std::string, double> ood_losses(arch::Model& model, const data::Corpus& corpus,
                                         const data::Tokenizer& tokenizer, const OodOptions& options) {
    std::map<std::string, double> out;
    for (const auto& [name, docs] : corpus.ood) {
        try {
            out[name] = ood_loss(model, docs, tokenizer, options);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(fmt::format("OOD domain '{}': {}", name, e.what()));
        }
    }
    return out;
}

}  // namespace combolab::eval
