#pragma once

#include "combolab/arch/model.hpp"
#include "combolab/core/grad_check.hpp"

#include <cstdint>
#include <vector>

namespace combolab::support {

inline arch::ArchSpec tiny_spec(arch::Variant variant, arch::Family family = arch::Family::Gpt) {
    arch::ArchSpec s;
    s.family = family;
    s.variant = variant;
    s.hidden = 16;
    s.layers = 1;
    s.heads = 2;
    s.ffn_mult = variant == arch::Variant::FfnWider || variant == arch::Variant::Caa ? 32 : 4;
    s.vocab = 24;
    s.max_seq = 16;
    if (variant == arch::Variant::Caa) s.outer_ratio = arch::Ratio::of(1, 2);
    if (s.has_moe()) {
        s.experts = 4;
        s.expert_inner = 16;
        s.norm = arch::Norm::PreRmsNorm;
        s.pos_enc = arch::PositionEncoding::Rotary;
    }
    return s;
}

inline std::vector<int> random_ids(std::size_t n, std::size_t vocab, std::uint64_t seed) {
    core::SeededRng rng(seed, "ids");
    std::vector<int> ids(n);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_index(vocab));
    return ids;
}

// Next-token loss plus the auxiliary loss over one random sequence.
inline core::GradCheckResult model_grad_check(arch::Model& model, std::size_t seq, std::uint64_t seed) {
    arch::TokenGrid grid{1, seq, random_ids(seq, model.spec().vocab, seed)};
    std::vector<int> targets(grid.ids.begin() + 1, grid.ids.end());
    targets.push_back(core::kIgnoreIndex);
    auto loss = [&](core::Tape& tape) {
        arch::ForwardOutput out = arch::forward(model, tape, grid);
        return core::add(core::cross_entropy(out.logits, targets), out.aux_loss);
    };
    return core::grad_check(loss, model.params(), 1e-4, 8, seed);
}

inline core::Tensor logits_of(arch::Model& model, const arch::TokenGrid& grid) {
    core::Tape tape(false);
    return arch::forward(model, tape, grid).logits.value();
}

}  // namespace combolab::support
