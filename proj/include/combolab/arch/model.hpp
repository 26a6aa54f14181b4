#pragma once

#include "combolab/arch/arch_spec.hpp"
#include "combolab/core/autodiff.hpp"
#include "combolab/core/param_store.hpp"
#include "combolab/core/rng.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace combolab::arch {

// Token ids for `batch` sequences of equal length `seq`, row-major.
struct TokenGrid {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> ids;
};

// Representations recorded at selected rows of the packed [batch*seq] layout.
// Sites run "embed", "L1.mha", "L1.ffn", ..., "LL.ffn".
struct SiteCapture {
    std::vector<std::string> sites;
    std::vector<core::Tensor> reps;  // one [rows x hidden] matrix per site
};

std::vector<std::string> site_names(std::size_t layers);

struct ForwardOptions {
    // Packed row indices to record; nullptr disables capture.
    const std::vector<std::size_t>* capture_rows = nullptr;
    // Keep per-layer attention probabilities (tests and diagnostics).
    bool keep_attention_weights = false;
};

struct ForwardOutput {
    core::Var logits;    // [batch*seq x vocab]
    core::Var aux_loss;  // scalar; zero without MoE layers
    std::optional<SiteCapture> trace;
    // Expert assignment counts, one histogram per MoE layer.
    std::vector<std::vector<std::size_t>> routing;
    std::vector<core::Tensor> attention_weights;
};

class Model {
public:
    Model(ArchSpec spec, core::ParamStore params)
        : spec_(std::move(spec)), params_(std::move(params)) {}

    const ArchSpec& spec() const { return spec_; }
    core::ParamStore& params() { return params_; }
    const core::ParamStore& params() const { return params_; }

private:
    ArchSpec spec_;
    core::ParamStore params_;
};

// Deterministic construction: every tensor draws from its own substream
// "init/<name>" of `rng`. Matrices ~ N(0, 0.02) truncated at 2 sigma,
// biases zero, norm gains one.
Model build_model(const ArchSpec& spec, const core::SeededRng& rng);

// Re-draws every parameter whose name starts with `prefix` using the
// given standard deviation (no truncation). Returns how many tensors changed.
std::size_t reinitialize(Model& model, std::string_view prefix, const core::SeededRng& rng,
                         double stddev);

ForwardOutput forward(Model& model, core::Tape& tape, const TokenGrid& tokens,
                      const ForwardOptions& options = {});

// Per-block building blocks, exposed for direct testing.
struct BlockContext {
    std::size_t heads = 1;
    std::size_t seq_len = 1;
    bool causal = true;
    bool rotary = false;
    bool use_bias = true;
    Norm norm = Norm::PostLayerNorm;
    std::vector<core::Tensor>* attention_weights = nullptr;
};

struct MoeResult {
    core::Var output;
    core::Var aux_loss;
    std::vector<std::size_t> histogram;
};

// Top-1 Switch-style mixture: each token goes to its argmax-gate expert
// (ties to the lowest index) and the expert output is scaled by that gate
// probability. aux = coeff * E * sum_e f_e * p_e.
MoeResult moe_layer(core::Tape& tape, core::ParamStore& params, const std::string& prefix,
                    core::Var x, std::size_t experts, double aux_loss_coeff, bool use_bias);

// Multi-head attention whose context keys/values come from Inner-FFN(x).
// With direct_pathway, the current position's key and value are computed
// from the untransformed x. Without an Inner-FFN this is plain attention.
core::Var attention_with_inner_ffn(core::Tape& tape, core::ParamStore& params,
                                   const std::string& prefix, core::Var x,
                                   const BlockContext& ctx, bool direct_pathway);

// Attention whose context passes through an Inner-MoE; the diagonal is
// masked so a position never attends to itself.
struct MoeCeaResult {
    core::Var output;
    core::Var aux_loss;
    std::vector<std::size_t> histogram;
};
MoeCeaResult attention_moe_cea(core::Tape& tape, core::ParamStore& params, const std::string& prefix,
                               core::Var x, const BlockContext& ctx, std::size_t experts,
                               double aux_loss_coeff);

}  // namespace combolab::arch
