#pragma once

#include "combolab/core/param_store.hpp"
#include "combolab/core/tensor.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace combolab::core {

class Tape;

// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    // Gradient after Tape::backward; empty tensor if none reached this node.
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    bool needs_grad() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode tape. Each recorded operation stores its output and a
// vector-Jacobian rule; backward() replays the rules in reverse order.
// A tape built with grad_enabled=false records values only.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Tensor value);
    Var variable(Tensor value);
    // Leaf bound to a stored parameter; backward() accumulates into
    // store.grad(name). Repeated calls with the same name return the same Var.
    Var param(ParamStore& store, std::string_view name);

    // Seeds d(loss)/d(loss) = 1 and propagates. loss must hold one element.
    void backward(Var loss);

    // Used by operation implementations.
    Var record(std::string_view op, Tensor value, const std::vector<Var>& parents,
               Backward rule);
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    // Gradient buffer of a node, zero-initialised on first use.
    Tensor& grad_buffer(std::size_t id);
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        Backward rule;
        ParamStore* store = nullptr;
        std::size_t param_index = 0;
    };

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::unordered_map<std::string, std::size_t> param_nodes_;
};

// Dimension-checked operations. All inputs must live on the same tape.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
// x[n x d] + bias[d] broadcast over rows.
Var add_row(Var x, Var bias);
// Multiplies row i of x[n x d] by s[i], with s shaped [n x 1].
Var mul_col(Var x, Var s);
// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var gelu(Var x);

// Row-wise softmax over the last axis. Where mask is given, zero entries are
// excluded; a fully masked row produces an all-zero row.
Var softmax_rows(Var x, const std::optional<Tensor>& mask = std::nullopt);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var rms_norm(Var x, Var gain, double eps = 1e-5);

// Rows of table[V x d] selected by ids; out-of-range ids throw.
Var embedding_lookup(Var table, std::span<const int> ids);

inline constexpr int kIgnoreIndex = -1;
// Mean natural-log negative log-likelihood over targets != kIgnoreIndex.
Var cross_entropy(Var logits, std::span<const int> targets);
// Row-wise log-softmax (used for scoring, not training).
Tensor log_softmax_rows(const Tensor& logits);

// Rotates consecutive column pairs of each head block by angle
// pos * 10000^(-2i/head_dim). x is [rows x (heads*head_dim)].
Var rotary_apply(Var x, std::span<const std::size_t> positions, std::size_t head_dim);

Var gather_rows(Var x, std::span<const std::size_t> rows);
// out[n x d] with out[rows[i]] += src[i].
Var scatter_add_rows(Var src, std::span<const std::size_t> rows, std::size_t n);
// out[i] = x[i, cols[i]], shaped [n x 1].
Var pick_per_row(Var x, std::span<const std::size_t> cols);
// Scalar sum(x .* weights) with constant weights.
Var weighted_sum(Var x, const Tensor& weights);

enum class DiagonalMode {
    Context,  // diagonal uses the context keys/values like every other entry
    Self,     // diagonal uses separate self keys/values (direct pathway)
    Masked,   // diagonal excluded from attention
};

struct AttentionOptions {
    std::size_t heads = 1;
    std::size_t seq_len = 1;  // rows are grouped into sequences of this length
    bool causal = false;
    DiagonalMode diagonal = DiagonalMode::Context;
};

// Multi-head scaled dot-product attention over packed sequences.
// q, k_ctx, v_ctx are [n x d] with n a multiple of seq_len. For
// DiagonalMode::Self, k_self and v_self supply the (i, i) key and value.
// If weights_out is set it receives the [sequences*heads*seq_len x seq_len]
// attention probabilities.
Var attention(Var q, Var k_ctx, Var v_ctx, std::optional<Var> k_self,
              std::optional<Var> v_self, const AttentionOptions& options,
              Tensor* weights_out = nullptr);

}  // namespace combolab::core
