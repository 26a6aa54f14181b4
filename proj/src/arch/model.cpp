#include "combolab/arch/model.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace combolab::arch {

using core::Tape;
using core::Tensor;
using core::Var;

namespace {

enum class Init { Matrix, Zero, One };

void add_param(core::ParamStore& store, const core::SeededRng& rng, const std::string& name,
               core::Shape shape, Init init) {
    Tensor t(std::move(shape));
    switch (init) {
        case Init::Zero:
            break;
        case Init::One:
            t.fill(1.0);
            break;
        case Init::Matrix: {
            core::SeededRng r = rng.substream("init/" + name);
            for (auto& v : t.values()) v = r.truncated_normal(0.0, 0.02, 2.0);
            break;
        }
    }
    store.add(name, std::move(t));
}

void add_norm(core::ParamStore& store, const core::SeededRng& rng, const std::string& prefix,
              const ArchSpec& spec) {
    add_param(store, rng, prefix + ".gain", {spec.hidden}, Init::One);
    if (spec.norm == Norm::PostLayerNorm) add_param(store, rng, prefix + ".bias", {spec.hidden}, Init::Zero);
}

void add_linear(core::ParamStore& store, const core::SeededRng& rng, const std::string& weight,
                const std::string& bias, std::size_t in, std::size_t out, bool with_bias) {
    add_param(store, rng, weight, {in, out}, Init::Matrix);
    if (with_bias) add_param(store, rng, bias, {out}, Init::Zero);
}

void add_ffn(core::ParamStore& store, const core::SeededRng& rng, const std::string& prefix,
             std::size_t d, std::size_t width, bool bias, bool output_bias) {
    add_linear(store, rng, prefix + ".w1", prefix + ".b1", d, width, bias);
    add_linear(store, rng, prefix + ".w2", prefix + ".b2", width, d, bias && output_bias);
}

void add_experts(core::ParamStore& store, const core::SeededRng& rng, const std::string& prefix,
                 const ArchSpec& spec) {
    add_param(store, rng, prefix + ".gate", {spec.hidden, spec.experts}, Init::Matrix);
    for (std::size_t e = 0; e < spec.experts; ++e) {
        add_ffn(store, rng, fmt::format("{}.expert{}", prefix, e), spec.hidden, spec.expert_inner,
                spec.use_bias(), true);
    }
}

Var linear(Tape& t, core::ParamStore& p, const std::string& weight, const std::string& bias, Var x,
           bool with_bias) {
    Var y = core::matmul(x, t.param(p, weight));
    return with_bias ? core::add_row(y, t.param(p, bias)) : y;
}

Var ffn(Tape& t, core::ParamStore& p, const std::string& prefix, Var x, bool bias, bool output_bias) {
    Var h = core::gelu(linear(t, p, prefix + ".w1", prefix + ".b1", x, bias));
    return linear(t, p, prefix + ".w2", prefix + ".b2", h, bias && output_bias);
}

Var apply_norm(Tape& t, core::ParamStore& p, const std::string& prefix, Var x, Norm norm) {
    if (norm == Norm::PostLayerNorm) {
        return core::layer_norm(x, t.param(p, prefix + ".gain"), t.param(p, prefix + ".bias"));
    }
    return core::rms_norm(x, t.param(p, prefix + ".gain"));
}

std::vector<std::size_t> row_positions(std::size_t rows, std::size_t seq) {
    std::vector<std::size_t> pos(rows);
    for (std::size_t r = 0; r < rows; ++r) pos[r] = r % seq;
    return pos;
}

Var maybe_rotate(Var x, const BlockContext& ctx, const std::vector<std::size_t>& positions) {
    if (!ctx.rotary) return x;
    return core::rotary_apply(x, positions, x.value().cols() / ctx.heads);
}

core::AttentionOptions attention_options(const BlockContext& ctx, core::DiagonalMode mode) {
    return core::AttentionOptions{ctx.heads, ctx.seq_len, ctx.causal, mode};
}

Var attend(Tape& t, core::ParamStore& p, const std::string& prefix, Var q, Var k_ctx, Var v_ctx,
           std::optional<Var> k_self, std::optional<Var> v_self, const BlockContext& ctx,
           core::DiagonalMode mode) {
    const auto positions = row_positions(q.value().rows(), ctx.seq_len);
    q = maybe_rotate(q, ctx, positions);
    k_ctx = maybe_rotate(k_ctx, ctx, positions);
    if (k_self) k_self = maybe_rotate(*k_self, ctx, positions);
    Tensor weights;
    Var mixed = core::attention(q, k_ctx, v_ctx, k_self, v_self, attention_options(ctx, mode),
                                ctx.attention_weights ? &weights : nullptr);
    if (ctx.attention_weights) ctx.attention_weights->push_back(std::move(weights));
    return linear(t, p, prefix + ".wo", prefix + ".bo", mixed, ctx.use_bias);
}

}  // namespace

std::vector<std::string> site_names(std::size_t layers) {
    std::vector<std::string> names{"embed"};
    for (std::size_t l = 1; l <= layers; ++l) {
        names.push_back(fmt::format("L{}.mha", l));
        names.push_back(fmt::format("L{}.ffn", l));
    }
    return names;
}

Model build_model(const ArchSpec& spec, const core::SeededRng& rng) {
    spec.validate();
    const std::size_t d = spec.hidden;
    const bool bias = spec.use_bias();
    core::ParamStore store;
    add_param(store, rng, "embed.tokens", {spec.vocab, d}, Init::Matrix);
    if (spec.pos_enc == PositionEncoding::Learned) {
        add_param(store, rng, "embed.positions", {spec.max_seq, d}, Init::Matrix);
    }
    if (spec.family == Family::Bert && spec.norm == Norm::PostLayerNorm) add_norm(store, rng, "embed.norm", spec);

    for (std::size_t l = 1; l <= spec.layers; ++l) {
        const std::string block = fmt::format("block{}", l);
        const std::string mha = block + ".mha";
        for (const char* w : {"q", "k", "v", "o"}) {
            add_linear(store, rng, fmt::format("{}.w{}", mha, w), fmt::format("{}.b{}", mha, w), d, d, bias);
        }
        if (const std::size_t wi = spec.inner_width(); wi > 0) {
            add_ffn(store, rng, mha + ".inner_ffn", d, wi, bias, false);
        }
        if (spec.variant == Variant::MoeCea) {
            add_norm(store, rng, mha + ".inner_moe.norm", spec);
            add_experts(store, rng, mha + ".inner_moe", spec);
        }
        add_norm(store, rng, block + ".mha_norm", spec);
        if (spec.variant == Variant::Moe) {
            add_norm(store, rng, block + ".moe_norm", spec);
            add_experts(store, rng, block + ".moe", spec);
        }
        if (const std::size_t wo = spec.outer_width(); wo > 0) {
            add_ffn(store, rng, block + ".ffn", d, wo, bias, true);
        }
        add_norm(store, rng, block + ".ffn_norm", spec);
    }
    if (spec.norm == Norm::PreRmsNorm) add_norm(store, rng, "final_norm", spec);
    if (!spec.tie_lm_head) add_param(store, rng, "lm_head.weight", {d, spec.vocab}, Init::Matrix);
    if (bias) add_param(store, rng, "lm_head.bias", {spec.vocab}, Init::Zero);
    return Model(spec, std::move(store));
}

std::size_t reinitialize(Model& model, std::string_view prefix, const core::SeededRng& rng,
                         double stddev) {
    std::size_t changed = 0;
    auto& store = model.params();
    for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& name = store.names()[i];
        if (!name.starts_with(prefix)) continue;
        core::SeededRng r = rng.substream("reinit/" + name);
        for (auto& v : store.value_at(i).values()) v = stddev * r.normal();
        ++changed;
    }
    return changed;
}

MoeResult moe_layer(Tape& t, core::ParamStore& p, const std::string& prefix, Var x,
                    std::size_t experts, double aux_loss_coeff, bool use_bias) {
    const std::size_t n = x.value().rows();
    Var probs = core::softmax_rows(core::matmul(x, t.param(p, prefix + ".gate")));
    std::vector<std::size_t> choice(n);
    std::vector<std::vector<std::size_t>> assigned(experts);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t e = 1; e < experts; ++e) {
            if (probs.value()(r, e) > probs.value()(r, best)) best = e;
        }
        choice[r] = best;
        assigned[best].push_back(r);
    }

    std::optional<Var> combined;
    std::vector<std::size_t> histogram(experts);
    for (std::size_t e = 0; e < experts; ++e) {
        histogram[e] = assigned[e].size();
        if (assigned[e].empty()) continue;
        Var out = ffn(t, p, fmt::format("{}.expert{}", prefix, e), core::gather_rows(x, assigned[e]),
                      use_bias, true);
        Var scattered = core::scatter_add_rows(out, assigned[e], n);
        combined = combined ? core::add(*combined, scattered) : scattered;
    }
    Var output = core::mul_col(*combined, core::pick_per_row(probs, choice));

    // aux = coeff * E * sum_e (count_e / n) * mean_t probs[t, e]
    Tensor weights(probs.value().shape());
    const double nn = static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t e = 0; e < experts; ++e) {
            weights(r, e) = aux_loss_coeff * static_cast<double>(experts) *
                            (static_cast<double>(histogram[e]) / nn) / nn;
        }
    }
    return MoeResult{output, core::weighted_sum(probs, weights), std::move(histogram)};
}

Var attention_with_inner_ffn(Tape& t, core::ParamStore& p, const std::string& prefix, Var x,
                             const BlockContext& ctx, bool direct_pathway) {
    const bool bias = ctx.use_bias;
    Var q = linear(t, p, prefix + ".wq", prefix + ".bq", x, bias);
    const bool has_inner = p.contains(prefix + ".inner_ffn.w1");
    if (!has_inner) {
        Var k = linear(t, p, prefix + ".wk", prefix + ".bk", x, bias);
        Var v = linear(t, p, prefix + ".wv", prefix + ".bv", x, bias);
        return attend(t, p, prefix, q, k, v, std::nullopt, std::nullopt, ctx,
                      core::DiagonalMode::Context);
    }
    Var y = ffn(t, p, prefix + ".inner_ffn", x, bias, false);
    Var k_ctx = linear(t, p, prefix + ".wk", prefix + ".bk", y, bias);
    Var v_ctx = linear(t, p, prefix + ".wv", prefix + ".bv", y, bias);
    if (!direct_pathway) {
        return attend(t, p, prefix, q, k_ctx, v_ctx, std::nullopt, std::nullopt, ctx,
                      core::DiagonalMode::Context);
    }
    Var k_self = linear(t, p, prefix + ".wk", prefix + ".bk", x, bias);
    Var v_self = linear(t, p, prefix + ".wv", prefix + ".bv", x, bias);
    return attend(t, p, prefix, q, k_ctx, v_ctx, k_self, v_self, ctx, core::DiagonalMode::Self);
}

MoeCeaResult attention_moe_cea(Tape& t, core::ParamStore& p, const std::string& prefix, Var x,
                               const BlockContext& ctx, std::size_t experts, double aux_loss_coeff) {
    if (!ctx.causal) throw ArchError("moe-cea attention is defined for causal models only");
    const bool bias = ctx.use_bias;
    Var q = linear(t, p, prefix + ".wq", prefix + ".bq", x, bias);
    Var routed_in = apply_norm(t, p, prefix + ".inner_moe.norm", x, ctx.norm);
    MoeResult moe = moe_layer(t, p, prefix + ".inner_moe", routed_in, experts, aux_loss_coeff, bias);
    Var k_ctx = linear(t, p, prefix + ".wk", prefix + ".bk", moe.output, bias);
    Var v_ctx = linear(t, p, prefix + ".wv", prefix + ".bv", moe.output, bias);
    Var out = attend(t, p, prefix, q, k_ctx, v_ctx, std::nullopt, std::nullopt, ctx,
                     core::DiagonalMode::Masked);
    return MoeCeaResult{out, moe.aux_loss, std::move(moe.histogram)};
}

ForwardOutput forward(Model& model, Tape& t, const TokenGrid& tokens, const ForwardOptions& options) {
    const ArchSpec& spec = model.spec();
    auto& p = model.params();
    if (tokens.seq == 0 || tokens.batch == 0 || tokens.ids.size() != tokens.batch * tokens.seq) {
        throw std::invalid_argument(fmt::format("forward: token grid {}x{} holds {} ids", tokens.batch,
                                                tokens.seq, tokens.ids.size()));
    }
    if (tokens.seq > spec.max_seq) {
        throw std::length_error(
            fmt::format("forward: sequence length {} exceeds max_seq {}", tokens.seq, spec.max_seq));
    }
    for (int id : tokens.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= spec.vocab) {
            throw std::out_of_range(fmt::format("forward: unknown token id {} (vocab {})", id, spec.vocab));
        }
    }
    const std::size_t n = tokens.ids.size();

    ForwardOutput out;
    BlockContext ctx;
    ctx.heads = spec.heads;
    ctx.seq_len = tokens.seq;
    ctx.causal = spec.causal();
    ctx.rotary = spec.pos_enc == PositionEncoding::Rotary;
    ctx.use_bias = spec.use_bias();
    ctx.norm = spec.norm;
    if (options.keep_attention_weights) ctx.attention_weights = &out.attention_weights;

    std::optional<SiteCapture> trace;
    if (options.capture_rows) trace.emplace();
    auto capture = [&](const std::string& site, const Var& x) {
        if (!trace) return;
        const Tensor& v = x.value();
        const std::size_t d = v.cols();
        Tensor rows;
        if (!options.capture_rows->empty()) rows = Tensor({options.capture_rows->size(), d});
        for (std::size_t i = 0; i < options.capture_rows->size(); ++i) {
            const std::size_t r = (*options.capture_rows)[i];
            std::copy_n(v.data() + r * d, d, rows.data() + i * d);
        }
        trace->sites.push_back(site);
        trace->reps.push_back(std::move(rows));
    };

    Var x = core::embedding_lookup(t.param(p, "embed.tokens"), tokens.ids);
    if (spec.pos_enc == PositionEncoding::Learned) {
        std::vector<int> pos(n);
        for (std::size_t r = 0; r < n; ++r) pos[r] = static_cast<int>(r % tokens.seq);
        x = core::add(x, core::embedding_lookup(t.param(p, "embed.positions"), pos));
    }
    if (p.contains("embed.norm.gain")) x = apply_norm(t, p, "embed.norm", x, spec.norm);
    capture("embed", x);

    const bool post = spec.norm == Norm::PostLayerNorm;
    std::optional<Var> aux;
    auto add_aux = [&](Var a) { aux = aux ? core::add(*aux, a) : a; };

    for (std::size_t l = 1; l <= spec.layers; ++l) {
        const std::string block = fmt::format("block{}", l);
        const std::string mha = block + ".mha";

        // Attention sublayer.
        Var in = post ? x : apply_norm(t, p, block + ".mha_norm", x, spec.norm);
        Var attn;
        if (spec.variant == Variant::MoeCea) {
            MoeCeaResult r = attention_moe_cea(t, p, mha, in, ctx, spec.experts, spec.aux_loss_coeff);
            attn = r.output;
            add_aux(r.aux_loss);
            out.routing.push_back(std::move(r.histogram));
        } else {
            attn = attention_with_inner_ffn(t, p, mha, in, ctx, spec.direct_pathway);
        }
        x = post ? apply_norm(t, p, block + ".mha_norm", core::add(x, attn), spec.norm) : core::add(x, attn);
        capture(fmt::format("L{}.mha", l), x);

        // Standalone MoE sublayer preceding the FFN.
        if (spec.variant == Variant::Moe) {
            Var m_in = post ? x : apply_norm(t, p, block + ".moe_norm", x, spec.norm);
            MoeResult r = moe_layer(t, p, block + ".moe", m_in, spec.experts, spec.aux_loss_coeff,
                                    spec.use_bias());
            add_aux(r.aux_loss);
            out.routing.push_back(std::move(r.histogram));
            x = post ? apply_norm(t, p, block + ".moe_norm", core::add(x, r.output), spec.norm)
                     : core::add(x, r.output);
        }

        // Outer-FFN sublayer; absent when the whole FFN moved inside attention.
        const bool has_outer = p.contains(block + ".ffn.w1");
        if (post) {
            Var sum = has_outer ? core::add(x, ffn(t, p, block + ".ffn", x, true, true)) : x;
            x = apply_norm(t, p, block + ".ffn_norm", sum, spec.norm);
        } else if (has_outer) {
            Var f_in = apply_norm(t, p, block + ".ffn_norm", x, spec.norm);
            x = core::add(x, ffn(t, p, block + ".ffn", f_in, spec.use_bias(), true));
        }
        capture(fmt::format("L{}.ffn", l), x);
    }

    if (spec.norm == Norm::PreRmsNorm) x = apply_norm(t, p, "final_norm", x, spec.norm);
    Var head = spec.tie_lm_head ? core::transpose(t.param(p, "embed.tokens")) : t.param(p, "lm_head.weight");
    Var logits = core::matmul(x, head);
    if (spec.use_bias()) logits = core::add_row(logits, t.param(p, "lm_head.bias"));

    out.logits = logits;
    out.aux_loss = aux ? *aux : t.constant(Tensor::scalar(0.0));
    out.trace = std::move(trace);
    return out;
}

}  // namespace combolab::arch
