#include "combolab/core/autodiff.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace combolab::core {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Tensor value) {
    if (!all_finite(value.values())) throw NumericError("constant holds non-finite values");
    nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr, 0});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    if (!all_finite(value.values())) throw NumericError("variable holds non-finite values");
    nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}, nullptr, 0});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore& store, std::string_view name) {
    std::string key(name);
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    const std::size_t index = store.index_of(name);
    const Tensor& value = store.value_at(index);
    if (!all_finite(value.values())) {
        throw NumericError(fmt::format("parameter '{}' holds non-finite values", name));
    }
    nodes_.push_back(Node{value, {}, grad_enabled_, {}, &store, index});
    param_nodes_.emplace(std::move(key), nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor(node.value.shape());
    return node.grad;
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& parents,
                 Backward rule) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape() != this) {
            throw std::invalid_argument(fmt::format("{}: operands live on different tapes", op));
        }
        needs = needs || nodes_[p.id()].needs_grad;
    }
    if (!all_finite(value.values())) {
        throw NumericError(fmt::format("{} produced non-finite values", op));
    }
    needs = needs && grad_enabled_;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(rule) : Backward{},
                          nullptr, 0});
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
    if (!grad_enabled_) throw std::logic_error("backward() on a tape without gradients");
    if (loss.tape() != this) throw std::invalid_argument("backward(): loss from another tape");
    if (nodes_[loss.id()].value.size() != 1) {
        throw DimensionError("backward() requires a scalar loss, got " +
                             to_string(nodes_[loss.id()].value.shape()));
    }
    if (!nodes_[loss.id()].needs_grad) return;
    grad_buffer(loss.id()).fill(1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.needs_grad || node.grad.empty()) continue;
        if (node.rule) node.rule(*this, id);
    }
    for (const Node& node : nodes_) {
        if (node.store == nullptr || node.grad.empty()) continue;
        auto dst = node.store->grad_at(node.param_index).values();
        auto src = node.grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

namespace {

// Gradient buffer of a parent, or nullptr when it needs none.
Tensor* grad_of(Tape& tape, const Var& v) {
    return tape.needs_grad(v.id()) ? &tape.grad_buffer(v.id()) : nullptr;
}

void require_rank2(const Var& v, const char* op) {
    if (v.value().rank() != 2) {
        throw DimensionError(fmt::format("{}: expected a matrix, got {}", op,
                                         to_string(v.value().shape())));
    }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.value().shape() != b.value().shape()) {
        throw DimensionError(fmt::format("{}: shapes {} and {} differ", op,
                                         to_string(a.value().shape()),
                                         to_string(b.value().shape())));
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    Tensor out = matmul_kernel(a.value(), b.value());
    return a.tape()->record("matmul", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        if (Tensor* da = grad_of(t, a)) accumulate_matmul_nt(dout, b.value(), *da);
        if (Tensor* db = grad_of(t, b)) accumulate_matmul_tn(a.value(), dout, *db);
    });
}

Var transpose(Var a) {
    require_rank2(a, "transpose");
    const Tensor& x = a.value();
    Tensor out({x.cols(), x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
    return a.tape()->record("transpose", std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        Tensor* da = grad_of(t, a);
        for (std::size_t r = 0; r < da->rows(); ++r)
            for (std::size_t c = 0; c < da->cols(); ++c) (*da)(r, c) += dout(c, r);
    });
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape()->record("add", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        for (const Var& p : {a, b}) {
            if (Tensor* dp = grad_of(t, p))
                for (std::size_t i = 0; i < dp->size(); ++i) (*dp)[i] += dout[i];
        }
    });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    return a.tape()->record("scale", std::move(out), {a}, [a, factor](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        Tensor* da = grad_of(t, a);
        for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += factor * dout[i];
    });
}

Var add_row(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (bv.rank() != 1 || bv.size() != xv.cols()) {
        throw DimensionError(fmt::format("add_row: bias {} does not match rows of {}",
                                         to_string(bv.shape()), to_string(xv.shape())));
    }
    Tensor out = xv;
    const std::size_t d = xv.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
    return x.tape()->record("add_row", std::move(out), {x, bias},
                            [x, bias, d](Tape& t, std::size_t self) {
                                const Tensor& dout = t.grad(self);
                                if (Tensor* dx = grad_of(t, x))
                                    for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += dout[i];
                                if (Tensor* db = grad_of(t, bias))
                                    for (std::size_t i = 0; i < dout.size(); ++i) (*db)[i % d] += dout[i];
                            });
}

Var mul_col(Var x, Var s) {
    require_rank2(x, "mul_col");
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    if (sv.size() != xv.rows()) {
        throw DimensionError(fmt::format("mul_col: scale {} does not match rows of {}",
                                         to_string(sv.shape()), to_string(xv.shape())));
    }
    Tensor out = xv;
    const std::size_t d = xv.cols();
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) out(r, c) *= sv[r];
    return x.tape()->record("mul_col", std::move(out), {x, s}, [x, s, d](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        const Tensor& xv = x.value();
        const Tensor& sv = s.value();
        Tensor* dx = grad_of(t, x);
        Tensor* ds = grad_of(t, s);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                if (dx) (*dx)(r, c) += dout(r, c) * sv[r];
                acc += dout(r, c) * xv(r, c);
            }
            if (ds) (*ds)[r] += acc;
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape()->record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        if (Tensor* da = grad_of(t, a))
            for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += dout[i] * b.value()[i];
        if (Tensor* db = grad_of(t, b))
            for (std::size_t i = 0; i < db->size(); ++i) (*db)[i] += dout[i] * a.value()[i];
    });
}

Var gelu(Var x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    return x.tape()->record("gelu", std::move(out), {x}, [x](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        const Tensor& xv = x.value();
        Tensor* dx = grad_of(t, x);
        const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * kInvSqrt2;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            (*dx)[i] += dout[i] * (cdf + v * pdf);
        }
    });
}

Var softmax_rows(Var x, const std::optional<Tensor>& mask) {
    const Tensor& xv = x.value();
    if (mask && !mask->same_shape(xv)) {
        throw DimensionError(fmt::format("softmax_rows: mask {} does not match {}",
                                         to_string(mask->shape()), to_string(xv.shape())));
    }
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (mask && (*mask)(r, c) == 0.0) continue;
            max_logit = std::max(max_logit, xv[r * cols + c]);
        }
        if (max_logit == -std::numeric_limits<double>::infinity()) continue;
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (mask && (*mask)(r, c) == 0.0) continue;
            const double e = std::exp(xv[r * cols + c] - max_logit);
            out[r * cols + c] = e;
            total += e;
        }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
    }
    Tensor probs = out;
    return x.tape()->record(
        "softmax_rows", std::move(out), {x},
        [x, probs = std::move(probs), rows, cols](Tape& t, std::size_t self) {
            const Tensor& dout = t.grad(self);
            Tensor* dx = grad_of(t, x);
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += probs[r * cols + c] * dout[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    (*dx)[i] += probs[i] * (dout[i] - dot);
                }
            }
        });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& xv = x.value();
    const std::size_t d = xv.cols();
    if (gain.value().size() != d || bias.value().size() != d) {
        throw DimensionError(fmt::format("layer_norm: gain/bias must have {} entries", d));
    }
    const std::size_t rows = xv.size() / d;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> rstd(rows);
    const Tensor& g = gain.value();
    const Tensor& b = bias.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += row[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (row[c] - mean) * rstd[r];
            xhat[r * d + c] = h;
            out[r * d + c] = h * g[c] + b[c];
        }
    }
    return x.tape()->record(
        "layer_norm", std::move(out), {x, gain, bias},
        [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](Tape& t,
                                                                                 std::size_t self) {
            const Tensor& dout = t.grad(self);
            const Tensor& g = gain.value();
            Tensor* dx = grad_of(t, x);
            Tensor* dg = grad_of(t, gain);
            Tensor* db = grad_of(t, bias);
            std::vector<double> dxhat(d);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_dxhat = 0.0;
                double mean_dxhat_xhat = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const std::size_t i = r * d + c;
                    dxhat[c] = dout[i] * g[c];
                    mean_dxhat += dxhat[c];
                    mean_dxhat_xhat += dxhat[c] * xhat[i];
                    if (dg) (*dg)[c] += dout[i] * xhat[i];
                    if (db) (*db)[c] += dout[i];
                }
                if (!dx) continue;
                mean_dxhat /= static_cast<double>(d);
                mean_dxhat_xhat /= static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const std::size_t i = r * d + c;
                    (*dx)[i] += rstd[r] * (dxhat[c] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                }
            }
        });
}

Var rms_norm(Var x, Var gain, double eps) {
    const Tensor& xv = x.value();
    const std::size_t d = xv.cols();
    if (gain.value().size() != d) {
        throw DimensionError(fmt::format("rms_norm: gain must have {} entries", d));
    }
    const std::size_t rows = xv.size() / d;
    const Tensor& g = gain.value();
    Tensor out(xv.shape());
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ms = 0.0;
        for (std::size_t c = 0; c < d; ++c) ms += xv[r * d + c] * xv[r * d + c];
        ms /= static_cast<double>(d);
        inv_rms[r] = 1.0 / std::sqrt(ms + eps);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * inv_rms[r] * g[c];
    }
    return x.tape()->record(
        "rms_norm", std::move(out), {x, gain},
        [x, gain, inv_rms = std::move(inv_rms), rows, d](Tape& t, std::size_t self) {
            const Tensor& dout = t.grad(self);
            const Tensor& xv = x.value();
            const Tensor& g = gain.value();
            Tensor* dx = grad_of(t, x);
            Tensor* dg = grad_of(t, gain);
            for (std::size_t r = 0; r < rows; ++r) {
                const double ir = inv_rms[r];
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const std::size_t i = r * d + c;
                    dot += dout[i] * g[c] * xv[i];
                    if (dg) (*dg)[c] += dout[i] * xv[i] * ir;
                }
                if (!dx) continue;
                const double coeff = ir * ir * ir * dot / static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const std::size_t i = r * d + c;
                    (*dx)[i] += ir * g[c] * dout[i] - xv[i] * coeff;
                }
            }
        });
}

Var embedding_lookup(Var table, std::span<const int> ids) {
    require_rank2(table, "embedding_lookup");
    const Tensor& tv = table.value();
    const std::size_t d = tv.cols();
    if (ids.empty()) throw DimensionError("embedding_lookup: no ids");
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
            throw std::out_of_range(
                fmt::format("embedding_lookup: id {} outside table of {} rows", ids[i], tv.rows()));
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<int> saved(ids.begin(), ids.end());
    return table.tape()->record(
        "embedding_lookup", std::move(out), {table},
        [table, saved = std::move(saved), d](Tape& t, std::size_t self) {
            const Tensor& dout = t.grad(self);
            Tensor* dt = grad_of(t, table);
            for (std::size_t i = 0; i < saved.size(); ++i) {
                double* dst = dt->data() + static_cast<std::size_t>(saved[i]) * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += dout[i * d + c];
            }
        });
}

Tensor log_softmax_rows(const Tensor& logits) {
    Tensor out(logits.shape());
    const std::size_t cols = logits.cols();
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) total += std::exp(v - m);
        const double lse = m + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) out(r, c) = row[c] - lse;
    }
    return out;
}

Var cross_entropy(Var logits, std::span<const int> targets) {
    require_rank2(logits, "cross_entropy");
    const Tensor& lv = logits.value();
    const std::size_t n = lv.rows();
    const std::size_t vocab = lv.cols();
    if (targets.size() != n) {
        throw DimensionError(fmt::format("cross_entropy: {} targets for {} rows", targets.size(), n));
    }
    std::size_t count = 0;
    for (int tgt : targets) {
        if (tgt == kIgnoreIndex) continue;
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) {
            throw std::out_of_range(fmt::format("cross_entropy: target {} outside [0,{})", tgt, vocab));
        }
        ++count;
    }
    if (count == 0) throw std::invalid_argument("cross_entropy: every target is ignored");

    Tensor probs({n, vocab});
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] == kIgnoreIndex) continue;
        auto row = lv.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t c = 0; c < vocab; ++c) {
            probs(r, c) = std::exp(row[c] - m);
            z += probs(r, c);
        }
        for (std::size_t c = 0; c < vocab; ++c) probs(r, c) /= z;
        total += m + std::log(z) - row[static_cast<std::size_t>(targets[r])];
    }
    const double inv_count = 1.0 / static_cast<double>(count);
    std::vector<int> saved(targets.begin(), targets.end());
    return logits.tape()->record(
        "cross_entropy", Tensor::scalar(total * inv_count), {logits},
        [logits, probs = std::move(probs), saved = std::move(saved), inv_count, vocab](
            Tape& t, std::size_t self) {
            const double upstream = t.grad(self)[0] * inv_count;
            Tensor* dl = grad_of(t, logits);
            for (std::size_t r = 0; r < saved.size(); ++r) {
                if (saved[r] == kIgnoreIndex) continue;
                for (std::size_t c = 0; c < vocab; ++c) (*dl)(r, c) += upstream * probs(r, c);
                (*dl)(r, static_cast<std::size_t>(saved[r])) -= upstream;
            }
        });
}

Var rotary_apply(Var x, std::span<const std::size_t> positions, std::size_t head_dim) {
    require_rank2(x, "rotary_apply");
    const Tensor& xv = x.value();
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw DimensionError(fmt::format("rotary_apply: head dimension {} must be even", head_dim));
    }
    if (xv.cols() % head_dim != 0) {
        throw DimensionError(fmt::format("rotary_apply: width {} is not a multiple of head dim {}",
                                         xv.cols(), head_dim));
    }
    if (positions.size() != xv.rows()) {
        throw DimensionError(fmt::format("rotary_apply: {} positions for {} rows",
                                         positions.size(), xv.rows()));
    }
    const std::size_t half = head_dim / 2;
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    // cos/sin per (row, pair index)
    std::vector<double> cosv(rows * half), sinv(rows * half);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double theta = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                       static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[r]) * theta;
            cosv[r * half + i] = std::cos(angle);
            sinv[r * half + i] = std::sin(angle);
        }
    }
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < cols; h += head_dim) {
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t a = r * cols + h + 2 * i;
                const double c = cosv[r * half + i];
                const double s = sinv[r * half + i];
                out[a] = xv[a] * c - xv[a + 1] * s;
                out[a + 1] = xv[a] * s + xv[a + 1] * c;
            }
        }
    }
    return x.tape()->record(
        "rotary_apply", std::move(out), {x},
        [x, cosv = std::move(cosv), sinv = std::move(sinv), rows, cols, head_dim, half](
            Tape& t, std::size_t self) {
            const Tensor& dout = t.grad(self);
            Tensor* dx = grad_of(t, x);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t h = 0; h < cols; h += head_dim) {
                    for (std::size_t i = 0; i < half; ++i) {
                        const std::size_t a = r * cols + h + 2 * i;
                        const double c = cosv[r * half + i];
                        const double s = sinv[r * half + i];
                        (*dx)[a] += dout[a] * c + dout[a + 1] * s;
                        (*dx)[a + 1] += -dout[a] * s + dout[a + 1] * c;
                    }
                }
            }
        });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
    require_rank2(x, "gather_rows");
    const Tensor& xv = x.value();
    const std::size_t d = xv.cols();
    if (rows.empty()) throw DimensionError("gather_rows: empty selection");
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.rows()) throw std::out_of_range("gather_rows: row index out of range");
        std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    return x.tape()->record("gather_rows", std::move(out), {x},
                            [x, saved = std::move(saved), d](Tape& t, std::size_t self) {
                                const Tensor& dout = t.grad(self);
                                Tensor* dx = grad_of(t, x);
                                for (std::size_t i = 0; i < saved.size(); ++i)
                                    for (std::size_t c = 0; c < d; ++c)
                                        (*dx)[saved[i] * d + c] += dout[i * d + c];
                            });
}

Var scatter_add_rows(Var src, std::span<const std::size_t> rows, std::size_t n) {
    require_rank2(src, "scatter_add_rows");
    const Tensor& sv = src.value();
    if (rows.size() != sv.rows()) throw DimensionError("scatter_add_rows: index count mismatch");
    const std::size_t d = sv.cols();
    Tensor out({n, d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) throw std::out_of_range("scatter_add_rows: row index out of range");
        for (std::size_t c = 0; c < d; ++c) out[rows[i] * d + c] += sv[i * d + c];
    }
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    return src.tape()->record("scatter_add_rows", std::move(out), {src},
                              [src, saved = std::move(saved), d](Tape& t, std::size_t self) {
                                  const Tensor& dout = t.grad(self);
                                  Tensor* ds = grad_of(t, src);
                                  for (std::size_t i = 0; i < saved.size(); ++i)
                                      for (std::size_t c = 0; c < d; ++c)
                                          (*ds)[i * d + c] += dout[saved[i] * d + c];
                              });
}

Var pick_per_row(Var x, std::span<const std::size_t> cols) {
    require_rank2(x, "pick_per_row");
    const Tensor& xv = x.value();
    if (cols.size() != xv.rows()) throw DimensionError("pick_per_row: index count mismatch");
    Tensor out({xv.rows(), 1});
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        if (cols[r] >= xv.cols()) throw std::out_of_range("pick_per_row: column out of range");
        out[r] = xv(r, cols[r]);
    }
    std::vector<std::size_t> saved(cols.begin(), cols.end());
    return x.tape()->record("pick_per_row", std::move(out), {x},
                            [x, saved = std::move(saved)](Tape& t, std::size_t self) {
                                const Tensor& dout = t.grad(self);
                                Tensor* dx = grad_of(t, x);
                                for (std::size_t r = 0; r < saved.size(); ++r)
                                    (*dx)(r, saved[r]) += dout[r];
                            });
}

Var weighted_sum(Var x, const Tensor& weights) {
    if (!x.value().same_shape(weights)) {
        throw DimensionError(fmt::format("weighted_sum: weights {} do not match {}",
                                         to_string(weights.shape()), to_string(x.value().shape())));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) total += x.value()[i] * weights[i];
    return x.tape()->record("weighted_sum", Tensor::scalar(total), {x},
                            [x, weights](Tape& t, std::size_t self) {
                                const double upstream = t.grad(self)[0];
                                Tensor* dx = grad_of(t, x);
                                for (std::size_t i = 0; i < weights.size(); ++i)
                                    (*dx)[i] += upstream * weights[i];
                            });
}

Var attention(Var q, Var k_ctx, Var v_ctx, std::optional<Var> k_self, std::optional<Var> v_self,
              const AttentionOptions& options, Tensor* weights_out) {
    require_rank2(q, "attention");
    require_same_shape(q, k_ctx, "attention");
    require_same_shape(q, v_ctx, "attention");
    const bool use_self = options.diagonal == DiagonalMode::Self;
    if (use_self) {
        if (!k_self || !v_self) throw std::invalid_argument("attention: self mode needs k_self/v_self");
        require_same_shape(q, *k_self, "attention");
        require_same_shape(q, *v_self, "attention");
    }
    const std::size_t n = q.value().rows();
    const std::size_t d = q.value().cols();
    const std::size_t heads = options.heads;
    const std::size_t seq = options.seq_len;
    if (heads == 0 || d % heads != 0) {
        throw DimensionError(fmt::format("attention: width {} not divisible by {} heads", d, heads));
    }
    if (seq == 0 || n % seq != 0) {
        throw DimensionError(fmt::format("attention: {} rows not a multiple of sequence length {}", n, seq));
    }
    const std::size_t hd = d / heads;
    const std::size_t batches = n / seq;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool causal = options.causal;
    const bool mask_diag = options.diagonal == DiagonalMode::Masked;

    auto allowed = [causal, mask_diag](std::size_t i, std::size_t j) {
        if (causal && j > i) return false;
        if (mask_diag && i == j) return false;
        return true;
    };

    const Tensor& qv = q.value();
    const Tensor& kc = k_ctx.value();
    const Tensor& vc = v_ctx.value();
    const Tensor* ks = use_self ? &k_self->value() : nullptr;
    const Tensor* vs = use_self ? &v_self->value() : nullptr;

    auto probs = std::make_shared<Tensor>(Shape{batches * heads * seq, seq});
    Tensor out({n, d});
    std::vector<double> logits(seq);
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            for (std::size_t i = 0; i < seq; ++i) {
                const std::size_t row_i = b * seq + i;
                const double* qi = qv.data() + row_i * d + off;
                double max_logit = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < seq; ++j) {
                    if (!allowed(i, j)) continue;
                    const std::size_t row_j = b * seq + j;
                    const double* kj = (use_self && i == j ? ks->data() : kc.data()) + row_j * d + off;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
                    logits[j] = dot * scale_factor;
                    max_logit = std::max(max_logit, logits[j]);
                }
                double* p = probs->data() + ((b * heads + h) * seq + i) * seq;
                if (max_logit == -std::numeric_limits<double>::infinity()) continue;
                double total = 0.0;
                for (std::size_t j = 0; j < seq; ++j) {
                    if (!allowed(i, j)) continue;
                    p[j] = std::exp(logits[j] - max_logit);
                    total += p[j];
                }
                double* oi = out.data() + row_i * d + off;
                for (std::size_t j = 0; j < seq; ++j) {
                    if (p[j] == 0.0) continue;
                    p[j] /= total;
                    const std::size_t row_j = b * seq + j;
                    const double* vj = (use_self && i == j ? vs->data() : vc.data()) + row_j * d + off;
                    for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
                }
            }
        }
    }
    if (weights_out) *weights_out = *probs;

    std::vector<Var> parents{q, k_ctx, v_ctx};
    if (use_self) {
        parents.push_back(*k_self);
        parents.push_back(*v_self);
    }
    Var ks_var = use_self ? *k_self : k_ctx;
    Var vs_var = use_self ? *v_self : v_ctx;
    return q.tape()->record(
        "attention", std::move(out), parents,
        [=](Tape& t, std::size_t self) {
            const Tensor& dout = t.grad(self);
            const Tensor& qv = q.value();
            const Tensor& kc = k_ctx.value();
            const Tensor& vc = v_ctx.value();
            const Tensor& ks = ks_var.value();
            const Tensor& vs = vs_var.value();
            Tensor* dq = grad_of(t, q);
            Tensor* dkc = grad_of(t, k_ctx);
            Tensor* dvc = grad_of(t, v_ctx);
            Tensor* dks = grad_of(t, ks_var);
            Tensor* dvs = grad_of(t, vs_var);
            std::vector<double> dp(seq);
            for (std::size_t b = 0; b < batches; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * hd;
                    for (std::size_t i = 0; i < seq; ++i) {
                        const std::size_t row_i = b * seq + i;
                        const double* p = probs->data() + ((b * heads + h) * seq + i) * seq;
                        const double* doi = dout.data() + row_i * d + off;
                        double weighted = 0.0;
                        for (std::size_t j = 0; j < seq; ++j) {
                            dp[j] = 0.0;
                            if (p[j] == 0.0) continue;
                            const bool diag = use_self && i == j;
                            const std::size_t row_j = b * seq + j;
                            const double* vj = (diag ? vs : vc).data() + row_j * d + off;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < hd; ++c) dot += doi[c] * vj[c];
                            dp[j] = dot;
                            weighted += p[j] * dot;
                            Tensor* dv = diag ? dvs : dvc;
                            if (dv) {
                                double* dvj = dv->data() + row_j * d + off;
                                for (std::size_t c = 0; c < hd; ++c) dvj[c] += p[j] * doi[c];
                            }
                        }
                        const double* qi = qv.data() + row_i * d + off;
                        for (std::size_t j = 0; j < seq; ++j) {
                            if (p[j] == 0.0) continue;
                            const double dlogit = p[j] * (dp[j] - weighted) * scale_factor;
                            const bool diag = use_self && i == j;
                            const std::size_t row_j = b * seq + j;
                            const double* kj = (diag ? ks : kc).data() + row_j * d + off;
                            if (dq) {
                                double* dqi = dq->data() + row_i * d + off;
                                for (std::size_t c = 0; c < hd; ++c) dqi[c] += dlogit * kj[c];
                            }
                            Tensor* dk = diag ? dks : dkc;
                            if (dk) {
                                double* dkj = dk->data() + row_j * d + off;
                                for (std::size_t c = 0; c < hd; ++c) dkj[c] += dlogit * qi[c];
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace combolab::core
