#include "combolab/cli/commands.hpp"

#include "combolab/analysis/mi.hpp"
#include "combolab/analysis/tp.hpp"
#include "combolab/eval/mcq.hpp"
#include "combolab/eval/ood.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

namespace combolab::cli {

namespace fs = std::filesystem;

namespace {

using Summary = std::vector<std::pair<std::string, std::string>>;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << text;
}

void write_summary(const fs::path& dir, const Summary& entries) {
    std::string text;
    for (const auto& [k, v] : entries) text += fmt::format("{}={}\n", k, v);
    write_text(dir / "summary.txt", text);
}

std::map<std::string, std::string> read_summary(const fs::path& dir) {
    std::ifstream in(dir / "summary.txt");
    if (!in) throw std::runtime_error(fmt::format("'{}' has no summary.txt", dir.string()));
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

std::string num(double v) { return fmt::format("{:.6g}", v); }

// The run a checkpoint belongs to: <run>/checkpoints/<file>.
fs::path source_run(const fs::path& checkpoint) {
    const fs::path parent = fs::absolute(checkpoint).parent_path();
    return parent.filename() == "checkpoints" || parent.filename() == "snapshots" ? parent.parent_path() : parent;
}

struct LoadedModel {
    train::Checkpoint checkpoint;
    arch::Model model;
    PreparedData data;
};

LoadedModel load_model(const fs::path& checkpoint, const RunConfig& config) {
    train::Checkpoint ck = train::read_checkpoint(checkpoint);
    auto it = ck.meta.find("tokenizer");
    if (it == ck.meta.end()) throw std::runtime_error(fmt::format("'{}' records no tokenizer", checkpoint.string()));
    data::Tokenizer tok = data::Tokenizer::from_json(it->second);
    if (tok.size() != ck.spec.vocab) {
        throw std::runtime_error(fmt::format("checkpoint tokenizer has {} tokens but the model expects {}", tok.size(),
                                            ck.spec.vocab));
    }
    data::Corpus corpus = data::load_corpus(config.resolve(config.data.manifest), config.data.dev_fraction, config.seed);
    arch::Model model(ck.spec, ck.params);
    return {std::move(ck), std::move(model), {std::move(corpus), std::move(tok)}};
}

std::string ratio_dir_name(const arch::Ratio& r) { return fmt::format("ratio-{}-{}", r.num, r.den); }

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

fs::path next_run_dir(const fs::path& root, const std::string& verb) {
    fs::create_directories(root);
    const std::regex pattern(verb + "-(\\d+)");
    int highest = 0;
    for (const auto& entry : fs::directory_iterator(root)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) highest = std::max(highest, std::stoi(m[1]));
    }
    const fs::path dir = root / fmt::format("{}-{:03d}", verb, highest + 1);
    fs::create_directories(dir);
    return dir;
}

PreparedData prepare_data(const RunConfig& config) {
    data::Corpus corpus = data::load_corpus(config.resolve(config.data.manifest), config.data.dev_fraction, config.seed);
    if (corpus.train_docs().empty()) throw ConfigError("data.manifest: no train domain has documents");
    if (config.data.tokenizer == "byte") return {std::move(corpus), data::Tokenizer::byte_level()};
    if (config.data.tokenizer == "char") {
        data::Tokenizer tok = data::Tokenizer::char_level(corpus.all_docs());
        return {std::move(corpus), std::move(tok)};
    }
    std::ifstream in(config.resolve(config.data.word_list));
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return {std::move(corpus), data::Tokenizer::word_list(words)};
}

data::Objective objective_for(const arch::ArchSpec& spec) {
    return spec.causal() ? data::Objective::CausalLm : data::Objective::MaskedLm;
}

std::string architecture_label(const arch::ArchSpec& spec) {
    const std::string family = arch::to_string(spec.family);
    switch (spec.variant) {
        case arch::Variant::Caa: return fmt::format("{}-caa(r={})", family, spec.outer_ratio.to_string());
        case arch::Variant::Moe:
        case arch::Variant::MoeCea:
            return fmt::format("{}-{}(E={})", family, arch::to_string(spec.variant), spec.experts);
        default: return fmt::format("{}-{}({}d)", family, arch::to_string(spec.variant), spec.ffn_mult);
    }
}

train::TrainResult pretrain_into(const RunConfig& config, const PreparedData& data, const fs::path& dir,
                                 std::ostream& log, bool keep_snapshots) {
    fs::create_directories(dir);
    arch::ArchSpec spec = config.arch;
    spec.vocab = data.tokenizer.size();
    spec.validate();
    train::TrainConfig tc = config.train;
    tc.seed = config.seed;
    tc.validate();
    if (tc.seq > spec.max_seq) throw ConfigError(fmt::format("train.seq: {} exceeds arch.max_seq {}", tc.seq, spec.max_seq));

    RunConfig stored = config;
    stored.arch = spec;
    stored.train = tc;
    write_text(dir / "config.txt", serialize_config(stored));
    write_text(dir / "tokenizer.json", data.tokenizer.to_json());

    const auto objective = objective_for(spec);
    const data::Dataset train_ds(objective, data.corpus.train_docs(), data.tokenizer, tc.seq);
    const data::Dataset dev_ds(objective, data.corpus.dev_docs(), data.tokenizer, tc.seq);
    log << fmt::format("{}: {} params, {} train rows, {} dev rows, vocab {}\n", architecture_label(spec),
                       arch::param_count(spec).total(), train_ds.rows(), dev_ds.rows(), spec.vocab);

    train::TrainState state = train::TrainState::fresh(arch::build_model(spec, core::SeededRng(config.seed, "model")));
    train::TrainOptions opts;
    opts.checkpoint_dir = dir / "checkpoints";
    opts.keep_snapshots = keep_snapshots;
    opts.checkpoint_meta = {{"tokenizer", data.tokenizer.to_json()}, {"run", dir.filename().string()}};
    opts.on_step = [&](const train::StepLog& s, std::optional<double> dev) {
        if (dev) log << fmt::format("  step {:>6}  lr {:.3g}  train {:.4f}  dev {:.4f}\n", s.step, s.lr, s.train_loss, *dev);
    };
    train::TrainResult result = train::train(state, train_ds, dev_ds, tc, opts);

    train::write_loss_csv(dir / "loss.csv", result.curve);
    std::string steps = "step,lr,train_loss,aux_loss,routing_entropy\n";
    for (const auto& s : result.log) {
        steps += fmt::format("{},{:.6g},{:.6g},{:.6g},{:.6g}\n", s.step, s.lr, s.train_loss, s.aux_loss, s.routing_entropy);
    }
    write_text(dir / "train_log.csv", steps);
    Summary summary = {{"kind", "pretrain"},
                       {"run", fs::absolute(dir).string()},
                       {"arch", architecture_label(spec)},
                       {"params", std::to_string(arch::param_count(spec).total())},
                       {"diverged", result.diverged ? "true" : "false"}};
    if (!result.curve.empty()) {
        summary.push_back({"step", std::to_string(result.curve.back().step)});
        summary.push_back({"dev_loss", num(result.curve.back().dev_loss)});
    }
    if (result.diverged) {
        summary.push_back({"divergence", result.divergence_message});
        log << "diverged: " << result.divergence_message << "\n";
    }
    write_summary(dir, summary);
    return result;
}

namespace {

struct RunSetup {
    arch::ArchSpec spec;
    train::TrainConfig train;
};

// The spec and schedule pretrain_into actually used for `config`.
RunSetup run_setup(const RunConfig& config, const PreparedData& data) {
    RunSetup r{config.arch, config.train};
    r.spec.vocab = data.tokenizer.size();
    r.train.seed = config.seed;
    return r;
}

// Training state at `step`, resumed from the latest full checkpoint at or
// before it (or from initialization), evaluated every `eval_every` steps
// after `eval_from`.
struct Resumed {
    train::TrainState state;
    train::TrainResult result;
};

Resumed resume_to(const RunConfig& config, const PreparedData& data, const fs::path& run_dir, std::uint64_t step,
                  std::uint64_t eval_from) {
    const RunSetup setup = run_setup(config, data);
    std::optional<std::uint64_t> start;
    if (fs::exists(run_dir / "checkpoints")) {
        for (const auto& entry : fs::directory_iterator(run_dir / "checkpoints")) {
            const std::string f = entry.path().filename().string();
            if (!f.starts_with("step-") || !f.ends_with(".ckpt")) continue;
            const std::uint64_t s = std::stoull(f.substr(5, f.size() - 10));
            if (s <= eval_from && (!start || s > *start)) start = s;
        }
    }
    std::optional<train::Checkpoint> ck;
    if (start) ck = train::read_checkpoint(run_dir / "checkpoints" / train::checkpoint_filename(*start));
    train::TrainState state = ck ? train::TrainState::from_checkpoint(*ck)
                                 : train::TrainState::fresh(arch::build_model(setup.spec, core::SeededRng(config.seed, "model")));
    train::TrainResult result;
    if (ck) result.curve.push_back({ck->step, ck->dev_loss});

    const auto objective = objective_for(setup.spec);
    const data::Dataset train_ds(objective, data.corpus.train_docs(), data.tokenizer, setup.train.seq);
    const data::Dataset dev_ds(objective, data.corpus.dev_docs(), data.tokenizer, setup.train.seq);
    train::TrainOptions quiet;
    quiet.keep_snapshots = false;
    if (state.step < eval_from) {
        train::TrainConfig skip = setup.train;
        skip.stop_step = eval_from;
        skip.eval_every = setup.train.max_steps;
        result = train::train(state, train_ds, dev_ds, skip, quiet);
    }
    train::TrainConfig dense = setup.train;
    dense.stop_step = step;
    dense.eval_every = 1;
    if (state.step < step) result = train::train(state, train_ds, dev_ds, dense, quiet);
    return {std::move(state), std::move(result)};
}

}  // namespace

train::LossCurve refine_curve(const RunConfig& config, const PreparedData& data, const fs::path& run_dir,
                              const train::LossCurve& curve, double target) {
    if (curve.empty()) return curve;
    std::size_t best = 0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        if (std::abs(curve[i].dev_loss - target) < std::abs(curve[best].dev_loss - target)) best = i;
    }
    const std::uint64_t lo = best > 0 ? curve[best - 1].step : 0;
    const std::uint64_t hi = best + 1 < curve.size() ? curve[best + 1].step : curve[best].step;
    if (hi - lo <= 2) return curve;
    const train::TrainResult dense = resume_to(config, data, run_dir, hi, lo).result;

    std::map<std::uint64_t, double> merged;
    for (const auto& p : curve) merged[p.step] = p.dev_loss;
    for (const auto& p : dense.curve) {
        auto [it, inserted] = merged.emplace(p.step, p.dev_loss);
        if (!inserted && it->second != p.dev_loss) {
            throw std::runtime_error(fmt::format("resumed run disagrees with the recorded dev loss at step {} ({} vs {})",
                                                 p.step, p.dev_loss, it->second));
        }
    }
    train::LossCurve out;
    for (const auto& [step, loss] : merged) out.push_back({step, loss});
    return out;
}

train::Checkpoint reproduce_step(const RunConfig& config, const PreparedData& data, const fs::path& run_dir,
                                 std::uint64_t step) {
    const Resumed r = resume_to(config, data, run_dir, step, step);
    if (r.state.step != step) throw std::runtime_error(fmt::format("could not reproduce step {}", step));
    return r.state.checkpoint(r.result.curve.empty() ? std::nan("") : r.result.curve.back().dev_loss, false);
}

PretrainOutcome cmd_pretrain(const RunConfig& config, const fs::path& out_root, std::ostream& log) {
    config.validate();
    const PreparedData data = prepare_data(config);
    const fs::path dir = next_run_dir(out_root, "pretrain");
    log << "run directory: " << dir.string() << "\n";
    train::TrainResult result = pretrain_into(config, data, dir, log);
    return {dir, std::move(result)};
}

AnalysisOutcome analyze_model(arch::Model& model, const RunConfig& config, const PreparedData& data,
                              analysis::Metric metric) {
    const arch::ArchSpec& spec = model.spec();
    const std::size_t seq = std::min(config.train.seq, spec.max_seq);
    const data::Dataset dev(objective_for(spec), data.corpus.dev_docs(), data.tokenizer, seq);
    analysis::TraceOptions to;
    to.sample_budget = config.analysis.sample_budget;
    to.policy = analysis::default_policy(spec.family);
    to.seed = config.analysis.trace_seed;
    AnalysisOutcome out;
    out.trace = analysis::collect_trace(model, dev, to);
    if (metric == analysis::Metric::Mi) {
        analysis::KMeansOptions ko;
        ko.k = config.analysis.k;
        ko.batch_size = config.analysis.kmeans_batch;
        ko.passes = config.analysis.kmeans_passes;
        ko.seed = config.analysis.trace_seed;
        out.curve = analysis::mi_curve(out.trace, ko);
    } else {
        out.curve = analysis::tp_curve(out.trace, config.analysis.min_count);
    }
    out.report = analysis::contribution_ratio(out.trace.sites, out.curve, metric);
    return out;
}

std::map<std::string, double> selected_ood_losses(arch::Model& model, const RunConfig& config,
                                                  const PreparedData& data) {
    std::map<std::string, double> out;
    if (config.eval.ood == "none") return out;
    std::vector<std::string> names;
    if (config.eval.ood == "all") {
        names = data.corpus.ood_names();
    } else {
        std::istringstream in(config.eval.ood);
        for (std::string n; std::getline(in, n, ',');) names.push_back(n);
    }
    eval::OodOptions oo;
    oo.seq = std::min(config.train.seq, model.spec().max_seq);
    oo.batch = config.train.eval_batch;
    oo.eval_seed = config.train.eval_seed;
    oo.max_rows = config.eval.ood_max_rows;
    for (const auto& n : names) {
        auto it = data.corpus.ood.find(n);
        if (it == data.corpus.ood.end()) throw ConfigError(fmt::format("eval.ood: unknown OOD domain '{}'", n));
        out[n] = eval::ood_loss(model, it->second, data.tokenizer, oo);
    }
    return out;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: inputs differ in length");
    if (x.size() < 2) return std::nullopt;
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

SweepOutcome cmd_sweep(const RunConfig& config, const fs::path& out_root, std::ostream& log) {
    config.validate();
    if (config.sweep.ratios.empty()) throw ConfigError("sweep.ratios: empty list");
    const PreparedData data = prepare_data(config);
    SweepOutcome out;
    out.dir = next_run_dir(out_root, "sweep");
    log << "sweep directory: " << out.dir.string() << "\n";

    std::map<std::string, train::LossCurve> curves;
    std::map<std::string, RunConfig> configs;
    for (const auto& r : config.sweep.ratios) {
        RunConfig rc = config;
        rc.arch.variant = arch::Variant::Caa;
        rc.arch.outer_ratio = r;
        rc.train.checkpoint_every = 5 * rc.train.eval_every;
        const fs::path sub = out.dir / ratio_dir_name(r);
        log << fmt::format("ratio {}\n", r.to_string());
        train::TrainResult res = pretrain_into(rc, data, sub, log, false);
        curves[ratio_dir_name(r)] = res.curve;
        configs[ratio_dir_name(r)] = rc;
    }

    std::map<std::string, train::LossCurve> usable;
    for (const auto& [name, curve] : curves) {
        if (!curve.empty()) usable[name] = curve;
    }
    if (usable.empty()) throw std::runtime_error("sweep: every run diverged before its first evaluation");
    out.target = config.sweep.align_target == "worst" ? train::default_alignment_target(usable)
                                                      : std::stod(config.sweep.align_target);
    // Dense evaluation around the target, resumed from the run's checkpoints.
    for (auto& [name, curve] : usable) {
        curve = refine_curve(configs[name], data, out.dir / name, curve, out.target);
        train::write_loss_csv(out.dir / name / "loss_refined.csv", curve);
    }
    const auto alignments = train::align_checkpoints(usable, out.target, config.sweep.align_tolerance);
    log << fmt::format("alignment target dev loss {:.4f} (tolerance {:.3g}%)\n", out.target,
                       100 * config.sweep.align_tolerance);

    std::string csv = "ratio,outer_ffn_contribution,ood_loss,dev_loss,step,aligned,relative_residual\n";
    std::vector<double> xs, ys;
    for (const auto& r : config.sweep.ratios) {
        const std::string name = ratio_dir_name(r);
        SweepRow row;
        row.ratio = r;
        auto it = alignments.find(name);
        if (it == alignments.end()) {
            log << fmt::format("ratio {}: no evaluated checkpoint, excluded\n", r.to_string());
            csv += fmt::format("{},,,,,false,\n", r.to_string());
            out.rows.push_back(row);
            continue;
        }
        row.alignment = it->second;
        const train::Checkpoint ck = reproduce_step(configs[name], data, out.dir / name, row.alignment.step);
        train::write_checkpoint(out.dir / name / "aligned.ckpt", ck);
        arch::Model model(ck.spec, ck.params);
        row.outer_ffn_contribution = analyze_model(model, config, data, analysis::Metric::Tp).report.ffn_ratio;
        const auto ood = selected_ood_losses(model, config, data);
        if (!ood.empty()) {
            double sum = 0.0;
            for (const auto& [d, l] : ood) sum += l;
            row.ood_loss = sum / static_cast<double>(ood.size());
        }
        // Only the final full checkpoint stays on disk.
        const fs::path last = out.dir / name / "checkpoints" / train::checkpoint_filename(curves[name].back().step);
        for (const auto& entry : fs::directory_iterator(out.dir / name / "checkpoints")) {
            if (entry.path() != last) fs::remove(entry.path());
        }
        log << fmt::format("ratio {}: step {} dev {:.4f} residual {:.3g}%{} outer-FFN TP share {:.4f}{}\n",
                           r.to_string(), row.alignment.step, row.alignment.dev_loss,
                           100 * row.alignment.relative_residual, row.alignment.accepted ? "" : " (not aligned, excluded)",
                           row.outer_ffn_contribution, row.ood_loss ? fmt::format(" ood {:.4f}", *row.ood_loss) : "");
        csv += fmt::format("{},{:.6g},{},{:.6g},{},{},{:.6g}\n", r.to_string(), row.outer_ffn_contribution,
                           row.ood_loss ? num(*row.ood_loss) : "", row.alignment.dev_loss, row.alignment.step,
                           row.alignment.accepted ? "true" : "false", row.alignment.relative_residual);
        if (row.alignment.accepted) {
            xs.push_back(r.value());
            ys.push_back(row.outer_ffn_contribution);
        }
        out.rows.push_back(row);
    }
    out.spearman = spearman(xs, ys);
    write_text(out.dir / "sweep.csv", csv);

    std::vector<std::string> labels;
    analysis::SvgSeries contrib{"outer-FFN TP share", {}}, ood{"OOD loss", {}};
    for (const auto& row : out.rows) {
        if (!row.alignment.accepted) continue;
        labels.push_back(row.ratio.to_string());
        contrib.values.push_back(row.outer_ffn_contribution);
        if (row.ood_loss) ood.values.push_back(*row.ood_loss);
    }
    write_text(out.dir / "sweep_contribution.svg",
               analysis::line_chart_svg("outer-FFN contribution vs outer ratio", {contrib}, labels));
    if (ood.values.size() == labels.size() && !labels.empty()) {
        write_text(out.dir / "sweep_ood.svg", analysis::line_chart_svg("OOD loss vs outer ratio", {ood}, labels));
    }
    Summary summary = {{"kind", "sweep"}, {"target", num(out.target)}, {"aligned_runs", std::to_string(xs.size())}};
    if (out.spearman) {
        summary.push_back({"spearman", num(*out.spearman)});
        log << fmt::format("Spearman(ratio, outer-FFN share) = {:.4f}\n", *out.spearman);
    } else {
        log << "trend statistics: not available (fewer than two aligned ratios)\n";
    }
    write_summary(out.dir, summary);
    return out;
}

fs::path cmd_analyze(const fs::path& checkpoint, analysis::Metric metric, const RunConfig& config,
                     const fs::path& out_root, std::ostream& log, bool save_trace) {
    LoadedModel lm = load_model(checkpoint, config);
    const AnalysisOutcome res = analyze_model(lm.model, config, lm.data, metric);
    const fs::path dir = next_run_dir(out_root, "analyze");
    analysis::write_report_csv(dir / "report.csv", res.report);
    write_text(dir / "report.svg", analysis::contribution_svg(res.report));
    if (save_trace) analysis::write_trace(dir / "trace.bin", res.trace);
    const std::string m = analysis::to_string(metric);
    write_summary(dir, {{"kind", "analyze"},
                        {"run", source_run(checkpoint).string()},
                        {"checkpoint_step", std::to_string(lm.checkpoint.step)},
                        {"samples", std::to_string(res.trace.samples())},
                        {m + "_ffn_ratio", num(res.report.ffn_ratio)},
                        {m + "_mha_ratio", num(res.report.mha_ratio)}});
    log << fmt::format("{} over {} samples: FFN share {:.4f}, MHA share {:.4f}\n", m, res.trace.samples(),
                       res.report.ffn_ratio, res.report.mha_ratio);
    log << "wrote " << dir.string() << "\n";
    return dir;
}

fs::path cmd_eval(const fs::path& checkpoint, const std::string& which, const RunConfig& config,
                  const fs::path& out_root, std::ostream& log) {
    if (which != "ood" && which != "fewshot") {
        throw ConfigError(fmt::format("eval: unknown evaluation '{}' (ood, fewshot)", which));
    }
    LoadedModel lm = load_model(checkpoint, config);
    if (which == "ood") {
        const auto losses = selected_ood_losses(lm.model, config, lm.data);
        if (losses.empty()) {
            log << "OOD evaluation disabled: no OOD domains selected\n";
            return {};
        }
        const fs::path dir = next_run_dir(out_root, "eval");
        std::string csv = "domain,loss\n";
        Summary summary = {{"kind", "eval"}, {"run", source_run(checkpoint).string()}};
        double sum = 0.0;
        for (const auto& [d, l] : losses) {
            csv += fmt::format("{},{:.6g}\n", d, l);
            summary.push_back({"ood." + d, num(l)});
            log << fmt::format("{}: {:.4f}\n", d, l);
            sum += l;
        }
        summary.push_back({"ood_loss", num(sum / static_cast<double>(losses.size()))});
        write_text(dir / "ood.csv", csv);
        write_summary(dir, summary);
        return dir;
    }

    if (config.eval.mcq_tasks.empty()) throw ConfigError("eval.mcq_tasks: required for few-shot evaluation");
    const auto tasks = eval::read_tasks_jsonl(config.resolve(config.eval.mcq_tasks));
    std::vector<eval::McqTask> demos;
    if (!config.eval.mcq_demos.empty()) demos = eval::read_tasks_jsonl(config.resolve(config.eval.mcq_demos));
    eval::FewShotConfig fewshot = eval::fewshot_preset(config.eval.fewshot);
    fewshot.seed = config.seed;
    eval::ScoringMode mode;
    std::string grid;
    if (config.eval.scoring == "best") {
        if (config.eval.mcq_dev.empty()) throw ConfigError("eval.mcq_dev: required when eval.scoring = best");
        const auto dev = eval::read_tasks_jsonl(config.resolve(config.eval.mcq_dev));
        const eval::ModeSelection sel = eval::select_best_mode(lm.model, lm.data.tokenizer, dev, fewshot, demos);
        mode = sel.mode;
        grid = "mode,dev_accuracy\n";
        for (const auto& r : sel.grid) grid += fmt::format("{},{:.6g}\n", r.mode.name(), r.accuracy);
        log << "selected scoring mode: " << mode.name() << "\n";
    } else {
        mode = eval::parse_scoring_mode(config.eval.scoring);
    }
    const eval::McqResult res = eval::evaluate_mcq(lm.model, lm.data.tokenizer, tasks, mode, fewshot, demos);
    const fs::path dir = next_run_dir(out_root, "eval");
    if (!grid.empty()) write_text(dir / "mode_grid.csv", grid);
    std::string per;
    for (double a : res.per_repeat) per += (per.empty() ? "" : ";") + num(a);
    write_text(dir / "mcq.csv", fmt::format("mode,k_shots,repeats,accuracy,per_repeat,skipped\n{},{},{},{:.6g},{},{}\n",
                                            mode.name(), fewshot.k_shots, fewshot.repeats, res.accuracy, per,
                                            res.skipped));
    write_text(dir / "predictions.csv", eval::predictions_csv(tasks, res));
    write_summary(dir, {{"kind", "eval"},
                        {"run", source_run(checkpoint).string()},
                        {"mcq_accuracy", num(res.accuracy)},
                        {"mcq_mode", mode.name()},
                        {"mcq_fewshot", config.eval.fewshot}});
    log << fmt::format("{}-shot accuracy {:.4f} over {} tasks x {} repeats ({} skipped)\n", fewshot.k_shots,
                       res.accuracy, tasks.size(), fewshot.repeats, res.skipped);
    return dir;
}

fs::path cmd_align(const std::vector<fs::path>& run_dirs, const std::string& target, double tolerance,
                   const fs::path& out_root, std::ostream& log) {
    if (run_dirs.empty()) throw ConfigError("align: no run directories given");
    std::map<std::string, train::LossCurve> curves;
    for (const auto& d : run_dirs) {
        const std::string name = fs::absolute(d).lexically_normal().string();
        curves[name] = train::read_loss_csv(d / "loss.csv");
    }
    double t = 0.0;
    if (target == "worst") {
        t = train::default_alignment_target(curves);
    } else {
        try {
            t = std::stod(target);
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("--target: expected 'worst' or a loss value, got '{}'", target));
        }
    }
    const auto alignments = train::align_checkpoints(curves, t, tolerance);
    const fs::path dir = next_run_dir(out_root, "align");
    std::string csv = "run,step,dev_loss,residual,relative_residual,accepted\n";
    for (const auto& [run, a] : alignments) {
        csv += fmt::format("{},{},{:.6g},{:.6g},{:.6g},{}\n", run, a.step, a.dev_loss, a.residual, a.relative_residual,
                           a.accepted ? "true" : "false");
        log << fmt::format("{}: step {} dev {:.4f} ({:.3g}% off target){}\n", run, a.step, a.dev_loss,
                           100 * a.relative_residual, a.accepted ? "" : " REJECTED");
    }
    write_text(dir / "alignment.csv", csv);
    write_summary(dir, {{"kind", "align"}, {"target", num(t)}, {"tolerance", num(tolerance)}});
    train::require_aligned(alignments, tolerance);
    return dir;
}

std::vector<ReportRow> collect_report(const std::vector<fs::path>& dirs) {
    std::vector<ReportRow> rows;
    auto row_for = [&](const std::string& run) -> ReportRow& {
        for (auto& r : rows) {
            if (r.run == run) return r;
        }
        rows.push_back({run, {}});
        return rows.back();
    };
    for (const auto& d : dirs) {
        const auto s = read_summary(d);
        auto kind = s.find("kind");
        auto run = s.find("run");
        if (kind == s.end() || run == s.end()) continue;
        ReportRow& row = row_for(fs::path(run->second).lexically_normal().string());
        for (const auto& [k, v] : s) {
            if (k != "kind" && k != "run") row.values[k] = v;
        }
    }
    return rows;
}

fs::path cmd_report(const std::vector<fs::path>& dirs, const fs::path& out_root, std::ostream& log) {
    if (dirs.empty()) throw ConfigError("report: no directories given");
    const auto rows = collect_report(dirs);
    const std::vector<std::string> cols = {"arch",        "params",      "dev_loss",     "mi_ffn_ratio",
                                           "tp_ffn_ratio", "ood_loss",    "mcq_accuracy"};
    std::string csv = "run";
    std::string md = "| run |";
    std::string rule = "|---|";
    for (const auto& c : cols) {
        csv += "," + c;
        md += " " + c + " |";
        rule += "---|";
    }
    csv += "\n";
    md += "\n" + rule + "\n";
    for (const auto& r : rows) {
        const std::string name = fs::path(r.run).filename().string();
        csv += name;
        md += "| " + name + " |";
        for (const auto& c : cols) {
            auto it = r.values.find(c);
            const std::string v = it == r.values.end() ? "-" : it->second;
            csv += "," + v;
            md += " " + v + " |";
        }
        csv += "\n";
        md += "\n";
    }
    const fs::path dir = next_run_dir(out_root, "report");
    write_text(dir / "comparison.csv", csv);
    write_text(dir / "comparison.md", md);
    log << md;
    return dir;
}

}  // namespace combolab::cli
