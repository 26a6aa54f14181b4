#include "combolab/eval/mcq.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace combolab::eval {

namespace {

using json = nlohmann::json;

std::vector<int> concat(std::initializer_list<const std::vector<int>*> parts) {
    std::vector<int> out;
    for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
    return out;
}

// Log-probability of every token after the first, per sequence.
std::vector<std::vector<double>> sequence_logprobs(arch::Model& model, const std::vector<std::vector<int>>& seqs) {
    std::size_t len = 0;
    for (const auto& s : seqs) len = std::max(len, s.size());
    arch::TokenGrid grid{seqs.size(), len, std::vector<int>(seqs.size() * len, data::kPad)};
    for (std::size_t r = 0; r < seqs.size(); ++r) std::copy(seqs[r].begin(), seqs[r].end(), grid.ids.begin() + r * len);
    core::Tape tape(false);
    const core::Tensor& logits = arch::forward(model, tape, grid).logits.value();
    const std::size_t vocab = logits.cols();
    std::vector<std::vector<double>> out(seqs.size());
    for (std::size_t r = 0; r < seqs.size(); ++r) {
        for (std::size_t t = 1; t < seqs[r].size(); ++t) {
            const double* row = logits.data() + (r * len + t - 1) * vocab;
            const double mx = *std::max_element(row, row + vocab);
            double z = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
            out[r].push_back(row[seqs[r][t]] - mx - std::log(z));
        }
    }
    return out;
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

McqTask task_from_json(const json& j) {
    McqTask t;
    t.id = j.value("id", std::string());
    t.context = j.at("context").get<std::string>();
    t.options = j.at("options").get<std::vector<std::string>>();
    t.answer_index = j.at("answer_index").get<std::size_t>();
    t.unconditional_context = j.value("unconditional_context", std::string(kDefaultUnconditionalContext));
    return t;
}

}  // namespace

void McqTask::validate() const {
    const std::string label = id.empty() ? "task" : fmt::format("task '{}'", id);
    if (options.size() < 2) throw std::invalid_argument(fmt::format("{}: needs at least 2 options", label));
    if (answer_index >= options.size()) {
        throw std::invalid_argument(
            fmt::format("{}: answer_index {} out of range for {} options", label, answer_index, options.size()));
    }
    for (const auto& o : options) {
        if (o.empty()) throw std::invalid_argument(fmt::format("{}: empty option text", label));
    }
}

std::vector<McqTask> read_tasks_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open task file '{}'", path.string()));
    std::vector<McqTask> tasks;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            McqTask t = task_from_json(json::parse(line));
            if (t.id.empty()) t.id = std::to_string(tasks.size());
            t.validate();
            tasks.push_back(std::move(t));
        } catch (const std::exception& e) {
            throw std::runtime_error(fmt::format("{}:{}: {}", path.string(), n, e.what()));
        }
    }
    return tasks;
}

void write_tasks_jsonl(const std::filesystem::path& path, const std::vector<McqTask>& tasks) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    for (const auto& t : tasks) {
        json j = {{"id", t.id}, {"context", t.context}, {"options", t.options}, {"answer_index", t.answer_index}};
        if (t.unconditional_context != kDefaultUnconditionalContext) j["unconditional_context"] = t.unconditional_context;
        out << j.dump() << '\n';
    }
}

std::string ScoringMode::name() const {
    std::string n = span == Span::OptionOnly ? "option" : "full";
    if (length_norm) n += "+len";
    if (unconditional_norm) n += "+uncond";
    return n;
}

ScoringMode parse_scoring_mode(std::string_view name) {
    for (const auto& m : scoring_grid()) {
        if (m.name() == name) return m;
    }
    throw std::invalid_argument(fmt::format("unknown scoring mode '{}'", name));
}

std::vector<ScoringMode> scoring_grid() {
    return {
        {Span::OptionOnly, false, false}, {Span::OptionOnly, true, false}, {Span::FullSequence, false, false},
        {Span::FullSequence, true, false}, {Span::OptionOnly, false, true}, {Span::OptionOnly, true, true},
    };
}

void FewShotConfig::validate() const {
    if (repeats < 1) throw std::invalid_argument("fewshot.repeats: must be at least 1");
}

FewShotConfig one_shot_preset() { return {1, 10, 0, true}; }
FewShotConfig five_shot_preset() { return {5, 5, 0, true}; }

FewShotConfig fewshot_preset(std::string_view name) {
    if (name == "zero") return {};
    if (name == "one") return one_shot_preset();
    if (name == "five") return five_shot_preset();
    throw std::invalid_argument(fmt::format("unknown few-shot preset '{}' (expected zero, one or five)", name));
}

std::vector<OptionLogProbs> option_logprobs(arch::Model& model, const data::Tokenizer& tokenizer,
                                            const std::vector<const McqTask*>& demos, const McqTask& task,
                                            bool need_unconditional) {
    if (!model.spec().causal()) throw std::invalid_argument("multiple-choice scoring needs a causal model");
    const std::vector<int> bos = {data::kBos};
    std::vector<int> prefix;
    for (const McqTask* d : demos) {
        const auto ctx = tokenizer.encode(d->context), opt = tokenizer.encode(d->options[d->answer_index]);
        prefix = concat({&prefix, &bos, &ctx, &opt});
    }
    const auto ctx = tokenizer.encode(task.context);
    const auto uncond = tokenizer.encode(task.unconditional_context);
    prefix = concat({&prefix, &bos, &ctx});

    std::vector<std::vector<int>> seqs;
    std::vector<std::size_t> option_len;
    for (const auto& o : task.options) {
        const auto opt = tokenizer.encode(o);
        option_len.push_back(opt.size());
        seqs.push_back(concat({&prefix, &opt}));
        if (need_unconditional) seqs.push_back(concat({&bos, &uncond, &opt}));
    }
    const std::size_t max_seq = model.spec().max_seq;
    for (const auto& s : seqs) {
        if (s.size() > max_seq) {
            throw std::length_error(fmt::format("prompt of {} tokens exceeds max_seq {}", s.size(), max_seq));
        }
    }
    const auto lp = sequence_logprobs(model, seqs);
    const std::size_t stride = need_unconditional ? 2 : 1;
    std::vector<OptionLogProbs> out(task.options.size());
    for (std::size_t i = 0; i < task.options.size(); ++i) {
        const auto& cond = lp[i * stride];
        const std::size_t opt_begin = cond.size() - option_len[i];
        const std::size_t ctx_begin = opt_begin - ctx.size();
        out[i].context.assign(cond.begin() + static_cast<std::ptrdiff_t>(ctx_begin),
                              cond.begin() + static_cast<std::ptrdiff_t>(opt_begin));
        out[i].option.assign(cond.begin() + static_cast<std::ptrdiff_t>(opt_begin), cond.end());
        if (need_unconditional) {
            const auto& u = lp[i * stride + 1];
            out[i].unconditional.assign(u.end() - static_cast<std::ptrdiff_t>(option_len[i]), u.end());
        }
    }
    return out;
}

double mode_score(const OptionLogProbs& lp, const ScoringMode& mode) {
    if (!mode.valid()) throw std::invalid_argument(fmt::format("invalid scoring mode '{}'", mode.name()));
    double score = sum(lp.option);
    std::size_t count = lp.option.size();
    if (mode.span == Span::FullSequence) {
        score += sum(lp.context);
        count += lp.context.size();
    }
    if (mode.unconditional_norm) score -= sum(lp.unconditional);
    if (mode.length_norm) score /= static_cast<double>(count);
    return score;
}

double score_option(arch::Model& model, const data::Tokenizer& tokenizer, const std::string& context,
                    const std::string& option, const ScoringMode& mode, const std::string& unconditional_context) {
    // A second throwaway option keeps the task well formed.
    McqTask task{"", context, {option, option}, 0, unconditional_context};
    return mode_score(option_logprobs(model, tokenizer, {}, task, mode.unconditional_norm)[0], mode);
}

std::size_t argmax_option(const std::vector<double>& scores) {
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<McqResult> evaluate_mcq_grid(arch::Model& model, const data::Tokenizer& tokenizer,
                                         const std::vector<McqTask>& tasks, const std::vector<ScoringMode>& modes,
                                         const FewShotConfig& fewshot, const std::vector<McqTask>& demo_pool) {
    fewshot.validate();
    if (tasks.empty()) throw std::invalid_argument("evaluate_mcq: no tasks");
    if (fewshot.k_shots > demo_pool.size()) {
        throw std::invalid_argument(
            fmt::format("fewshot.k_shots: {} demos requested from a pool of {}", fewshot.k_shots, demo_pool.size()));
    }
    std::set<std::pair<std::string, std::vector<std::string>>> task_keys;
    for (const auto& t : tasks) {
        t.validate();
        task_keys.insert({t.context, t.options});
    }
    for (const auto& d : demo_pool) {
        d.validate();
        if (task_keys.contains({d.context, d.options})) {
            throw std::invalid_argument(fmt::format("demo '{}' also appears among the evaluated tasks", d.id));
        }
    }
    bool need_uncond = false;
    for (const auto& m : modes) {
        if (!m.valid()) throw std::invalid_argument(fmt::format("invalid scoring mode '{}'", m.name()));
        need_uncond = need_uncond || m.unconditional_norm;
    }

    std::vector<McqResult> results(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) results[m].mode = modes[m];
    std::size_t skipped = 0;
    const core::SeededRng root(fewshot.seed, "fewshot");
    for (std::size_t r = 0; r < fewshot.repeats; ++r) {
        core::SeededRng rng = root.substream(std::to_string(r));
        std::vector<std::size_t> picks = rng.sample_indices(demo_pool.size(), fewshot.k_shots);
        if (fewshot.shuffle_demos) rng.shuffle(std::span(picks));
        std::vector<const McqTask*> demos;
        for (std::size_t i : picks) demos.push_back(&demo_pool[i]);

        std::vector<std::size_t> correct(modes.size(), 0);
        std::size_t evaluated = 0;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            std::vector<OptionLogProbs> lp;
            try {
                lp = option_logprobs(model, tokenizer, demos, tasks[t], need_uncond);
            } catch (const std::length_error&) {
                ++skipped;
                continue;
            }
            ++evaluated;
            for (std::size_t m = 0; m < modes.size(); ++m) {
                std::vector<double> scores;
                for (const auto& o : lp) scores.push_back(mode_score(o, modes[m]));
                const std::size_t pred = argmax_option(scores);
                const bool ok = pred == tasks[t].answer_index;
                correct[m] += ok;
                results[m].predictions.push_back({t, r, pred, ok});
            }
        }
        for (std::size_t m = 0; m < modes.size(); ++m) {
            results[m].per_repeat.push_back(evaluated == 0 ? 0.0 : static_cast<double>(correct[m]) / evaluated);
        }
    }
    const std::size_t prompts = tasks.size() * fewshot.repeats;
    if (10 * skipped > prompts) {
        throw McqRunError(fmt::format("{} of {} prompts exceed the model's max_seq ({} tokens); more than 10% skipped",
                                      skipped, prompts, model.spec().max_seq));
    }
    for (auto& res : results) {
        res.skipped = skipped;
        res.accuracy = sum(res.per_repeat) / static_cast<double>(res.per_repeat.size());
    }
    return results;
}

McqResult evaluate_mcq(arch::Model& model, const data::Tokenizer& tokenizer, const std::vector<McqTask>& tasks,
                       const ScoringMode& mode, const FewShotConfig& fewshot,
                       const std::vector<McqTask>& demo_pool) {
    return evaluate_mcq_grid(model, tokenizer, tasks, {mode}, fewshot, demo_pool).front();
}

ModeSelection select_best_mode(arch::Model& model, const data::Tokenizer& tokenizer,
                               const std::vector<McqTask>& dev_tasks, const FewShotConfig& fewshot,
                               const std::vector<McqTask>& demo_pool) {
    ModeSelection sel;
    sel.grid = evaluate_mcq_grid(model, tokenizer, dev_tasks, scoring_grid(), fewshot, demo_pool);
    std::size_t best = 0;
    for (std::size_t m = 1; m < sel.grid.size(); ++m) {
        if (sel.grid[m].accuracy > sel.grid[best].accuracy) best = m;
    }
    sel.mode = sel.grid[best].mode;
    return sel;
}

std::string predictions_csv(const std::vector<McqTask>& tasks, const McqResult& result) {
    std::string out = "task_id,repeat,predicted,correct,span,length_norm,unconditional_norm\n";
    const char* span = result.mode.span == Span::OptionOnly ? "option_only" : "full_sequence";
    for (const auto& p : result.predictions) {
        out += fmt::format("{},{},{},{},{},{},{}\n", tasks[p.task].id, p.repeat, p.predicted, p.correct ? 1 : 0, span,
                           result.mode.length_norm ? 1 : 0, result.mode.unconditional_norm ? 1 : 0);
    }
    return out;
}

}  // namespace combolab::eval
