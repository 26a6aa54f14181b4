#include "combolab/cli/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "combolab/eval/mcq.hpp"

namespace combolab::cli {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& field, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", field, v));
    }
    return out;
}

double to_double(const std::string& field, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", field, v));
}

std::string join_ratios(const std::vector<arch::Ratio>& ratios) {
    std::string out;
    for (const auto& r : ratios) out += (out.empty() ? "" : ",") + r.to_string();
    return out;
}

std::vector<arch::Ratio> parse_ratios(const std::string& v) {
    std::vector<arch::Ratio> out;
    std::istringstream in(v);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            out.push_back(arch::Ratio::parse(trim(part)));
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("sweep.ratios: {}", e.what()));
        }
    }
    if (out.empty()) throw ConfigError("sweep.ratios: empty list");
    return out;
}

struct Entry {
    std::string value;
    std::size_t line;
};

using Section = std::vector<std::pair<std::string, Entry>>;

void set_top(RunConfig& c, const std::string& key, const std::string& v) {
    if (key == "schema_version") {
        const auto ver = to_u64(key, v);
        if (ver != kSchemaVersion) {
            throw ConfigError(fmt::format("schema_version: {} is not supported (expected {})", ver, kSchemaVersion));
        }
        c.schema_version = static_cast<int>(ver);
    } else if (key == "seed") {
        c.seed = to_u64(key, v);
    } else if (key == "output_dir") {
        c.output_dir = v;
    } else {
        throw ConfigError(fmt::format("{}: unknown key", key));
    }
}

void set_data(DataConfig& d, const std::string& key, const std::string& v) {
    if (key == "manifest") d.manifest = v;
    else if (key == "dev_fraction") d.dev_fraction = to_double("data.dev_fraction", v);
    else if (key == "tokenizer") d.tokenizer = v;
    else if (key == "word_list") d.word_list = v;
    else throw ConfigError(fmt::format("data.{}: unknown key", key));
}

void set_analysis(AnalysisConfig& a, const std::string& key, const std::string& v) {
    const std::string f = "analysis." + key;
    if (key == "k") a.k = to_u64(f, v);
    else if (key == "sample_budget") a.sample_budget = to_u64(f, v);
    else if (key == "min_count") a.min_count = to_u64(f, v);
    else if (key == "kmeans_batch") a.kmeans_batch = to_u64(f, v);
    else if (key == "kmeans_passes") a.kmeans_passes = to_u64(f, v);
    else if (key == "trace_seed") a.trace_seed = to_u64(f, v);
    else throw ConfigError(fmt::format("{}: unknown key", f));
}

void set_eval(EvalConfig& e, const std::string& key, const std::string& v) {
    if (key == "ood") e.ood = v;
    else if (key == "ood_max_rows") e.ood_max_rows = to_u64("eval.ood_max_rows", v);
    else if (key == "mcq_tasks") e.mcq_tasks = v;
    else if (key == "mcq_dev") e.mcq_dev = v;
    else if (key == "mcq_demos") e.mcq_demos = v;
    else if (key == "fewshot") e.fewshot = v;
    else if (key == "scoring") e.scoring = v;
    else throw ConfigError(fmt::format("eval.{}: unknown key", key));
}

void set_sweep(SweepConfig& s, const std::string& key, const std::string& v) {
    if (key == "ratios") s.ratios = parse_ratios(v);
    else if (key == "align_tolerance") s.align_tolerance = to_double("sweep.align_tolerance", v);
    else if (key == "align_target") s.align_target = v;
    else if (key == "parallelism") s.parallelism = to_u64("sweep.parallelism", v);
    else throw ConfigError(fmt::format("sweep.{}: unknown key", key));
}

void check_path(const RunConfig& c, const std::string& field, const std::string& value) {
    if (value.empty()) return;
    if (!std::filesystem::exists(c.resolve(value))) {
        throw ConfigError(fmt::format("{}: '{}' does not exist", field, c.resolve(value).string()));
    }
}

}  // namespace

AnalysisConfig analysis_preset(std::string_view name) {
    AnalysisConfig a;
    if (name == "desk") return a;
    if (name == "paper") {
        a.k = 2000;
        a.sample_budget = 6940000;
        a.min_count = 50;
        return a;
    }
    throw ConfigError(fmt::format("analysis.preset: unknown preset '{}' (desk, paper)", name));
}

std::vector<arch::Ratio> default_sweep_ratios() {
    return {{1, 1}, {7, 8}, {3, 4}, {5, 8}, {1, 2}, {3, 8}, {1, 4}, {1, 8}, {0, 1}};
}

RunConfig run_preset(std::string_view name) {
    RunConfig c;
    c.sweep.ratios = default_sweep_ratios();
    if (name == "desk" || name == "moe-desk") {
        c.arch = arch::arch_preset(name);
        return c;
    }
    if (name == "paper-small" || name == "paper-large") {
        c.arch = arch::arch_preset(name);
        c.train = train::train_preset("paper");
        c.analysis = analysis_preset("paper");
        c.eval.fewshot = "one";
        return c;
    }
    throw ConfigError(fmt::format("unknown preset '{}' (desk, paper-small, paper-large, moe-desk)", name));
}

std::filesystem::path RunConfig::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base_dir / p;
}

void RunConfig::validate() const {
    try {
        arch.validate();
    } catch (const std::exception& e) {
        throw ConfigError(fmt::format("arch: {}", e.what()));
    }
    try {
        train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (arch.max_seq < train.seq) {
        throw ConfigError(fmt::format("train.seq: {} exceeds arch.max_seq {}", train.seq, arch.max_seq));
    }
    if (data.manifest.empty()) throw ConfigError("data.manifest: required");
    check_path(*this, "data.manifest", data.manifest);
    if (!(data.dev_fraction > 0.0 && data.dev_fraction < 1.0)) {
        throw ConfigError(fmt::format("data.dev_fraction: {} is outside (0, 1)", data.dev_fraction));
    }
    if (data.tokenizer != "byte" && data.tokenizer != "char" && data.tokenizer != "word-list") {
        throw ConfigError(fmt::format("data.tokenizer: unknown mode '{}' (byte, char, word-list)", data.tokenizer));
    }
    if (data.tokenizer == "word-list" && data.word_list.empty()) {
        throw ConfigError("data.word_list: required by the word-list tokenizer");
    }
    check_path(*this, "data.word_list", data.word_list);
    if (analysis.k == 0) throw ConfigError("analysis.k: must be positive");
    if (analysis.sample_budget == 0) throw ConfigError("analysis.sample_budget: must be positive");
    if (analysis.min_count == 0) throw ConfigError("analysis.min_count: must be positive");
    if (analysis.kmeans_batch == 0) throw ConfigError("analysis.kmeans_batch: must be positive");
    check_path(*this, "eval.mcq_tasks", eval.mcq_tasks);
    check_path(*this, "eval.mcq_dev", eval.mcq_dev);
    check_path(*this, "eval.mcq_demos", eval.mcq_demos);
    if (eval.fewshot != "zero" && eval.fewshot != "one" && eval.fewshot != "five") {
        throw ConfigError(fmt::format("eval.fewshot: unknown preset '{}' (zero, one, five)", eval.fewshot));
    }
    if (eval.scoring != "best") {
        try {
            eval::parse_scoring_mode(eval.scoring);
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("eval.scoring: {}", e.what()));
        }
    }
    if (!(sweep.align_tolerance > 0.0)) throw ConfigError("sweep.align_tolerance: must be positive");
    if (sweep.align_target != "worst") to_double("sweep.align_target", sweep.align_target);
    if (sweep.parallelism == 0) throw ConfigError("sweep.parallelism: must be at least 1");
    for (const auto& r : sweep.ratios) {
        arch::ArchSpec s = arch;
        s.variant = arch::Variant::Caa;
        s.outer_ratio = r;
        try {
            s.validate();
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("sweep.ratios: {}", e.what()));
        }
    }
    if (output_dir.empty()) throw ConfigError("output_dir: required");
}

RunConfig parse_config(const std::string& text, const std::string& source, const RunConfig& base) {
    std::map<std::string, Section> sections;
    std::vector<std::string> order;
    std::istringstream in(text);
    std::string raw, current;
    for (std::size_t n = 1; std::getline(in, raw); ++n) {
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(fmt::format("{}:{}: unterminated section header", source, n));
            current = trim(line.substr(1, line.size() - 2));
            static const std::set<std::string> known = {"arch", "train", "data", "analysis", "eval", "sweep"};
            if (!known.contains(current)) throw ConfigError(fmt::format("{}:{}: unknown section [{}]", source, n, current));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, n));
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: missing key", source, n));
        auto& sec = sections[current];
        for (const auto& [k, e] : sec) {
            if (k == key) {
                throw ConfigError(fmt::format("{}:{}: {}{}: duplicate key (first set on line {})", source, n,
                                              current.empty() ? "" : current + ".", key, e.line));
            }
        }
        sec.push_back({key, {value, n}});
    }

    RunConfig c = base;
    auto apply = [&](const std::string& name, auto&& setter) {
        auto it = sections.find(name);
        if (it == sections.end()) return;
        for (const auto& [key, e] : it->second) {
            if (key != "preset") continue;
            try {
                setter(key, e.value);
            } catch (const std::exception& ex) {
                throw ConfigError(fmt::format("{}:{}: {}", source, e.line, ex.what()));
            }
        }
        for (const auto& [key, e] : it->second) {
            if (key == "preset") continue;
            try {
                setter(key, e.value);
            } catch (const std::exception& ex) {
                throw ConfigError(fmt::format("{}:{}: {}", source, e.line, ex.what()));
            }
        }
    };
    apply("", [&](const std::string& k, const std::string& v) { set_top(c, k, v); });
    apply("arch", [&](const std::string& k, const std::string& v) {
        if (k == "preset") {
            c.arch = arch::arch_preset(v);
            return;
        }
        try {
            arch::apply_fields(c.arch, {{k, v}});
        } catch (const std::exception& e) {
            const std::string msg = e.what();
            throw ConfigError(msg.starts_with("arch.") ? msg : fmt::format("arch.{}: {}", k, msg));
        }
    });
    apply("train", [&](const std::string& k, const std::string& v) {
        if (k == "preset") {
            c.train = train::train_preset(v);
            return;
        }
        try {
            train::apply_fields(c.train, {{k, v}});
        } catch (const std::exception& e) {
            const std::string msg = e.what();
            throw ConfigError(msg.starts_with("train.") ? msg : fmt::format("train.{}: {}", k, msg));
        }
    });
    apply("data", [&](const std::string& k, const std::string& v) { set_data(c.data, k, v); });
    apply("analysis", [&](const std::string& k, const std::string& v) {
        if (k == "preset") c.analysis = analysis_preset(v);
        else set_analysis(c.analysis, k, v);
    });
    apply("eval", [&](const std::string& k, const std::string& v) { set_eval(c.eval, k, v); });
    apply("sweep", [&](const std::string& k, const std::string& v) { set_sweep(c.sweep, k, v); });
    return c;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig c = parse_config(buf.str(), path.string(), base);
    c.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return c;
}

std::string serialize_config(const RunConfig& c) {
    std::string out = fmt::format("schema_version = {}\nseed = {}\noutput_dir = {}\n", c.schema_version, c.seed,
                                  c.output_dir);
    out += "\n[arch]\n";
    for (const auto& [k, v] : arch::to_fields(c.arch)) out += fmt::format("{} = {}\n", k, v);
    out += "\n[train]\n";
    for (const auto& [k, v] : train::to_fields(c.train)) out += fmt::format("{} = {}\n", k, v);
    out += fmt::format("\n[data]\nmanifest = {}\ndev_fraction = {}\ntokenizer = {}\n", c.data.manifest,
                       c.data.dev_fraction, c.data.tokenizer);
    if (!c.data.word_list.empty()) out += fmt::format("word_list = {}\n", c.data.word_list);
    const auto& a = c.analysis;
    out += fmt::format(
        "\n[analysis]\nk = {}\nsample_budget = {}\nmin_count = {}\nkmeans_batch = {}\nkmeans_passes = {}\n"
        "trace_seed = {}\n",
        a.k, a.sample_budget, a.min_count, a.kmeans_batch, a.kmeans_passes, a.trace_seed);
    const auto& e = c.eval;
    out += fmt::format("\n[eval]\nood = {}\nood_max_rows = {}\n", e.ood, e.ood_max_rows);
    if (!e.mcq_tasks.empty()) out += fmt::format("mcq_tasks = {}\n", e.mcq_tasks);
    if (!e.mcq_dev.empty()) out += fmt::format("mcq_dev = {}\n", e.mcq_dev);
    if (!e.mcq_demos.empty()) out += fmt::format("mcq_demos = {}\n", e.mcq_demos);
    out += fmt::format("fewshot = {}\nscoring = {}\n", e.fewshot, e.scoring);
    out += fmt::format("\n[sweep]\nratios = {}\nalign_tolerance = {}\nalign_target = {}\nparallelism = {}\n",
                       join_ratios(c.sweep.ratios), c.sweep.align_tolerance, c.sweep.align_target,
                       c.sweep.parallelism);
    return out;
}

}  // namespace combolab::cli
