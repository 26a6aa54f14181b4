#include "combolab/cli/commands.hpp"
#include "combolab/toy/toy.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace combolab;

namespace {

struct Globals {
    std::string config;
    std::string preset;
    std::string out;
    std::optional<std::uint64_t> seed;
};

cli::RunConfig load(const Globals& g) {
    cli::RunConfig base = cli::run_preset(g.preset.empty() ? "desk" : g.preset);
    cli::RunConfig c = g.config.empty() ? base : cli::load_config(g.config, base);
    if (g.seed) c.seed = *g.seed;
    return c;
}

fs::path out_root(const Globals& g, const cli::RunConfig& c) {
    if (!g.out.empty()) return g.out;
    if (const char* env = std::getenv("COMBOLAB_OUT"); env && *env) return env;
    return c.output_dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"combolab: FFN/MHA combination experiments at desk scale"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "key = value run configuration");
    app.add_option("--preset", g.preset, "desk, paper-small, paper-large or moe-desk")
        ->check(CLI::IsMember({"desk", "paper-small", "paper-large", "moe-desk"}));
    app.add_option("--out", g.out, "output root (overrides COMBOLAB_OUT and output_dir)");
    app.add_option("--seed", g.seed, "run seed");

    auto* pretrain = app.add_subcommand("pretrain", "train one model");
    auto* sweep = app.add_subcommand("sweep", "train CAA over outer ratios and report the trend");

    std::string checkpoint, method = "tp", which = "ood";
    bool save_trace = false;
    auto* analyze = app.add_subcommand("analyze", "MI or TP contribution analysis of a checkpoint");
    analyze->add_option("checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    analyze->add_option("--method", method, "mi or tp")->check(CLI::IsMember({"mi", "tp"}));
    analyze->add_flag("--save-trace", save_trace, "also write the activation trace");

    auto* evaluate = app.add_subcommand("eval", "OOD loss or few-shot multiple choice");
    evaluate->add_option("checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--which", which, "ood or fewshot")->check(CLI::IsMember({"ood", "fewshot"}));

    std::vector<std::string> dirs;
    std::string target = "worst";
    double tolerance = train::kDefaultAlignmentTolerance;
    auto* align = app.add_subcommand("align", "pick loss-aligned checkpoints across runs");
    align->add_option("runs", dirs, "pretrain run directories")->required()->check(CLI::ExistingDirectory);
    align->add_option("--target", target, "'worst' or a dev loss value");
    align->add_option("--tolerance", tolerance, "relative residual limit");

    auto* report = app.add_subcommand("report", "merge run summaries into a comparison table");
    report->add_option("dirs", dirs, "output directories")->required()->check(CLI::ExistingDirectory);

    std::string toy_dir = "data/toy";
    std::uint64_t toy_seed = 7;
    auto* gen_toy = app.add_subcommand("gen-toy", "write the toy corpus and multiple-choice tasks");
    gen_toy->add_option("dir", toy_dir, "destination directory");
    gen_toy->add_option("--toy-seed", toy_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_toy->parsed()) {
            toy::ToyOptions o;
            o.seed = toy_seed;
            const fs::path manifest = toy::write(toy::generate(o), toy_dir);
            std::cout << "wrote " << manifest.string() << "\n";
            return 0;
        }
        if (report->parsed()) {
            const cli::RunConfig c = load(g);
            cli::cmd_report({dirs.begin(), dirs.end()}, out_root(g, c), std::cout);
            return 0;
        }
        if (align->parsed()) {
            const cli::RunConfig c = load(g);
            cli::cmd_align({dirs.begin(), dirs.end()}, target, tolerance, out_root(g, c), std::cout);
            return 0;
        }
        const cli::RunConfig c = load(g);
        if (pretrain->parsed()) {
            const auto outcome = cli::cmd_pretrain(c, out_root(g, c), std::cout);
            return outcome.result.diverged ? 1 : 0;
        }
        if (sweep->parsed()) {
            cli::cmd_sweep(c, out_root(g, c), std::cout);
            return 0;
        }
        if (analyze->parsed()) {
            c.validate();
            cli::cmd_analyze(checkpoint, analysis::parse_metric(method), c, out_root(g, c), std::cout, save_trace);
            return 0;
        }
        if (evaluate->parsed()) {
            c.validate();
            cli::cmd_eval(checkpoint, which, c, out_root(g, c), std::cout);
            return 0;
        }
    } catch (const cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
