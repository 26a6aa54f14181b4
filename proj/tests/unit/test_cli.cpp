#include "combolab/cli/commands.hpp"
#include "combolab/cli/config.hpp"
#include "combolab/toy/toy.hpp"

#include <fmt/format.h>
#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

using namespace combolab;
using namespace combolab::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "run.conf").validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

// A small toy corpus in a fresh temporary directory.
struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / fmt::format("combolab_cli_{}", ::testing::UnitTest::GetInstance()->random_seed());
        fs::remove_all(root);
        toy::ToyOptions o;
        o.fauna_docs = 120;
        o.ledger_docs = 20;
        o.weather_docs = 20;
        o.demo_tasks = 8;
        o.dev_tasks = 12;
        o.test_tasks = 20;
        toy::write(toy::generate(o), root / "toy");
    }
    ~Workspace() { fs::remove_all(root); }

    RunConfig config() const {
        RunConfig c = run_preset("desk");
        c.data.manifest = (root / "toy" / "manifest.txt").string();
        c.arch.hidden = 16;
        c.arch.layers = 2;
        c.arch.max_seq = 64;
        c.train.max_steps = 30;
        c.train.warmup_steps = 5;
        c.train.eval_every = 10;
        c.train.batch = 4;
        c.train.seq = 32;
        c.train.eval_rows = 16;
        c.analysis.sample_budget = 500;
        c.analysis.k = 8;
        c.eval.ood_max_rows = 16;
        c.eval.mcq_tasks = (root / "toy" / "mcq_test.jsonl").string();
        c.eval.mcq_dev = (root / "toy" / "mcq_dev.jsonl").string();
        c.eval.mcq_demos = (root / "toy" / "mcq_demo.jsonl").string();
        return c;
    }
};

}  // namespace

TEST(Config, RoundTripIsIdentity) {
    for (const char* preset : {"desk", "paper-small", "paper-large", "moe-desk"}) {
        RunConfig c = run_preset(preset);
        c.data.manifest = "data/x.txt";
        c.train.peak_lr = 3.3e-4;
        c.sweep.align_tolerance = 0.015;
        c.eval.mcq_dev = "dev.jsonl";
        const std::string text = serialize_config(c);
        const RunConfig back = parse_config(text);
        EXPECT_EQ(back, c) << preset;
        EXPECT_EQ(serialize_config(back), text) << preset;
    }
}

TEST(Config, SectionsPresetsAndComments) {
    const RunConfig c = parse_config(
        "seed = 9  # trailing comment\n"
        "[arch]\nlayers = 3\npreset = desk-bert\n"
        "[train]\npreset = paper\nbatch = 8\n"
        "[analysis]\npreset = paper\nk = 100\n"
        "[sweep]\nratios = 1, 1/2, 0\n");
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.arch.family, arch::Family::Bert);
    EXPECT_EQ(c.arch.layers, 3u);  // preset applies first
    EXPECT_EQ(c.train.warmup_steps, 10000u);
    EXPECT_EQ(c.train.batch, 8u);
    EXPECT_EQ(c.analysis.min_count, 50u);
    EXPECT_EQ(c.analysis.k, 100u);
    ASSERT_EQ(c.sweep.ratios.size(), 3u);
    EXPECT_EQ(c.sweep.ratios[1], (arch::Ratio{1, 2}));
}

TEST(Config, ParseErrorsCarryLineNumbers) {
    EXPECT_EQ(error_of("seed = 1\n[train]\nbatch = many\n").rfind("run.conf:3: train.batch", 0), 0u);
    EXPECT_EQ(error_of("[bogus]\n").rfind("run.conf:1: unknown section", 0), 0u);
    EXPECT_EQ(error_of("\n\njust words\n").rfind("run.conf:3:", 0), 0u);
    EXPECT_NE(error_of("[eval]\nflavour = 1\n").find("run.conf:2: eval.flavour: unknown key"), std::string::npos);
    EXPECT_NE(error_of("[arch]\nfamily = rnn\n").find("run.conf:2: arch.family"), std::string::npos);
    EXPECT_NE(error_of("seed = 1\nseed = 2\n").find("run.conf:2: seed: duplicate key"), std::string::npos);
    EXPECT_NE(error_of("schema_version = 2\n").find("schema_version"), std::string::npos);
}

TEST(Config, ValidationNamesTheField) {
    EXPECT_EQ(error_of(""), "data.manifest: required");
    EXPECT_NE(error_of("[data]\nmanifest = /no/such/file\n").find("data.manifest: '/no/such/file' does not exist"),
              std::string::npos);
    Workspace ws;
    RunConfig c = ws.config();
    c.data.tokenizer = "bpe";
    EXPECT_THROW(
        {
            try {
                c.validate();
            } catch (const ConfigError& e) {
                EXPECT_EQ(std::string(e.what()).rfind("data.tokenizer", 0), 0u);
                throw;
            }
        },
        ConfigError);
    c = ws.config();
    c.arch.ffn_mult = 4;
    c.arch.hidden = 16;
    c.sweep.ratios = {{1, 3}};
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("sweep.ratios", 0), 0u) << e.what();
    }
    c = ws.config();
    c.train.seq = 128;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("train.seq", 0), 0u) << e.what();
    }
}

TEST(Config, RelativePathsResolveAgainstConfigFile) {
    Workspace ws;
    std::ofstream(ws.root / "run.conf") << "[data]\nmanifest = toy/manifest.txt\n";
    const RunConfig c = load_config(ws.root / "run.conf");
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.resolve(c.data.manifest), ws.root / "toy" / "manifest.txt");
}

TEST(Spearman, KnownValuesAndTies) {
    EXPECT_NEAR(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-15);
    EXPECT_NEAR(*spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-15);
    // x ranks 1,2,3 ; y ranks 1.5,1.5,3 -> Pearson on ranks.
    const double mx = 2, my = 2;
    const double rx[] = {1, 2, 3}, ry[] = {1.5, 1.5, 3};
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 3; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    EXPECT_NEAR(*spearman({0.1, 0.5, 0.9}, {7, 7, 9}), sxy / std::sqrt(sxx * syy), 1e-15);
    EXPECT_FALSE(spearman({1}, {2}).has_value());
    EXPECT_FALSE(spearman({1, 2}, {3, 3}).has_value());
}

TEST(RunDir, VersionedAndNeverReused) {
    Workspace ws;
    const fs::path a = next_run_dir(ws.root / "out", "pretrain");
    const fs::path b = next_run_dir(ws.root / "out", "pretrain");
    const fs::path c = next_run_dir(ws.root / "out", "sweep");
    EXPECT_EQ(a.filename(), "pretrain-001");
    EXPECT_EQ(b.filename(), "pretrain-002");
    EXPECT_EQ(c.filename(), "sweep-001");
}

TEST(Commands, PretrainIsDeterministicAndVersioned) {
    Workspace ws;
    std::ostringstream log;
    const RunConfig c = ws.config();
    const auto first = cmd_pretrain(c, ws.root / "out", log);
    const auto second = cmd_pretrain(c, ws.root / "out", log);
    EXPECT_NE(first.run_dir, second.run_dir);
    const std::string csv = slurp(first.run_dir / "loss.csv");
    EXPECT_GT(std::count(csv.begin(), csv.end(), '\n'), 1);
    EXPECT_EQ(csv, slurp(second.run_dir / "loss.csv"));
    EXPECT_TRUE(fs::exists(first.run_dir / "checkpoints" / train::checkpoint_filename(30)));
    EXPECT_EQ(parse_config(slurp(first.run_dir / "config.txt")).arch.vocab,
              data::Tokenizer::from_json(slurp(first.run_dir / "tokenizer.json")).size());
}

TEST(Commands, AnalyzeEvalAndReport) {
    Workspace ws;
    std::ostringstream log;
    RunConfig c = ws.config();
    std::vector<fs::path> dirs;
    for (auto variant : {arch::Variant::Vanilla, arch::Variant::FfnWider, arch::Variant::Caa}) {
        RunConfig rc = c;
        rc.arch.variant = variant;
        rc.arch.ffn_mult = variant == arch::Variant::Vanilla ? 4 : 8;
        if (variant == arch::Variant::Caa) rc.arch.outer_ratio = {1, 8};
        dirs.push_back(cmd_pretrain(rc, ws.root / "out", log).run_dir);
    }
    const fs::path ck = dirs[0] / "checkpoints" / train::checkpoint_filename(30);
    const fs::path analyzed = cmd_analyze(ck, analysis::Metric::Tp, c, ws.root / "out", log);
    const std::string report = slurp(analyzed / "report.csv");
    // header + embed + 2 sites per layer + 2 summary rows
    EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 1 + 1 + 2 * 2 + 2);
    EXPECT_TRUE(fs::exists(analyzed / "report.svg"));

    const fs::path ood = cmd_eval(ck, "ood", c, ws.root / "out", log);
    EXPECT_NE(slurp(ood / "ood.csv").find("ledger,"), std::string::npos);
    RunConfig none = c;
    none.eval.ood = "none";
    EXPECT_TRUE(cmd_eval(ck, "ood", none, ws.root / "out", log).empty());
    EXPECT_NE(log.str().find("disabled"), std::string::npos);

    const fs::path mcq = cmd_eval(ck, "fewshot", c, ws.root / "out", log);
    EXPECT_TRUE(fs::exists(mcq / "mode_grid.csv"));
    EXPECT_TRUE(fs::exists(mcq / "predictions.csv"));

    std::vector<fs::path> all = dirs;
    all.push_back(analyzed);
    all.push_back(ood);
    all.push_back(mcq);
    const auto rows = collect_report(all);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].values.at("arch"), "gpt-vanilla(4d)");
    EXPECT_EQ(rows[1].values.at("arch"), "gpt-ffn-wider(8d)");
    EXPECT_EQ(rows[2].values.at("arch"), "gpt-caa(r=1/8)");
    EXPECT_TRUE(rows[0].values.contains("tp_ffn_ratio"));
    EXPECT_TRUE(rows[0].values.contains("ood_loss"));
    EXPECT_TRUE(rows[0].values.contains("mcq_accuracy"));
    const fs::path table = cmd_report(all, ws.root / "out", log);
    const std::string md = slurp(table / "comparison.md");
    EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 2 + 3);
}

TEST(Commands, VersionMismatchedCheckpointRejected) {
    Workspace ws;
    std::ostringstream log;
    const RunConfig c = ws.config();
    const fs::path ck = cmd_pretrain(c, ws.root / "out", log).run_dir / "checkpoints" / train::checkpoint_filename(30);
    {
        std::fstream f(ck, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    EXPECT_THROW(cmd_analyze(ck, analysis::Metric::Tp, c, ws.root / "out", log), train::CheckpointError);
}

TEST(Commands, AlignRefusesOverThreshold) {
    Workspace ws;
    std::ostringstream log;
    const RunConfig c = ws.config();
    const fs::path a = cmd_pretrain(c, ws.root / "out", log).run_dir;
    EXPECT_NO_THROW(cmd_align({a}, "worst", 0.01, ws.root / "out", log));
    EXPECT_THROW(cmd_align({a}, "0.5", 0.01, ws.root / "out", log), train::AlignmentError);
    EXPECT_THROW(cmd_align({a}, "lowest", 0.01, ws.root / "out", log), ConfigError);
}

TEST(Commands, SweepTwoRatiosAndSingleRatio) {
    Workspace ws;
    std::ostringstream log;
    RunConfig c = ws.config();
    c.arch.ffn_mult = 8;
    c.sweep.ratios = {{1, 1}, {0, 1}};
    c.sweep.align_tolerance = 0.2;
    const SweepOutcome two = cmd_sweep(c, ws.root / "out", log);
    ASSERT_EQ(two.rows.size(), 2u);
    for (const auto& r : two.rows) {
        EXPECT_TRUE(r.alignment.accepted);
        EXPECT_TRUE(r.ood_loss.has_value());
    }
    const std::string csv = slurp(two.dir / "sweep.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "ratio,outer_ffn_contribution,ood_loss,dev_loss,step,aligned,relative_residual");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_TRUE(fs::exists(two.dir / "sweep_contribution.svg"));

    c.sweep.ratios = {{1, 2}};
    const SweepOutcome one = cmd_sweep(c, ws.root / "out", log);
    EXPECT_EQ(one.rows.size(), 1u);
    EXPECT_FALSE(one.spearman.has_value());
    EXPECT_NE(log.str().find("trend statistics: not available"), std::string::npos);
}

TEST(Commands, RefinedCurveAndReproducedStepMatchDenseRun) {
    Workspace ws;
    std::ostringstream log;
    RunConfig c = ws.config();
    c.train.checkpoint_every = 10;
    const PreparedData data = prepare_data(c);
    const fs::path dir = ws.root / "coarse";
    const train::LossCurve coarse = pretrain_into(c, data, dir, log).curve;
    ASSERT_EQ(coarse.size(), 3u);

    RunConfig dense_cfg = c;
    dense_cfg.train.eval_every = 1;
    dense_cfg.train.checkpoint_every = 30;
    const train::TrainResult dense = pretrain_into(dense_cfg, data, ws.root / "dense", log, true);

    const train::LossCurve refined = refine_curve(c, data, dir, coarse, coarse[1].dev_loss);
    // Points from step 10 to 30 are all present and equal to the dense run.
    ASSERT_EQ(refined.size(), 21u);
    for (const auto& p : refined) {
        ASSERT_GE(p.step, 10u);
        EXPECT_EQ(p.dev_loss, dense.curve[p.step - 1].dev_loss) << p.step;
    }
    for (std::uint64_t step : {7u, 20u, 23u}) {
        const train::Checkpoint ck = reproduce_step(c, data, dir, step);
        EXPECT_EQ(ck.step, step);
        EXPECT_EQ(ck.dev_loss, dense.curve[step - 1].dev_loss);
        const auto& want = dense.snapshots[step - 1].params;
        for (const auto& name : want.names()) {
            const auto& a = ck.params.value(name);
            const auto& b = want.value(name);
            ASSERT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double))) << name << " at " << step;
        }
    }
}
