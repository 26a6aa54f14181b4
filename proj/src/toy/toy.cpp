#include "combolab/toy/toy.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>

namespace combolab::toy {

namespace {

const std::vector<std::string> kAdjectives = {"old", "young", "small", "big", "quiet", "happy", "shy", "quick"};
const std::vector<std::string> kTimes = {"at dawn", "at night", "in spring", "in winter", "every day", "after rain"};

template <typename T>
const T& pick(core::SeededRng& rng, const std::vector<T>& items) {
    return items[rng.uniform_index(items.size())];
}

std::string fauna_sentence(core::SeededRng& rng) {
    const Animal& a = pick(rng, animals());
    const std::string subject =
        rng.bernoulli(0.5) ? "the " + a.name : fmt::format("the {} {}", pick(rng, kAdjectives), a.name);
    switch (rng.uniform_index(6)) {
        case 0: return fmt::format("{} eats {}.", subject, a.food);
        case 1: return fmt::format("{} lives in the {}.", subject, a.home);
        case 2: return fmt::format("{} is {}.", subject, a.color);
        case 3: return fmt::format("{} eats {} {}.", subject, a.food, pick(rng, kTimes));
        case 4: return fmt::format("{} sleeps in the {} {}.", subject, a.home, pick(rng, kTimes));
        default: return fmt::format("{} is {} and eats {}.", subject, a.color, a.food);
    }
}

std::string fauna_doc(core::SeededRng& rng) {
    const std::size_t n = 4 + rng.uniform_index(7);
    std::string doc;
    for (std::size_t i = 0; i < n; ++i) doc += (i ? " " : "") + fauna_sentence(rng);
    return doc;
}

std::string ledger_doc(core::SeededRng& rng) {
    static const std::vector<std::string> goods = {"nails", "rope", "salt", "cloth", "lamps", "ink"};
    const std::size_t n = 3 + rng.uniform_index(6);
    std::string doc = fmt::format("ledger {}:", 100 + rng.uniform_index(900));
    for (std::size_t i = 0; i < n; ++i) {
        doc += fmt::format(" {} x{} @{};", pick(rng, goods), 1 + rng.uniform_index(99), 1 + rng.uniform_index(999));
    }
    return doc + fmt::format(" total {}.", rng.uniform_index(100000));
}

std::string weather_doc(core::SeededRng& rng) {
    static const std::vector<std::string> towns = {"oslo", "lima", "kyiv", "perth", "quito"};
    static const std::vector<std::string> skies = {"CLEAR", "RAIN", "FOG", "SNOW", "WIND"};
    const std::size_t n = 3 + rng.uniform_index(5);
    std::string doc;
    for (std::size_t i = 0; i < n; ++i) {
        doc += fmt::format("{}{}|{}|{}C|{}%", i ? " " : "", pick(rng, towns), pick(rng, skies),
                           static_cast<int>(rng.uniform_index(60)) - 20, rng.uniform_index(101));
    }
    return doc;
}

enum class Relation { Food, Home, Color };

std::string attribute(const Animal& a, Relation r) {
    return r == Relation::Food ? a.food : r == Relation::Home ? a.home : a.color;
}

// Context and options of every distinct question; options are the true
// attribute plus three distractors of the same relation.
eval::McqTask make_task(core::SeededRng& rng, std::size_t answer_index) {
    const Animal& a = pick(rng, animals());
    const auto rel = static_cast<Relation>(rng.uniform_index(3));
    const std::string subject =
        rng.bernoulli(0.5) ? "the " + a.name : fmt::format("the {} {}", pick(rng, kAdjectives), a.name);
    eval::McqTask t;
    t.context = rel == Relation::Food ? subject + " eats" : rel == Relation::Home ? subject + " lives in the" : subject + " is";
    std::set<std::string> used = {attribute(a, rel)};
    std::vector<std::string> wrong;
    while (wrong.size() < 3) {
        const std::string w = attribute(pick(rng, animals()), rel);
        if (used.insert(w).second) wrong.push_back(w);
    }
    for (std::size_t i = 0, w = 0; i < 4; ++i) {
        t.options.push_back(" " + (i == answer_index ? attribute(a, rel) : wrong[w++]) + ".");
    }
    t.answer_index = answer_index;
    return t;
}

std::vector<eval::McqTask> make_tasks(core::SeededRng& rng, std::size_t n, const std::string& prefix,
                                      std::set<std::pair<std::string, std::vector<std::string>>>& seen) {
    std::vector<eval::McqTask> out;
    while (out.size() < n) {
        eval::McqTask t = make_task(rng, out.size() % 4);
        if (!seen.insert({t.context, t.options}).second) continue;
        t.id = fmt::format("{}-{:03d}", prefix, out.size());
        out.push_back(std::move(t));
    }
    return out;
}

void write_docs(const std::filesystem::path& path, const std::vector<std::string>& docs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    for (std::size_t i = 0; i < docs.size(); ++i) out << (i ? "\n" : "") << docs[i] << "\n";
}

}  // namespace

const std::vector<Animal>& animals() {
    static const std::vector<Animal> list = {
        {"fox", "mice", "den", "red"},        {"owl", "moths", "barn", "brown"},
        {"bear", "honey", "cave", "black"},   {"frog", "flies", "pond", "green"},
        {"goat", "grass", "hill", "white"},   {"seal", "fish", "bay", "grey"},
        {"crow", "seeds", "oak", "dark"},     {"hare", "clover", "field", "tan"},
        {"wolf", "deer", "forest", "silver"}, {"duck", "weeds", "lake", "yellow"},
        {"bat", "beetles", "attic", "pale"},  {"mole", "worms", "tunnel", "velvet"},
    };
    return list;
}

ToyData generate(const ToyOptions& options) {
    const core::SeededRng root(options.seed, "toy");
    ToyData out;
    auto fill = [&](const std::string& name, std::size_t n, std::string (*make)(core::SeededRng&)) {
        core::SeededRng rng = root.substream(name);
        auto& docs = out.domains[name];
        for (std::size_t i = 0; i < n; ++i) docs.push_back(make(rng));
    };
    fill("fauna", options.fauna_docs, fauna_doc);
    fill("ledger", options.ledger_docs, ledger_doc);
    fill("weather", options.weather_docs, weather_doc);

    core::SeededRng rng = root.substream("mcq");
    std::set<std::pair<std::string, std::vector<std::string>>> seen;
    out.demo = make_tasks(rng, options.demo_tasks, "demo", seen);
    out.dev = make_tasks(rng, options.dev_tasks, "dev", seen);
    out.test = make_tasks(rng, options.test_tasks, "test", seen);
    return out;
}

std::filesystem::path write(const ToyData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string manifest = "# domain role path\n";
    for (const auto& [name, docs] : data.domains) {
        write_docs(dir / (name + ".txt"), docs);
        manifest += fmt::format("{} {} {}.txt\n", name, name == "fauna" ? "train" : "ood", name);
    }
    const auto path = dir / "manifest.txt";
    std::ofstream(path, std::ios::trunc) << manifest;
    eval::write_tasks_jsonl(dir / "mcq_demo.jsonl", data.demo);
    eval::write_tasks_jsonl(dir / "mcq_dev.jsonl", data.dev);
    eval::write_tasks_jsonl(dir / "mcq_test.jsonl", data.test);
    return path;
}

}  // namespace combolab::toy
