#include "combolab/data/corpus.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace combolab::data {

namespace {

std::vector<std::string> flatten(const DomainDocs& docs) {
    std::vector<std::string> out;
    for (const auto& [name, list] : docs) out.insert(out.end(), list.begin(), list.end());
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

std::vector<std::string> Corpus::train_docs() const { return flatten(train); }
std::vector<std::string> Corpus::dev_docs() const { return flatten(dev); }

std::vector<std::string> Corpus::ood_names() const {
    std::vector<std::string> names;
    for (const auto& [name, docs] : ood) names.push_back(name);
    return names;
}

std::vector<std::string> Corpus::all_docs() const {
    std::vector<std::string> out = train_docs();
    for (const auto* role : {&dev, &ood}) {
        for (auto& d : flatten(*role)) out.push_back(std::move(d));
    }
    return out;
}

Corpus split_domains(const DomainDocs& raw, const std::vector<std::string>& train_names,
                     double dev_fraction, const std::vector<std::string>& ood_names, std::uint64_t seed) {
    if (dev_fraction < 0.0 || dev_fraction >= 1.0) {
        throw std::invalid_argument(fmt::format("dev_fraction {} outside [0, 1)", dev_fraction));
    }
    const std::set<std::string> train_set(train_names.begin(), train_names.end());
    for (const auto& name : ood_names) {
        if (train_set.count(name)) {
            throw std::invalid_argument(fmt::format("domain '{}' is listed as both train and ood", name));
        }
    }
    auto fetch = [&](const std::string& name) -> const std::vector<std::string>& {
        auto it = raw.find(name);
        if (it == raw.end()) throw std::invalid_argument(fmt::format("unknown domain '{}'", name));
        return it->second;
    };

    Corpus corpus;
    corpus.seed = seed;
    const core::SeededRng rng(seed, "split");
    for (const auto& name : train_names) {
        const auto& docs = fetch(name);
        const auto n_dev = static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(docs.size()) + 0.5));
        core::SeededRng r = rng.substream(name);
        std::vector<std::size_t> picked = r.sample_indices(docs.size(), std::min(n_dev, docs.size()));
        std::vector<bool> is_dev(docs.size(), false);
        for (std::size_t i : picked) is_dev[i] = true;
        auto& train = corpus.train[name];
        auto& dev = corpus.dev[name];
        for (std::size_t i = 0; i < docs.size(); ++i) (is_dev[i] ? dev : train).push_back(docs[i]);
    }
    for (const auto& name : ood_names) corpus.ood[name] = fetch(name);
    return corpus;
}

std::vector<std::string> split_documents(const std::string& text) {
    std::vector<std::string> docs;
    std::istringstream in(text);
    std::string line, current;
    auto flush = [&] {
        if (!current.empty()) docs.push_back(std::move(current));
        current.clear();
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (blank(line)) {
            flush();
            continue;
        }
        if (!current.empty()) current += '\n';
        current += line;
    }
    flush();
    return docs;
}

std::vector<std::string> read_documents(const std::filesystem::path& path) {
    return split_documents(read_file(path));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
    std::istringstream in(read_file(manifest));
    std::vector<ManifestEntry> entries;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        ManifestEntry e;
        std::string path, extra;
        if (!(fields >> e.name)) continue;
        if (!(fields >> e.role >> path) || (fields >> extra)) {
            throw std::invalid_argument(
                fmt::format("{}:{}: expected '<domain> <train|ood> <path>'", manifest.string(), lineno));
        }
        if (e.role != "train" && e.role != "ood") {
            throw std::invalid_argument(
                fmt::format("{}:{}: role '{}' must be train or ood", manifest.string(), lineno, e.role));
        }
        e.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path)
                                                           : manifest.parent_path() / path;
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw std::invalid_argument(fmt::format("{}: no domains listed", manifest.string()));
    return entries;
}

Corpus load_corpus(const std::filesystem::path& manifest, double dev_fraction, std::uint64_t seed) {
    DomainDocs raw;
    std::vector<std::string> train, ood;
    for (const auto& e : read_manifest(manifest)) {
        auto docs = read_documents(e.path);
        if (docs.empty()) throw std::invalid_argument(fmt::format("domain '{}' ({}) has no documents", e.name, e.path.string()));
        if (!raw.emplace(e.name, std::move(docs)).second) {
            throw std::invalid_argument(fmt::format("domain '{}' listed twice in {}", e.name, manifest.string()));
        }
        (e.role == "train" ? train : ood).push_back(e.name);
    }
    if (train.empty()) throw std::invalid_argument(fmt::format("{}: no train domain", manifest.string()));
    return split_domains(raw, train, dev_fraction, ood, seed);
}

}  // namespace combolab::data
