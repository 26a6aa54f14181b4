#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace combolab::data {

using DomainDocs = std::map<std::string, std::vector<std::string>>;

struct Corpus {
    DomainDocs train;
    DomainDocs dev;
    DomainDocs ood;
    std::uint64_t seed = 0;

    // Documents of every domain in the role, concatenated in domain-name order.
    std::vector<std::string> train_docs() const;
    std::vector<std::string> dev_docs() const;
    std::vector<std::string> ood_names() const;
    // Every document in every role (tokenizer construction).
    std::vector<std::string> all_docs() const;
};

// Moves round(dev_fraction * n) documents of each train domain to dev,
// chosen by a seeded draw; document order is otherwise preserved.
Corpus split_domains(const DomainDocs& raw, const std::vector<std::string>& train_names,
                     double dev_fraction, const std::vector<std::string>& ood_names, std::uint64_t seed);

// Documents are separated by one or more blank lines.
std::vector<std::string> split_documents(const std::string& text);
std::vector<std::string> read_documents(const std::filesystem::path& path);

struct ManifestEntry {
    std::string name;
    std::string role;  // "train" or "ood"
    std::filesystem::path path;
};

// Lines of "<domain> <train|ood> <path>"; '#' starts a comment. Relative
// paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

Corpus load_corpus(const std::filesystem::path& manifest, double dev_fraction, std::uint64_t seed);

}  // namespace combolab::data
