#pragma once

#include "combolab/data/corpus.hpp"
#include "combolab/eval/mcq.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace combolab::toy {

// A small closed world: every animal has one food, one home and one color.
struct Animal {
    std::string name;
    std::string food;
    std::string home;
    std::string color;
};

const std::vector<Animal>& animals();

struct ToyOptions {
    std::uint64_t seed = 7;
    std::size_t fauna_docs = 3000;
    std::size_t ledger_docs = 300;
    std::size_t weather_docs = 300;
    std::size_t demo_tasks = 44;
    std::size_t dev_tasks = 80;
    std::size_t test_tasks = 200;
};

struct ToyData {
    data::DomainDocs domains;  // fauna (train), ledger and weather (ood)
    std::vector<eval::McqTask> demo;
    std::vector<eval::McqTask> dev;
    std::vector<eval::McqTask> test;
};

ToyData generate(const ToyOptions& options);

// Writes one text file per domain (documents separated by blank lines),
// manifest.txt and mcq_{demo,dev,test}.jsonl. Returns the manifest path.
std::filesystem::path write(const ToyData& data, const std::filesystem::path& dir);

}  // namespace combolab::toy
