#pragma once

#include "combolab/arch/arch_spec.hpp"
#include "combolab/core/param_store.hpp"
#include "combolab/train/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace combolab::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    std::uint64_t step = 0;
    double dev_loss = 0.0;
    arch::ArchSpec spec;
    core::ParamStore params;
    std::optional<AdamState> optimizer;
    // Free-form header entries (tokenizer, run metadata).
    std::map<std::string, std::string> meta;
};

// Layout: "CMBLCKPT", u32 version, u64 header length, header text
// ("key=value" lines: step, dev_loss, arch.*, meta.*), u64 tensor count,
// then per tensor: u32 name length, name, u32 rank, u64 dims, raw
// little-endian doubles. Optimizer moments are stored as "adam.m/<name>"
// and "adam.v/<name>".
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct LossPoint {
    std::uint64_t step = 0;
    double dev_loss = 0.0;
    friend bool operator==(const LossPoint&, const LossPoint&) = default;
};
using LossCurve = std::vector<LossPoint>;

// CSV with header "step,dev_loss"; values printed with round-trip precision.
void write_loss_csv(const std::filesystem::path& path, const LossCurve& curve);
LossCurve read_loss_csv(const std::filesystem::path& path);

}  // namespace combolab::train
