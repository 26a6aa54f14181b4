#include "combolab/analysis/trace.hpp"

#include "combolab/core/rng.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace combolab::analysis {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'B', 'L', 'T', 'R', 'C', 'E'};
constexpr std::uint32_t kTraceVersion = 1;

struct Position {
    std::size_t row;
    std::size_t col;
};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("trace file truncated");
    return v;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
    return out;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(part);
    return out;
}

}  // namespace

PositionPolicy default_policy(arch::Family family) {
    return family == arch::Family::Bert ? PositionPolicy::MaskedPositions : PositionPolicy::NextToken;
}

std::string to_string(PositionPolicy p) {
    return p == PositionPolicy::MaskedPositions ? "masked-positions" : "next-token";
}

void ActivationTrace::validate() const {
    if (sites.size() != reps.size()) throw std::invalid_argument("trace: site names and matrices differ in count");
    for (std::size_t s = 0; s < reps.size(); ++s) {
        if (reps[s].rank() != 2 || reps[s].rows() != targets.size()) {
            throw std::invalid_argument(fmt::format("trace: site '{}' holds {} rows for {} targets", sites[s],
                                                    reps[s].rank() == 2 ? reps[s].rows() : 0, targets.size()));
        }
    }
}

ActivationTrace collect_trace(arch::Model& model, const data::Dataset& dataset, const TraceOptions& options) {
    const bool masked = options.policy == PositionPolicy::MaskedPositions;
    if (masked != (dataset.objective() == data::Objective::MaskedLm)) {
        throw std::invalid_argument(fmt::format("position policy '{}' does not match the dataset objective",
                                                to_string(options.policy)));
    }
    // Inputs and targets of every row, masked with the trace seed.
    std::vector<std::size_t> all(dataset.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<Position> eligible;
    std::vector<data::MaskedBatch> rows;
    for (std::size_t start = 0; start < all.size(); start += options.batch) {
        const std::size_t n = std::min(options.batch, all.size() - start);
        rows.push_back(dataset.batch(std::span(all).subspan(start, n), options.seed, 0));
        const auto& b = rows.back();
        for (std::size_t i = 0; i < b.targets.size(); ++i) {
            if (b.targets[i] != data::kIgnore) eligible.push_back({start + i / b.seq, i % b.seq});
        }
    }
    if (eligible.empty()) throw std::invalid_argument("collect_trace: no eligible positions in the dataset");

    core::SeededRng rng(options.seed, "trace");
    const auto picked = rng.sample_indices(eligible.size(), std::min(options.sample_budget, eligible.size()));

    ActivationTrace trace;
    trace.sites = arch::site_names(model.spec().layers);
    trace.meta["policy"] = to_string(options.policy);
    trace.meta["seed"] = std::to_string(options.seed);
    std::vector<std::vector<core::Tensor>> parts(trace.sites.size());

    // Forward only the rows that hold sampled positions, a batch at a time.
    const std::size_t seq = dataset.seq();
    std::size_t p = 0;
    while (p < picked.size()) {
        std::vector<std::size_t> row_ids;
        std::vector<std::size_t> capture;
        data::MaskedBatch grid;
        grid.seq = seq;
        while (p < picked.size()) {
            const Position pos = eligible[picked[p]];
            if (row_ids.empty() || row_ids.back() != pos.row) {
                if (row_ids.size() == options.batch) break;
                row_ids.push_back(pos.row);
                const auto& src = rows[pos.row / options.batch];
                const std::size_t off = (pos.row % options.batch) * seq;
                grid.input_ids.insert(grid.input_ids.end(), src.input_ids.begin() + static_cast<std::ptrdiff_t>(off),
                                      src.input_ids.begin() + static_cast<std::ptrdiff_t>(off + seq));
            }
            capture.push_back((row_ids.size() - 1) * seq + pos.col);
            const auto& src = rows[pos.row / options.batch];
            trace.targets.push_back(src.targets[(pos.row % options.batch) * seq + pos.col]);
            ++p;
        }
        grid.batch = row_ids.size();
        core::Tape tape(false);
        arch::ForwardOptions fo;
        fo.capture_rows = &capture;
        arch::ForwardOutput out = arch::forward(model, tape, arch::TokenGrid{grid.batch, seq, grid.input_ids}, fo);
        for (std::size_t s = 0; s < trace.sites.size(); ++s) parts[s].push_back(std::move(out.trace->reps[s]));
    }

    const std::size_t d = model.spec().hidden;
    for (auto& site_parts : parts) {
        core::Tensor rep({trace.targets.size(), d});
        std::size_t r = 0;
        for (const auto& part : site_parts) {
            std::copy_n(part.data(), part.size(), rep.data() + r * d);
            r += part.rows();
        }
        trace.reps.push_back(std::move(rep));
    }
    trace.validate();
    return trace;
}

void write_trace(const std::filesystem::path& path, const ActivationTrace& trace) {
    trace.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    const std::size_t d = trace.reps.empty() ? 0 : trace.reps[0].cols();
    std::string header = fmt::format("sites={}\nsamples={}\nhidden={}\n", join(trace.sites), trace.samples(), d);
    for (const auto& [k, v] : trace.meta) header += fmt::format("meta.{}={}\n", k, v);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kTraceVersion);
    put<std::uint64_t>(out, header.size());
    out << header;
    for (int t : trace.targets) put<std::int32_t>(out, t);
    for (const auto& rep : trace.reps) {
        for (double v : rep.values()) put<float>(out, static_cast<float>(v));
    }
}

ActivationTrace read_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error(fmt::format("'{}' is not a trace file", path.string()));
    }
    if (const auto v = get<std::uint32_t>(in); v != kTraceVersion) {
        throw std::runtime_error(fmt::format("trace format version {} is not supported", v));
    }
    std::string header(get<std::uint64_t>(in), '\0');
    in.read(header.data(), static_cast<std::streamsize>(header.size()));
    ActivationTrace trace;
    std::size_t n = 0, d = 0;
    std::istringstream lines(header);
    std::string line;
    while (std::getline(lines, line)) {
        const auto eq = line.find('=');
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "sites") trace.sites = split(value);
        else if (key == "samples") n = std::stoull(value);
        else if (key == "hidden") d = std::stoull(value);
        else if (key.starts_with("meta.")) trace.meta[key.substr(5)] = value;
    }
    trace.targets.resize(n);
    for (auto& t : trace.targets) t = get<std::int32_t>(in);
    for (std::size_t s = 0; s < trace.sites.size(); ++s) {
        core::Tensor rep({n, d});
        for (auto& v : rep.values()) v = get<float>(in);
        trace.reps.push_back(std::move(rep));
    }
    trace.validate();
    return trace;
}

}  // namespace combolab::analysis
