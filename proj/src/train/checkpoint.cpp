#include "combolab/train/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace combolab::train {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'B', 'L', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void doubles(double* out, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(out, bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const core::Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string header = fmt::format("step={}\ndev_loss={}\n", ck.step, ck.dev_loss);
    for (const auto& [k, v] : arch::to_fields(ck.spec)) header += fmt::format("arch.{}={}\n", k, v);
    if (ck.optimizer) header += fmt::format("adam.step={}\n", ck.optimizer->step);
    for (const auto& [k, v] : ck.meta) {
        if (v.find('\n') != std::string::npos || k.find('=') != std::string::npos) {
            throw CheckpointError(fmt::format("meta entry '{}' cannot be stored in the header", k));
        }
        header += fmt::format("meta.{}={}\n", k, v);
    }

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, ck.format_version);
    put<std::uint64_t>(out, header.size());
    out += header;
    const std::size_t n = ck.params.size();
    put<std::uint64_t>(out, ck.optimizer ? 3 * n : n);
    for (std::size_t i = 0; i < n; ++i) put_tensor(out, ck.params.names()[i], ck.params.value_at(i));
    if (ck.optimizer) {
        if (ck.optimizer->m.size() != n || ck.optimizer->v.size() != n) {
            throw CheckpointError("optimizer state does not match parameter count");
        }
        for (std::size_t i = 0; i < n; ++i) put_tensor(out, "adam.m/" + ck.params.names()[i], ck.optimizer->m[i]);
        for (std::size_t i = 0; i < n; ++i) put_tensor(out, "adam.v/" + ck.params.names()[i], ck.optimizer->v[i]);
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (in.text(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    Checkpoint ck;
    ck.format_version = in.get<std::uint32_t>();
    if (ck.format_version != kCheckpointVersion) {
        throw CheckpointError(fmt::format("checkpoint format version {} is not supported (expected {})",
                                          ck.format_version, kCheckpointVersion));
    }
    std::istringstream header(in.text(in.get<std::uint64_t>()));
    std::map<std::string, std::string> arch_fields;
    std::optional<std::uint64_t> adam_step;
    std::string line;
    while (std::getline(header, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError(fmt::format("malformed header line '{}'", line));
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "step") ck.step = std::stoull(value);
        else if (key == "dev_loss") ck.dev_loss = std::stod(value);
        else if (key == "adam.step") adam_step = std::stoull(value);
        else if (key.starts_with("arch.")) arch_fields[key.substr(5)] = value;
        else if (key.starts_with("meta.")) ck.meta[key.substr(5)] = value;
        else throw CheckpointError(fmt::format("unknown header key '{}'", key));
    }
    arch::apply_fields(ck.spec, arch_fields);

    const auto count = in.get<std::uint64_t>();
    std::map<std::string, core::Tensor> m, v;
    for (std::uint64_t t = 0; t < count; ++t) {
        std::string name = in.text(in.get<std::uint32_t>());
        core::Shape shape(in.get<std::uint32_t>());
        for (auto& d : shape) d = in.get<std::uint64_t>();
        core::Tensor tensor(shape);
        in.doubles(tensor.data(), tensor.size());
        if (name.starts_with("adam.m/")) {
            m.emplace(name.substr(7), std::move(tensor));
        } else if (name.starts_with("adam.v/")) {
            v.emplace(name.substr(7), std::move(tensor));
        } else {
            ck.params.add(std::move(name), std::move(tensor));
        }
    }
    if (!in.done()) throw CheckpointError("trailing bytes after checkpoint tensors");
    if (adam_step) {
        AdamState state;
        state.step = *adam_step;
        for (const auto& name : ck.params.names()) {
            auto mi = m.find(name);
            auto vi = v.find(name);
            if (mi == m.end() || vi == v.end()) throw CheckpointError(fmt::format("missing optimizer moments for '{}'", name));
            state.m.push_back(std::move(mi->second));
            state.v.push_back(std::move(vi->second));
        }
        ck.optimizer = std::move(state);
    }
    return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const std::string bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(fmt::format("cannot write '{}'", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

void write_loss_csv(const std::filesystem::path& path, const LossCurve& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << "step,dev_loss\n";
    for (const auto& p : curve) out << fmt::format("{},{}\n", p.step, p.dev_loss);
}

LossCurve read_loss_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::getline(in, line);
    if (line != "step,dev_loss") throw std::runtime_error(fmt::format("{}: unexpected header '{}'", path.string(), line));
    LossCurve curve;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("missing comma");
            curve.push_back({std::stoull(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
        } catch (const std::exception&) {
            throw std::runtime_error(fmt::format("{}:{}: expected '<step>,<dev_loss>'", path.string(), lineno));
        }
        if (curve.size() > 1 && curve[curve.size() - 2].step >= curve.back().step) {
            throw std::runtime_error(fmt::format("{}:{}: steps must increase", path.string(), lineno));
        }
    }
    return curve;
}

}  // namespace combolab::train
