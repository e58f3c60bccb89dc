#include "colonformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace colonformer {

namespace {
constexpr char kMagic[8] = {'C', 'F', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("checkpoint: truncated file");
    return v;
}
}  // namespace

StateDict state_dict(Module& m) {
    StateDict out;
    m.visit_params("", [&](const std::string& name, Var& p) {
        auto [it, inserted] = out.emplace(name, p.value());
        if (!inserted) throw Error("duplicate parameter name: " + name);
    });
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const StateDict& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(os, state.size());
    for (const auto& [name, tensor] : state) {  // std::map: sorted by name
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.dim()));
        for (auto d : tensor.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(Scalar)));
    }
    if (!os) throw Error("checkpoint write failed: " + path.string());
}

StateDict load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error("not a checkpoint file: " + path.string());
    }
    const auto count = read_pod<std::uint64_t>(is);
    StateDict out;
    for (std::uint64_t e = 0; e < count; ++e) {
        const auto name_len = read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = read_pod<std::uint32_t>(is);
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(Scalar)));
        if (!is) throw Error("checkpoint: truncated payload for " + name);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

std::string LoadReport::summary() const {
    std::ostringstream os;
    os << loaded.size() << " parameters loaded";
    if (!missing_in_file.empty()) {
        os << "; missing in file:";
        for (const auto& n : missing_in_file) os << ' ' << n;
    }
    if (!unused_in_file.empty()) {
        os << "; unused file entries:";
        for (const auto& n : unused_in_file) os << ' ' << n;
    }
    return os.str();
}

LoadReport apply_state(Module& m, const StateDict& state, bool strict) {
    LoadReport report;
    std::map<std::string, bool> used;
    for (const auto& [name, tensor] : state) used[name] = false;
    m.visit_params("", [&](const std::string& name, Var& p) {
        auto it = state.find(name);
        if (it == state.end()) {
            report.missing_in_file.push_back(name);
            return;
        }
        used[name] = true;
        if (it->second.shape() != p.shape()) {
            throw Error("checkpoint shape mismatch for " + name + ": file " +
                        shape_str(it->second.shape()) + " vs model " + shape_str(p.shape()));
        }
        std::copy(it->second.data(), it->second.data() + it->second.numel(),
                  p.node()->value.data());
        report.loaded.push_back(name);
    });
    for (const auto& [name, was_used] : used) {
        if (!was_used) report.unused_in_file.push_back(name);
    }
    if (strict && !report.complete()) {
        throw Error("checkpoint/variant mismatch: " + report.summary());
    }
    return report;
}

}  // namespace colonformer
