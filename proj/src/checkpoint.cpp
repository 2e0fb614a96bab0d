#include "mclas/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace mclas {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'L', 'A', 'S', 'C', 'K', 'P'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    os.write(reinterpret_cast<const char*>(buf), 8);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) {
        throw FormatError("checkpoint truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return v;
}

std::string get_str(std::istream& is) {
    const auto n = get_u64(is);
    if (n > (std::uint64_t{1} << 30)) {
        throw FormatError("checkpoint string length " + std::to_string(n) + " is implausible");
    }
    std::string s(n, '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
        throw FormatError("checkpoint truncated in string");
    }
    return s;
}

}  // namespace

void Checkpoint::add_parameters(const ParameterSet& params, const std::string& prefix) {
    for (const auto& p : params.all()) {
        tensors.push_back(NamedTensor{prefix + p.name, p.shape, *p.value});
    }
}

void Checkpoint::load_parameters(ParameterSet& params, const std::string& prefix) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params.at(i);
        const auto& t = tensor(prefix + p.name);
        if (t.shape != p.shape) {
            throw ShapeError("checkpoint tensor '" + t.name + "' has shape " +
                             shape_str(t.shape) + ", parameter expects " + shape_str(p.shape));
        }
        params.values(i) = t.values;
    }
}

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const NamedTensor& t) { return t.name == name; });
    if (it == tensors.end()) {
        throw FormatError("checkpoint has no tensor '" + name + "'");
    }
    return *it;
}

bool Checkpoint::has_tensor(const std::string& name) const {
    return std::any_of(tensors.begin(), tensors.end(),
                       [&](const NamedTensor& t) { return t.name == name; });
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    os.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = Checkpoint::kVersion;
    for (int i = 0; i < 4; ++i) {
        os.put(static_cast<char>(version >> (8 * i)));
    }
    put_u64(os, ckpt.meta.size());
    for (const auto& [k, v] : ckpt.meta) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u64(os, ckpt.tensors.size());
    for (const auto& t : ckpt.tensors) {
        if (shape_numel(t.shape) != t.values.size()) {
            throw ShapeError("checkpoint tensor '" + t.name + "' shape " + shape_str(t.shape) +
                             " does not match its values");
        }
        put_str(os, t.name);
        put_u64(os, t.shape.size());
        for (auto d : t.shape) {
            put_u64(os, d);
        }
        for (double v : t.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            put_u64(os, bits);
        }
    }
    if (!os) {
        throw std::runtime_error("write to '" + path.string() + "' failed");
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    }
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("'" + path.string() + "' is not a checkpoint");
    }
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) {
        const int c = is.get();
        if (c == EOF) {
            throw FormatError("checkpoint truncated in header");
        }
        version |= static_cast<std::uint32_t>(c) << (8 * i);
    }
    if (version != Checkpoint::kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto n_meta = get_u64(is);
    for (std::uint64_t i = 0; i < n_meta; ++i) {
        auto k = get_str(is);
        ckpt.meta[k] = get_str(is);
    }
    const auto n_tensors = get_u64(is);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        t.name = get_str(is);
        const auto rank = get_u64(is);
        if (rank > 8) {
            throw FormatError("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
        }
        for (std::uint64_t r = 0; r < rank; ++r) {
            t.shape.push_back(get_u64(is));
        }
        t.values.resize(shape_numel(t.shape));
        for (auto& v : t.values) {
            const std::uint64_t bits = get_u64(is);
            std::memcpy(&v, &bits, sizeof(bits));
        }
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

}  // namespace mclas
