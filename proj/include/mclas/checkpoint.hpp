#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclas/params.hpp"

namespace mclas {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

// Self-describing container: string metadata plus named row-major tensors.
//
// Layout (little-endian):
//   magic "MCLASCKP", u32 version,
//   u64 n_meta, n_meta × (str key, str value),
//   u64 n_tensors, n_tensors × (str name, u64 rank, rank × u64 dim, numel × f64)
// where str = u64 length + bytes. Values are stored as raw IEEE-754 bits so a
// save/load cycle is bit-exact.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> meta;
    std::vector<NamedTensor> tensors;

    void add_parameters(const ParameterSet& params, const std::string& prefix = "");
    // Values of every tensor named `prefix + p.name` are copied into `params`.
    void load_parameters(ParameterSet& params, const std::string& prefix = "") const;
    const NamedTensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mclas
