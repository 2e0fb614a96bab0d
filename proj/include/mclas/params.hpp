#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mclas/tensor.hpp"

namespace mclas {

struct Parameter {
    std::string name;
    Shape shape;
    std::shared_ptr<std::vector<double>> value;
};

// Per-parameter gradient buffers, indexed like ParameterSet::all().
using Gradients = std::vector<std::vector<double>>;

// Ordered, named collection of trainable tensors.
class ParameterSet {
public:
    ParameterSet() = default;
    // Copies own fresh storage.
    ParameterSet(const ParameterSet& other);
    ParameterSet& operator=(const ParameterSet& other);
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    std::size_t add(std::string name, Shape shape, std::vector<double> values);
    std::size_t add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng);
    std::size_t add_constant(const std::string& name, Shape shape, double value);

    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t index_of(const std::string& name) const;
    std::optional<std::size_t> find(const std::string& name) const;
    const Parameter& at(std::size_t i) const { return params_.at(i); }
    const Parameter& at(const std::string& name) const { return params_.at(index_of(name)); }
    std::vector<double>& values(std::size_t i) { return *params_.at(i).value; }
    const std::vector<double>& values(std::size_t i) const { return *params_.at(i).value; }

    std::size_t total_size() const;
    Gradients zero_gradients() const;

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> by_name_;
};

// Binds parameters into one forward pass. With tracking enabled each bound
// leaf owns its own gradient buffer, so concurrent passes over one
// ParameterSet never share mutable state.
class ParameterBinder {
public:
    ParameterBinder(const ParameterSet& params, bool track_gradients);

    Tensor get(std::size_t index);
    Tensor get(const std::string& name) { return get(params_->index_of(name)); }
    const ParameterSet& params() const { return *params_; }

    // Adds each leaf's gradient (times `weight`) into `out`.
    void accumulate_gradients(Gradients& out, double weight = 1.0) const;

private:
    const ParameterSet* params_;
    bool track_;
    std::vector<Tensor> leaves_;
};

}  // namespace mclas
