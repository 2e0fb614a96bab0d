#include "mclas/params.hpp"

#include <stdexcept>

namespace mclas {

std::size_t ParameterSet::add(std::string name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("parameter '" + name + "': shape " + shape_str(shape) +
                         " does not match " + std::to_string(values.size()) + " values");
    }
    if (by_name_.contains(name)) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    const std::size_t index = params_.size();
    by_name_.emplace(name, index);
    params_.push_back(Parameter{std::move(name), std::move(shape),
                                std::make_shared<std::vector<double>>(std::move(values))});
    return index;
}

std::size_t ParameterSet::add_normal(const std::string& name, Shape shape, double stddev,
                                     std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
        v = dist(rng);
    }
    return add(name, std::move(shape), std::move(values));
}

std::size_t ParameterSet::add_constant(const std::string& name, Shape shape, double value) {
    std::vector<double> values(shape_numel(shape), value);
    return add(name, std::move(shape), std::move(values));
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return it->second;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        return std::nullopt;
    }
    return it->second;
}

ParameterSet::ParameterSet(const ParameterSet& other) : by_name_(other.by_name_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) {
        params_.push_back(
            Parameter{p.name, p.shape, std::make_shared<std::vector<double>>(*p.value)});
    }
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
    if (this != &other) {
        ParameterSet copy(other);
        *this = std::move(copy);
    }
    return *this;
}

std::size_t ParameterSet::total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value->size();
    }
    return n;
}

Gradients ParameterSet::zero_gradients() const {
    Gradients g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        g[i].assign(params_[i].value->size(), 0.0);
    }
    return g;
}

ParameterBinder::ParameterBinder(const ParameterSet& params, bool track_gradients)
    : params_(&params), track_(track_gradients), leaves_(params.size()) {}

Tensor ParameterBinder::get(std::size_t index) {
    auto& leaf = leaves_.at(index);
    if (!leaf.defined()) {
        const auto& p = params_->at(index);
        leaf = Tensor::alias(p.shape, p.value, track_);
    }
    return leaf;
}

void ParameterBinder::accumulate_gradients(Gradients& out, double weight) const {
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
        const auto& leaf = leaves_[i];
        if (!leaf.defined() || !leaf.has_grad()) {
            continue;
        }
        const auto g = leaf.grad();
        auto& dst = out.at(i);
        for (std::size_t j = 0; j < g.size(); ++j) {
            dst[j] += weight * g[j];
        }
    }
}

}  // namespace mclas
