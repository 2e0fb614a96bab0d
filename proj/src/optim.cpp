#include "mclas/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mclas {

OptimizerState OptimizerState::for_group(const ParameterSet& params,
                                         std::vector<std::size_t> indices, double base_lr,
                                         std::uint64_t warmup_steps, AdamHyper hyper) {
    if (warmup_steps == 0) {
        throw std::invalid_argument("warmup_steps must be positive");
    }
    OptimizerState s;
    s.param_indices = std::move(indices);
    for (auto i : s.param_indices) {
        s.first_moment.emplace_back(params.values(i).size(), 0.0);
        s.second_moment.emplace_back(params.values(i).size(), 0.0);
    }
    s.base_lr = base_lr;
    s.warmup_steps = warmup_steps;
    s.hyper = hyper;
    return s;
}

double warmup_lr(std::uint64_t step, double base_lr, std::uint64_t warmup) {
    if (step == 0 || warmup == 0) {
        throw std::invalid_argument("warmup_lr: step and warmup must be positive");
    }
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return base_lr * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, std::uint64_t step, double lr,
                 const AdamHyper& hyper) {
    if (param.size() != grad.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ShapeError("adam: parameter of " + std::to_string(param.size()) +
                         " values paired with gradient of " + std::to_string(grad.size()) +
                         " and moments of " + std::to_string(m.size()) + "/" +
                         std::to_string(v.size()));
    }
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grad[i];
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
}

void adam_step(ParameterSet& params, const Gradients& grads, OptimizerState& state, double lr) {
    if (grads.size() != params.size()) {
        throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    }
    ++state.step_count;
    for (std::size_t g = 0; g < state.param_indices.size(); ++g) {
        const auto i = state.param_indices[g];
        adam_update(params.values(i), grads[i], state.first_moment[g], state.second_moment[g],
                    state.step_count, lr, state.hyper);
    }
}

}  // namespace mclas
