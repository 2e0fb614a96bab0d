#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mclas/params.hpp"

namespace mclas {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-9;
};

// Adam moments for one parameter group (e.g. the encoder) plus its schedule.
struct OptimizerState {
    std::vector<std::size_t> param_indices;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step_count = 0;
    double base_lr = 0.05;
    std::uint64_t warmup_steps = 100;
    AdamHyper hyper;

    static OptimizerState for_group(const ParameterSet& params, std::vector<std::size_t> indices,
                                    double base_lr, std::uint64_t warmup_steps,
                                    AdamHyper hyper = {});
};

// lr = base_lr · min(step^-0.5, step · warmup^-1.5)
double warmup_lr(std::uint64_t step, double base_lr, std::uint64_t warmup);

// One bias-corrected Adam update of the group's parameters. Increments
// step_count. Gradients are indexed like the full ParameterSet.
void adam_step(ParameterSet& params, const Gradients& grads, OptimizerState& state, double lr);

// Same recurrence over bare vectors; `step` is the 1-based update count.
void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, std::uint64_t step, double lr,
                 const AdamHyper& hyper);

}  // namespace mclas
