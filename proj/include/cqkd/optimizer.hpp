#pragma once

#include "cqkd/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cqkd {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename Scalar>
struct OptimizerState {
  std::int64_t step_count = 0;
  ModelParams<Scalar> first_moment;
  ModelParams<Scalar> second_moment;

  static OptimizerState for_model(const ModelParams<Scalar>& model) {
    return {0, model.zeros_like(), model.zeros_like()};
  }
};

/// One AdamW update in place. Decay is decoupled and applied to the parameter
/// before the bias-corrected Adam step; biases are decayed as well.
template <typename Scalar>
void adamw_step(ModelParams<Scalar>& params, const ModelGradients<Scalar>& grads,
                OptimizerState<Scalar>& state, double lr, const AdamWOptions& opt = {}) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment)) {
    throw std::invalid_argument("adamw_step: parameter, gradient and state shapes differ");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("adamw_step: learning rate must be non-negative");
  if (!(opt.beta1 >= 0.0 && opt.beta1 < 1.0 && opt.beta2 >= 0.0 && opt.beta2 < 1.0)) {
    throw std::invalid_argument("adamw_step: betas must lie in [0, 1)");
  }
  if (!(opt.eps > 0.0)) throw std::invalid_argument("adamw_step: eps must be positive");

  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  const Scalar decay = Scalar(1.0 - lr * opt.weight_decay);
  const Scalar b1 = Scalar(opt.beta1);
  const Scalar b2 = Scalar(opt.beta2);
  const Scalar bc1 = Scalar(1.0 - std::pow(opt.beta1, t));
  const Scalar bc2 = Scalar(1.0 - std::pow(opt.beta2, t));
  const Scalar step = Scalar(lr);
  const Scalar eps = Scalar(opt.eps);

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    p *= decay;
    m = b1 * m + (Scalar(1) - b1) * g;
    v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
    p.array() -= step * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights, grads.layers[l].weights, state.first_moment.layers[l].weights,
           state.second_moment.layers[l].weights);
    update(params.layers[l].bias, grads.layers[l].bias, state.first_moment.layers[l].bias,
           state.second_moment.layers[l].bias);
  }
}

struct ScheduleConfig {
  double eta_max = 1e-3;
  std::int64_t total_steps = 2;
  double floor_fraction = 0.1;
};

/// Single triangular cycle: floor -> eta_max at total_steps / 2 -> floor at
/// the last step.
inline double cyclical_lr(std::int64_t step, const ScheduleConfig& schedule) {
  if (!(schedule.eta_max > 0.0) || schedule.total_steps < 2 || !(schedule.floor_fraction >= 0.0) ||
      !(schedule.floor_fraction < 1.0)) {
    throw std::invalid_argument("cyclical_lr: invalid schedule");
  }
  if (step < 0 || step >= schedule.total_steps) {
    throw std::invalid_argument("cyclical_lr: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(schedule.total_steps) + ")");
  }
  const double floor = schedule.floor_fraction * schedule.eta_max;
  const std::int64_t peak = schedule.total_steps / 2;
  const std::int64_t last = schedule.total_steps - 1;
  if (step <= peak) {
    return floor + (schedule.eta_max - floor) * static_cast<double>(step) / static_cast<double>(peak);
  }
  return schedule.eta_max -
         (schedule.eta_max - floor) * static_cast<double>(step - peak) / static_cast<double>(last - peak);
}

}  // namespace cqkd
