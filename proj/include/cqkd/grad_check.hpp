#pragma once

// Finite-difference verification of backward().
//
// The loss is any callable usable as
//   std::pair<S, Matrix<S>> loss(const Matrix<S>& logits)
// for both the model scalar and long double, returning the scalar loss and its
// gradient with respect to the logits. Central differences are evaluated in
// long double so their rounding floor sits well below double-precision
// gradients.

#include "cqkd/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace cqkd {

struct GradCheckOptions {
  double step = 1e-6;
  /// Nets with more parameters than this are checked on a seeded subset of
  /// subset_size parameters.
  std::size_t full_check_limit = 2000;
  std::size_t subset_size = 400;
  std::uint64_t seed = 0;
};

template <typename Scalar, typename Loss>
double grad_check(const ModelParams<Scalar>& model, const Matrix<Scalar>& inputs, Loss&& loss,
                  const GradCheckOptions& options = {}) {
  using Wide = long double;

  const ForwardResult<Scalar> fwd = forward(model, inputs);
  const auto [value, logit_grad] = loss(fwd.logits);
  (void)value;
  const ModelGradients<Scalar> analytic = backward(model, fwd.trace, logit_grad);

  // Flat addressing: (layer, is_bias, flat index within the tensor).
  struct Slot {
    std::size_t layer;
    bool bias;
    Eigen::Index index;
  };
  std::vector<Slot> slots;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < model.layers[l].weights.size(); ++i) slots.push_back({l, false, i});
    for (Eigen::Index i = 0; i < model.layers[l].bias.size(); ++i) slots.push_back({l, true, i});
  }
  if (slots.size() > options.full_check_limit) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(std::min(slots.size(), std::max<std::size_t>(options.subset_size, 200)));
  }

  ModelParams<Wide> wide = model.template cast<Wide>();
  const Matrix<Wide> wide_inputs = inputs.template cast<Wide>();
  const Wide h = static_cast<Wide>(options.step);

  auto coeff = [](auto& params, const Slot& s) -> auto& {
    return s.bias ? params.layers[s.layer].bias(s.index) : params.layers[s.layer].weights(s.index);
  };
  auto eval = [&]() -> Wide { return loss(predict_logits(wide, wide_inputs)).first; };

  double worst = 0.0;
  for (const Slot& s : slots) {
    Wide& w = coeff(wide, s);
    const Wide saved = w;
    w = saved + h;
    const Wide plus = eval();
    w = saved - h;
    const Wide minus = eval();
    w = saved;
    const double numeric = static_cast<double>((plus - minus) / (2 * h));
    const double exact = static_cast<double>(coeff(analytic, s));
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(exact - numeric) / denom);
  }
  return worst;
}

}  // namespace cqkd
