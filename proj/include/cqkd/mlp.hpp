#pragma once

// Dense rectifier network over flattened inputs. Batches are matrices with
// one sample per column, so a single input vector is a batch of one.

#include "cqkd/prob_math.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cqkd {

template <typename Scalar>
struct LayerParams {
  Matrix<Scalar> weights;  // out x in
  Vector<Scalar> bias;     // out

  Eigen::Index in() const { return weights.cols(); }
  Eigen::Index out() const { return weights.rows(); }

  bool operator==(const LayerParams& other) const {
    return weights.rows() == other.weights.rows() && weights.cols() == other.weights.cols() &&
           bias.size() == other.bias.size() && weights == other.weights && bias == other.bias;
  }
};

/// Hidden layers use a rectifier, the output layer is affine (logits).
/// The same type doubles as the gradient container.
template <typename Scalar>
struct ModelParams {
  std::vector<LayerParams<Scalar>> layers;

  Eigen::Index input_size() const { return layers.empty() ? 0 : layers.front().in(); }
  Eigen::Index output_size() const { return layers.empty() ? 0 : layers.back().out(); }

  std::vector<Eigen::Index> layer_sizes() const {
    std::vector<Eigen::Index> sizes;
    if (layers.empty()) return sizes;
    sizes.push_back(input_size());
    for (const auto& layer : layers) sizes.push_back(layer.out());
    return sizes;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
    return n;
  }

  bool same_shape(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].weights.rows() != other.layers[l].weights.rows() ||
          layers[l].weights.cols() != other.layers[l].weights.cols() ||
          layers[l].bias.size() != other.layers[l].bias.size()) {
        return false;
      }
    }
    return true;
  }

  /// Zero-filled parameters of identical shape.
  ModelParams zeros_like() const {
    ModelParams z;
    z.layers.reserve(layers.size());
    for (const auto& layer : layers) {
      z.layers.push_back({Matrix<Scalar>::Zero(layer.out(), layer.in()), Vector<Scalar>::Zero(layer.out())});
    }
    return z;
  }

  template <typename NewScalar>
  ModelParams<NewScalar> cast() const {
    ModelParams<NewScalar> m;
    m.layers.reserve(layers.size());
    for (const auto& layer : layers) {
      m.layers.push_back({layer.weights.template cast<NewScalar>(), layer.bias.template cast<NewScalar>()});
    }
    return m;
  }

  bool operator==(const ModelParams& other) const { return layers == other.layers; }
};

template <typename Scalar>
using ModelGradients = ModelParams<Scalar>;

/// Throws std::invalid_argument unless adjacent layers agree, there is an
/// output of size >= 2 and every parameter is finite.
template <typename Scalar>
void check_model(const ModelParams<Scalar>& model) {
  if (model.layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    if (layer.in() < 1 || layer.out() < 1 || layer.bias.size() != layer.out()) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has inconsistent dimensions");
    }
    if (l > 0 && layer.in() != model.layers[l - 1].out()) {
      throw std::invalid_argument("layer " + std::to_string(l) + " input does not match previous output");
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
  if (model.output_size() < 2) throw std::invalid_argument("model needs at least 2 outputs");
}

/// Xavier-uniform weights from a seeded mt19937_64, zero biases. Weights are
/// drawn layer by layer in row-major order.
template <typename Scalar = double>
ModelParams<Scalar> init_model(const std::vector<Eigen::Index>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("layer_sizes needs an input and an output size");
  }
  for (auto s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelParams<Scalar> model;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const Eigen::Index in = layer_sizes[l];
    const Eigen::Index out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    LayerParams<Scalar> layer{Matrix<Scalar>(out, in), Vector<Scalar>::Zero(out)};
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = static_cast<Scalar>(dist(rng));
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

/// Inputs seen by each layer during a forward pass. layer_inputs[l + 1] is the
/// post-rectifier output of hidden layer l.
template <typename Scalar>
struct ActivationTrace {
  std::vector<Matrix<Scalar>> layer_inputs;

  Eigen::Index batch_size() const { return layer_inputs.empty() ? 0 : layer_inputs.front().cols(); }
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> logits;  // K x batch
  ActivationTrace<Scalar> trace;
};

namespace detail {

template <typename Scalar, typename Derived>
void check_input(const ModelParams<Scalar>& model, const Eigen::MatrixBase<Derived>& input) {
  if (model.layers.empty()) throw std::invalid_argument("model has no layers");
  if (input.rows() != model.input_size()) {
    throw std::invalid_argument("input has " + std::to_string(input.rows()) + " rows, model expects " +
                                std::to_string(model.input_size()));
  }
  if (!input.allFinite()) throw std::invalid_argument("input has non-finite entries");
}

}  // namespace detail

template <typename Scalar, typename Derived>
ForwardResult<Scalar> forward(const ModelParams<Scalar>& model, const Eigen::MatrixBase<Derived>& input) {
  detail::check_input(model, input);
  ForwardResult<Scalar> result;
  auto& inputs = result.trace.layer_inputs;
  inputs.reserve(model.layers.size());
  inputs.emplace_back(input);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix<Scalar> pre = layer.weights * inputs.back();
    pre.colwise() += layer.bias;
    if (l + 1 < model.layers.size()) {
      inputs.emplace_back(pre.cwiseMax(Scalar(0)));
    } else {
      result.logits = std::move(pre);
    }
  }
  return result;
}

/// Forward pass without keeping the trace.
template <typename Scalar, typename Derived>
Matrix<Scalar> predict_logits(const ModelParams<Scalar>& model, const Eigen::MatrixBase<Derived>& input) {
  detail::check_input(model, input);
  Matrix<Scalar> act = input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Matrix<Scalar> pre = model.layers[l].weights * act;
    pre.colwise() += model.layers[l].bias;
    act = (l + 1 < model.layers.size()) ? Matrix<Scalar>(pre.cwiseMax(Scalar(0))) : std::move(pre);
  }
  return act;
}

/// Reverse-mode gradient of sum(logits .* logit_grad) with respect to every
/// parameter. The rectifier subgradient at 0 is 0.
template <typename Scalar, typename Derived>
ModelGradients<Scalar> backward(const ModelParams<Scalar>& model, const ActivationTrace<Scalar>& trace,
                                const Eigen::MatrixBase<Derived>& logit_grad) {
  const std::size_t depth = model.layers.size();
  if (depth == 0 || trace.layer_inputs.size() != depth) {
    throw std::invalid_argument("activation trace does not match model depth");
  }
  const Eigen::Index batch = trace.batch_size();
  for (std::size_t l = 0; l < depth; ++l) {
    if (trace.layer_inputs[l].rows() != model.layers[l].in() || trace.layer_inputs[l].cols() != batch) {
      throw std::invalid_argument("activation trace is incompatible with layer " + std::to_string(l));
    }
  }
  if (logit_grad.rows() != model.output_size() || logit_grad.cols() != batch) {
    throw std::invalid_argument("logit gradient shape does not match the forward batch");
  }

  ModelGradients<Scalar> grads;
  grads.layers.resize(depth);
  Matrix<Scalar> delta = logit_grad;
  for (std::size_t l = depth; l-- > 0;) {
    const Matrix<Scalar>& in = trace.layer_inputs[l];
    grads.layers[l].weights.noalias() = delta * in.transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    if (l > 0) {
      Matrix<Scalar> back = model.layers[l].weights.transpose() * delta;
      delta = (in.array() > Scalar(0)).select(back, Scalar(0));
    }
  }
  return grads;
}

}  // namespace cqkd
