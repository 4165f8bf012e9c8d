#pragma once

// Training objectives and the three trainers: supervised baseline,
// cross-quality distillation from a frozen full-resolution teacher, and
// deep mutual learning within a cohort of low-resolution students.

#include "cqkd/calibration.hpp"
#include "cqkd/data.hpp"
#include "cqkd/mlp.hpp"
#include "cqkd/optimizer.hpp"
#include "cqkd/prob_math.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cqkd {

template <typename Scalar>
struct LossResult {
  Scalar loss;
  Vector<Scalar> grad;  // with respect to the trained network's logits
};

/// (1 - alpha) H(y, softmax(z_s)) + alpha KL(softmax_tau(z_t) || softmax_tau(z_s)).
/// Teacher logits are constants. alpha may be 0 or 1 here; trainers require
/// the open interval. scale_by_tau_squared multiplies the KL term by tau^2.
template <typename DerivedS, typename DerivedT>
LossResult<typename DerivedS::Scalar> cqkd_loss(const Eigen::MatrixBase<DerivedS>& z_s,
                                                const Eigen::MatrixBase<DerivedT>& z_t, Eigen::Index y,
                                                double alpha, Temperature tau,
                                                bool scale_by_tau_squared = false) {
  using Scalar = typename DerivedS::Scalar;
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (z_s.size() != z_t.size()) throw std::invalid_argument("student and teacher logits differ in length");
  const Vector<Scalar> p1 = softmax_tau(z_s, Temperature(1.0));
  const Vector<Scalar> ps = softmax_tau(z_s, tau);
  const Vector<Scalar> pt = softmax_tau(z_t, tau);
  const Scalar a = Scalar(alpha);
  const Scalar kl_weight = Scalar(scale_by_tau_squared ? tau.value() * tau.value() : 1.0);
  const Scalar inv_tau = Scalar(1.0 / tau.value());

  LossResult<Scalar> r;
  r.loss = (Scalar(1) - a) * cross_entropy(y, p1) + a * kl_weight * kl_divergence(pt, ps);
  Vector<Scalar> ce_grad = p1;
  ce_grad(y) -= Scalar(1);
  r.grad = (Scalar(1) - a) * ce_grad + (a * kl_weight * inv_tau) * (ps - pt);
  return r;
}

/// H(y, p^i) + mean over j != i of KL(p^j || p^i), all at temperature 1.
/// The gradient is with respect to the logits of network i.
template <typename Scalar>
LossResult<Scalar> dml_loss(std::span<const Vector<Scalar>> probs, std::size_t i, Eigen::Index y) {
  const std::size_t m = probs.size();
  if (m < 2) throw std::invalid_argument("dml_loss needs at least 2 networks");
  if (i >= m) throw std::invalid_argument("network index out of range");
  const Vector<Scalar>& pi = probs[i];
  Vector<Scalar> peer_mean = Vector<Scalar>::Zero(pi.size());
  Scalar kl_sum = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (j == i) continue;
    if (probs[j].size() != pi.size()) throw std::invalid_argument("cohort outputs differ in length");
    kl_sum += kl_divergence(probs[j], pi);
    peer_mean += probs[j];
  }
  const Scalar inv_peers = Scalar(1) / Scalar(m - 1);
  peer_mean *= inv_peers;

  LossResult<Scalar> r;
  r.loss = cross_entropy(y, pi) + inv_peers * kl_sum;
  r.grad = Scalar(2) * pi - peer_mean;
  r.grad(y) -= Scalar(1);
  return r;
}

// Batch objectives: mean over columns, gradient already divided by the batch
// size. Usable as grad_check losses for any scalar.

template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> cross_entropy_batch(const Matrix<Scalar>& logits, std::span<const int> y) {
  if (static_cast<std::size_t>(logits.cols()) != y.size()) throw std::invalid_argument("label count mismatch");
  const Scalar inv_n = Scalar(1) / Scalar(logits.cols());
  Matrix<Scalar> grad = softmax_tau_columns(logits, Temperature(1.0));
  Scalar loss = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    loss += cross_entropy(y[static_cast<std::size_t>(j)], Vector<Scalar>(grad.col(j)));
    grad(y[static_cast<std::size_t>(j)], j) -= Scalar(1);
  }
  return {loss * inv_n, grad * inv_n};
}

template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> cqkd_batch(const Matrix<Scalar>& student_logits,
                                             const Matrix<Scalar>& teacher_logits, std::span<const int> y,
                                             double alpha, Temperature tau, bool scale_by_tau_squared = false) {
  if (student_logits.rows() != teacher_logits.rows() || student_logits.cols() != teacher_logits.cols() ||
      static_cast<std::size_t>(student_logits.cols()) != y.size()) {
    throw std::invalid_argument("cqkd_batch: shape mismatch");
  }
  const Scalar inv_n = Scalar(1) / Scalar(student_logits.cols());
  Matrix<Scalar> grad(student_logits.rows(), student_logits.cols());
  Scalar loss = 0;
  for (Eigen::Index j = 0; j < student_logits.cols(); ++j) {
    auto r = cqkd_loss(student_logits.col(j), teacher_logits.col(j), y[static_cast<std::size_t>(j)], alpha, tau,
                       scale_by_tau_squared);
    loss += r.loss;
    grad.col(j) = r.grad * inv_n;
  }
  return {loss * inv_n, grad};
}

/// Objective of network i given its logits and the current output
/// probabilities of every cohort member (entry i is ignored).
template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> dml_batch(const Matrix<Scalar>& logits_i,
                                            std::span<const Matrix<Scalar>> cohort_probs, std::size_t i,
                                            std::span<const int> y) {
  if (i >= cohort_probs.size()) throw std::invalid_argument("network index out of range");
  if (static_cast<std::size_t>(logits_i.cols()) != y.size()) throw std::invalid_argument("label count mismatch");
  const Scalar inv_n = Scalar(1) / Scalar(logits_i.cols());
  const Matrix<Scalar> own = softmax_tau_columns(logits_i, Temperature(1.0));
  Matrix<Scalar> grad(logits_i.rows(), logits_i.cols());
  std::vector<Vector<Scalar>> column(cohort_probs.size());
  Scalar loss = 0;
  for (Eigen::Index j = 0; j < logits_i.cols(); ++j) {
    for (std::size_t k = 0; k < cohort_probs.size(); ++k) {
      column[k] = k == i ? Vector<Scalar>(own.col(j)) : Vector<Scalar>(cohort_probs[k].col(j));
    }
    auto r = dml_loss<Scalar>(column, i, y[static_cast<std::size_t>(j)]);
    loss += r.loss;
    grad.col(j) = r.grad * inv_n;
  }
  return {loss * inv_n, grad};
}

enum class Method { teacher, supervised, cqkd, dml };

const char* to_string(Method method);
Method method_from_string(const std::string& name);

/// How DML peers are seen by network i within one step: recomputed after each
/// earlier member's update (fresh), or the snapshot taken at the start of the
/// step.
enum class PeerOutputs { fresh, step_start };

struct TrainConfig {
  double alpha = 0.5;
  double tau = 10.0;
  int epochs = 20;
  int batch_size = 32;
  double eta_max = 1e-3;
  double floor_fraction = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int factor = 4;
  std::vector<Eigen::Index> teacher_hidden = {128};
  std::vector<Eigen::Index> student_hidden = {512};
  int cohort_size = 3;
  bool scale_kl_by_tau_squared = false;
  std::uint64_t dml_seed_stride = 1;
  PeerOutputs dml_peer_outputs = PeerOutputs::fresh;
  int bins = kDefaultBins;

  /// Throws std::invalid_argument if a field is out of range for the method.
  void validate(Method method) const;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  Split split = Split::train;
  double loss = 0.0;
  double accuracy = 0.0;
  double entropy = 0.0;
  double ece = 0.0;
  double elapsed_seconds = 0.0;
};

struct TrainResult {
  ModelParams<double> model;
  std::vector<EpochMetrics> metrics;
};

struct CohortResult {
  std::vector<ModelParams<double>> students;
  std::vector<std::vector<EpochMetrics>> metrics;  // one list per student
};

/// Snapshot of one distillation step, for logging and offline re-checks.
struct CqkdStep {
  int epoch = 0;
  std::size_t step = 0;
  const Matrix<double>& student_logits;
  const Matrix<double>& teacher_logits;
  std::span<const int> labels;
  double loss = 0.0;
};
using CqkdObserver = std::function<void(const CqkdStep&)>;

/// Stream-separated seed derivation (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

std::vector<Eigen::Index> architecture(Eigen::Index input_size, const std::vector<Eigen::Index>& hidden,
                                       Eigen::Index num_classes);

std::vector<PredictionRecord> predict_records(const ModelParams<double>& model, const Dataset& dataset,
                                              Resolution res);

/// Validation-style metrics: loss is mean cross-entropy at temperature 1.
EpochMetrics evaluate(const ModelParams<double>& model, const Dataset& dataset, Resolution res, int bins);

TrainResult train_supervised(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                             Resolution res = Resolution::low);
TrainResult train_teacher(const TrainConfig& config, const Dataset& train, const Dataset& validation);
TrainResult train_cqkd(const ModelParams<double>& teacher, const TrainConfig& config, const Dataset& train,
                       const Dataset& validation, const CqkdObserver& observer = {});
CohortResult train_dml(const TrainConfig& config, const Dataset& train, const Dataset& validation);

/// Element-wise mean of per-student metric lists (elapsed time: maximum).
std::vector<EpochMetrics> cohort_mean(const std::vector<std::vector<EpochMetrics>>& metrics);

}  // namespace cqkd
