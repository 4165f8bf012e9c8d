#include "cqkd/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace cqkd {

namespace {

// Seed streams shared by all trainers so that, for one seed, the supervised
// student, the distilled student and DML member 0 start from the same weights
// and see the same batch order.
constexpr std::uint64_t kStudentInitStream = 1;
constexpr std::uint64_t kTeacherInitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_splits(const TrainConfig& config, const Dataset& train, const Dataset& validation) {
  if (train.size() == 0 || validation.size() == 0) throw std::invalid_argument("empty training or validation set");
  if (train.num_classes != validation.num_classes || train.h_full != validation.h_full ||
      train.factor != validation.factor) {
    throw std::invalid_argument("training and validation sets have different geometry");
  }
  if (train.factor != config.factor) {
    throw std::invalid_argument("dataset factor " + std::to_string(train.factor) + " does not match config factor " +
                                std::to_string(config.factor));
  }
}

std::int64_t total_steps(const TrainConfig& config, std::size_t n) {
  const auto per_epoch = static_cast<std::int64_t>((n + config.batch_size - 1) / config.batch_size);
  return per_epoch * config.epochs;
}

double learning_rate(const TrainConfig& config, std::int64_t step, std::int64_t total) {
  if (total < 2) return config.eta_max;
  return cyclical_lr(step, {config.eta_max, total, config.floor_fraction});
}

AdamWOptions adamw_options(const TrainConfig& config) {
  AdamWOptions opt;
  opt.weight_decay = config.weight_decay;
  return opt;
}

std::vector<int> gather(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y[i]);
  return out;
}

Matrix<double> gather_columns(const Matrix<double>& m, const std::vector<std::size_t>& idx) {
  Matrix<double> out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}

EpochMetrics train_split_metrics(const ModelParams<double>& model, const Dataset& train, Resolution res, int bins,
                                 int epoch, double loss, Clock::time_point start) {
  EpochMetrics m = evaluate(model, train, res, bins);
  m.epoch = epoch;
  m.split = Split::train;
  m.loss = loss;
  m.elapsed_seconds = seconds_since(start);
  return m;
}

EpochMetrics validation_metrics(const ModelParams<double>& model, const Dataset& validation, Resolution res,
                                int bins, int epoch, Clock::time_point start) {
  EpochMetrics m = evaluate(model, validation, res, bins);
  m.epoch = epoch;
  m.split = Split::validation;
  m.elapsed_seconds = seconds_since(start);
  return m;
}

// Single-network loop shared by the supervised, teacher and distillation
// trainers. objective(batch indices, logits, epoch, step) -> (loss, dL/dlogits).
template <typename Objective>
TrainResult train_single(ModelParams<double> model, const TrainConfig& config, const Dataset& train,
                         const Dataset& validation, Resolution res, Objective&& objective) {
  const auto start = Clock::now();
  TrainResult result;
  auto state = OptimizerState<double>::for_model(model);
  const auto opt = adamw_options(config);
  const std::int64_t total = total_steps(config, train.size());
  const std::uint64_t shuffle_seed = derive_seed(config.seed, kShuffleStream);
  std::int64_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (const auto& idx : batches(train, static_cast<std::size_t>(config.batch_size),
                                   static_cast<std::uint64_t>(epoch), shuffle_seed)) {
      const Matrix<double> x = stack_inputs(train, res, idx);
      const ForwardResult<double> fwd = forward(model, x);
      const auto [loss, grad] = objective(idx, fwd.logits, epoch + 1, batch_no++);
      const auto grads = backward(model, fwd.trace, grad);
      adamw_step(model, grads, state, learning_rate(config, step++, total), opt);
      loss_sum += loss * static_cast<double>(idx.size());
    }
    const double mean_loss = loss_sum / static_cast<double>(train.size());
    result.metrics.push_back(train_split_metrics(model, train, res, config.bins, epoch + 1, mean_loss, start));
    result.metrics.push_back(validation_metrics(model, validation, res, config.bins, epoch + 1, start));
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

const char* to_string(Method method) {
  switch (method) {
    case Method::teacher: return "teacher";
    case Method::supervised: return "supervised";
    case Method::cqkd: return "cqkd";
    case Method::dml: return "dml";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "teacher") return Method::teacher;
  if (name == "supervised") return Method::supervised;
  if (name == "cqkd") return Method::cqkd;
  if (name == "dml") return Method::dml;
  throw std::invalid_argument("unknown method '" + name + "'");
}

void TrainConfig::validate(Method method) const {
  if (method == Method::cqkd && !(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1)");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(eta_max > 0.0)) throw std::invalid_argument("eta_max must be positive");
  if (!(floor_fraction >= 0.0 && floor_fraction < 1.0)) throw std::invalid_argument("floor_fraction must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (factor < 1) throw std::invalid_argument("factor must be at least 1");
  if (method == Method::dml && cohort_size < 2) throw std::invalid_argument("cohort_size must be at least 2");
  if (bins < 1) throw std::invalid_argument("bins must be at least 1");
  for (auto h : teacher_hidden) {
    if (h < 1) throw std::invalid_argument("teacher hidden sizes must be positive");
  }
  for (auto h : student_hidden) {
    if (h < 1) throw std::invalid_argument("student hidden sizes must be positive");
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Eigen::Index> architecture(Eigen::Index input_size, const std::vector<Eigen::Index>& hidden,
                                       Eigen::Index num_classes) {
  std::vector<Eigen::Index> sizes{input_size};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(num_classes);
  return sizes;
}

std::vector<PredictionRecord> predict_records(const ModelParams<double>& model, const Dataset& dataset,
                                              Resolution res) {
  const Matrix<double> probs = softmax_tau_columns(predict_logits(model, stack_inputs(dataset, res)), Temperature(1.0));
  std::vector<PredictionRecord> records;
  records.reserve(dataset.size());
  for (std::size_t j = 0; j < dataset.size(); ++j) {
    records.push_back(make_record(probs.col(static_cast<Eigen::Index>(j)), dataset.pairs[j].label));
  }
  return records;
}

EpochMetrics evaluate(const ModelParams<double>& model, const Dataset& dataset, Resolution res, int bins) {
  const auto records = predict_records(model, dataset, res);
  const auto report = calibration_report(records, bins);
  EpochMetrics m;
  m.split = dataset.split;
  double ce = 0.0;
  for (const auto& r : records) ce += cross_entropy(r.actual, *r.probs);
  m.loss = ce / static_cast<double>(records.size());
  m.accuracy = report.accuracy;
  m.entropy = report.mean_entropy.value_or(0.0);
  m.ece = report.ece;
  return m;
}

TrainResult train_supervised(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                             Resolution res) {
  config.validate(Method::supervised);
  check_splits(config, train, validation);
  const auto& hidden = res == Resolution::full ? config.teacher_hidden : config.student_hidden;
  const std::uint64_t init_stream = res == Resolution::full ? kTeacherInitStream : kStudentInitStream;
  auto model = init_model(architecture(train.input_size(res), hidden, train.num_classes),
                          derive_seed(config.seed, init_stream));
  const std::vector<int> y = labels(train);
  return train_single(std::move(model), config, train, validation, res,
                      [&](const std::vector<std::size_t>& idx, const Matrix<double>& logits, int, std::size_t) {
                        const auto batch_y = gather(y, idx);
                        return cross_entropy_batch<double>(logits, batch_y);
                      });
}

TrainResult train_teacher(const TrainConfig& config, const Dataset& train, const Dataset& validation) {
  return train_supervised(config, train, validation, Resolution::full);
}

TrainResult train_cqkd(const ModelParams<double>& teacher, const TrainConfig& config, const Dataset& train,
                       const Dataset& validation, const CqkdObserver& observer) {
  config.validate(Method::cqkd);
  check_splits(config, train, validation);
  check_model(teacher);
  if (teacher.input_size() != train.input_size(Resolution::full)) {
    throw std::invalid_argument("teacher expects " + std::to_string(teacher.input_size()) +
                                " inputs but full-resolution images have " +
                                std::to_string(train.input_size(Resolution::full)));
  }
  if (teacher.output_size() != train.num_classes) throw std::invalid_argument("teacher class count mismatch");

  // The teacher is frozen, so its logits can be computed once up front.
  const Matrix<double> teacher_logits = predict_logits(teacher, stack_inputs(train, Resolution::full));
  const Temperature tau(config.tau);
  auto model = init_model(architecture(train.input_size(Resolution::low), config.student_hidden, train.num_classes),
                          derive_seed(config.seed, kStudentInitStream));
  const std::vector<int> y = labels(train);
  return train_single(
      std::move(model), config, train, validation, Resolution::low,
      [&](const std::vector<std::size_t>& idx, const Matrix<double>& logits, int epoch, std::size_t step) {
        const auto batch_y = gather(y, idx);
        const Matrix<double> zt = gather_columns(teacher_logits, idx);
        auto out = cqkd_batch<double>(logits, zt, batch_y, config.alpha, tau, config.scale_kl_by_tau_squared);
        if (observer) observer(CqkdStep{epoch, step, logits, zt, batch_y, out.first});
        return out;
      });
}

CohortResult train_dml(const TrainConfig& config, const Dataset& train, const Dataset& validation) {
  config.validate(Method::dml);
  check_splits(config, train, validation);
  const auto start = Clock::now();
  const auto m = static_cast<std::size_t>(config.cohort_size);
  const auto arch = architecture(train.input_size(Resolution::low), config.student_hidden, train.num_classes);

  CohortResult result;
  std::vector<OptimizerState<double>> states;
  for (std::size_t i = 0; i < m; ++i) {
    result.students.push_back(init_model(arch, derive_seed(config.seed + i * config.dml_seed_stride, kStudentInitStream)));
    states.push_back(OptimizerState<double>::for_model(result.students.back()));
  }
  result.metrics.resize(m);

  const auto opt = adamw_options(config);
  const std::int64_t total = total_steps(config, train.size());
  const std::uint64_t shuffle_seed = derive_seed(config.seed, kShuffleStream);
  const std::vector<int> y = labels(train);
  const Temperature unit(1.0);
  std::int64_t step = 0;

  std::vector<ForwardResult<double>> fwd(m);
  std::vector<Matrix<double>> probs(m);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<double> loss_sum(m, 0.0);
    for (const auto& idx : batches(train, static_cast<std::size_t>(config.batch_size),
                                   static_cast<std::uint64_t>(epoch), shuffle_seed)) {
      const Matrix<double> x = stack_inputs(train, Resolution::low, idx);
      const auto batch_y = gather(y, idx);
      for (std::size_t i = 0; i < m; ++i) {
        fwd[i] = forward(result.students[i], x);
        probs[i] = softmax_tau_columns(fwd[i].logits, unit);
      }
      const double lr = learning_rate(config, step++, total);
      for (std::size_t i = 0; i < m; ++i) {
        const auto [loss, grad] = dml_batch<double>(fwd[i].logits, probs, i, batch_y);
        const auto grads = backward(result.students[i], fwd[i].trace, grad);
        adamw_step(result.students[i], grads, states[i], lr, opt);
        loss_sum[i] += loss * static_cast<double>(idx.size());
        if (config.dml_peer_outputs == PeerOutputs::fresh && i + 1 < m) {
          fwd[i] = forward(result.students[i], x);
          probs[i] = softmax_tau_columns(fwd[i].logits, unit);
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double mean_loss = loss_sum[i] / static_cast<double>(train.size());
      result.metrics[i].push_back(train_split_metrics(result.students[i], train, Resolution::low, config.bins,
                                                      epoch + 1, mean_loss, start));
      result.metrics[i].push_back(
          validation_metrics(result.students[i], validation, Resolution::low, config.bins, epoch + 1, start));
    }
  }
  return result;
}

std::vector<EpochMetrics> cohort_mean(const std::vector<std::vector<EpochMetrics>>& metrics) {
  if (metrics.empty()) return {};
  std::vector<EpochMetrics> mean = metrics.front();
  const auto m = static_cast<double>(metrics.size());
  for (std::size_t r = 0; r < mean.size(); ++r) {
    double loss = 0, acc = 0, ent = 0, ece_sum = 0, elapsed = 0;
    for (const auto& student : metrics) {
      if (student.size() != mean.size()) throw std::invalid_argument("cohort metric lists differ in length");
      loss += student[r].loss;
      acc += student[r].accuracy;
      ent += student[r].entropy;
      ece_sum += student[r].ece;
      elapsed = std::max(elapsed, student[r].elapsed_seconds);
    }
    mean[r].loss = loss / m;
    mean[r].accuracy = acc / m;
    mean[r].entropy = ent / m;
    mean[r].ece = ece_sum / m;
    mean[r].elapsed_seconds = elapsed;
  }
  return mean;
}

}  // namespace cqkd
