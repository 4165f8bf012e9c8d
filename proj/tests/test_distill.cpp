#include "cqkd/distill.hpp"
#include "cqkd/grad_check.hpp"
#include "cqkd/model_io.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cmath>

using namespace cqkd;

namespace {

struct Toy {
  Dataset train;
  Dataset validation;
};

Toy toy(int factor, int n = 200, int k = 4) {
  return {make_pairs(generate_synthetic(n, k, 16, 0.1, 1, Split::train), factor),
          make_pairs(generate_synthetic(n / 4, k, 16, 0.1, 2, Split::validation), factor)};
}

TrainConfig small_config(int factor) {
  TrainConfig c;
  c.factor = factor;
  c.epochs = 3;
  c.batch_size = 16;
  c.teacher_hidden = {16};
  c.student_hidden = {12};
  return c;
}

}  // namespace

TEST_CASE("cqkd_loss decomposes into cross-entropy and KL terms") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto zs = test::random_logits(rng, 6);
    const auto zt = test::random_logits(rng, 6);
    const Eigen::Index y = trial % 6;
    for (double tau : {1.0, 10.0, 20.0}) {
      const double h = cross_entropy(y, softmax_tau(zs, Temperature(1)));
      const double d = kl_divergence(softmax_tau(zt, Temperature(tau)), softmax_tau(zs, Temperature(tau)));
      CHECK(std::abs(cqkd_loss(zs, zt, y, 0.0, Temperature(tau)).loss - h) < 1e-12);
      CHECK(std::abs(cqkd_loss(zs, zt, y, 1.0, Temperature(tau)).loss - d) < 1e-12);
      CHECK(std::abs(cqkd_loss(zs, zt, y, 0.5, Temperature(tau)).loss - (0.5 * h + 0.5 * d)) < 1e-12);
      CHECK(std::abs(cqkd_loss(zs, zt, y, 0.5, Temperature(tau), true).loss - (0.5 * h + 0.5 * tau * tau * d)) <
            1e-9);
    }
  }
  const Vector<double> z = Vector<double>::Zero(3);
  CHECK_THROWS_AS(cqkd_loss(z, z, 0, 1.5, Temperature(1)), std::invalid_argument);
  CHECK_THROWS_AS(cqkd_loss(z, Vector<double>::Zero(4), 0, 0.5, Temperature(1)), std::invalid_argument);
}

TEST_CASE("cqkd_loss is affine in alpha") {
  std::mt19937_64 rng(2);
  const auto zs = test::random_logits(rng, 5);
  const auto zt = test::random_logits(rng, 5);
  const double a = cqkd_loss(zs, zt, 3, 0.2, Temperature(10)).loss;
  const double b = cqkd_loss(zs, zt, 3, 0.5, Temperature(10)).loss;
  const double c = cqkd_loss(zs, zt, 3, 0.8, Temperature(10)).loss;
  CHECK(std::abs((b - a) - (c - b)) < 1e-12);
}

TEST_CASE("cqkd gradient matches finite differences of the loss") {
  std::mt19937_64 rng(3);
  const auto zs = test::random_logits(rng, 5);
  const auto zt = test::random_logits(rng, 5);
  for (double tau : {1.0, 10.0, 20.0}) {
    const auto r = cqkd_loss(zs, zt, 2, 0.5, Temperature(tau));
    for (Eigen::Index i = 0; i < 5; ++i) {
      Vector<double> p = zs, m = zs;
      p(i) += 1e-6;
      m(i) -= 1e-6;
      const double numeric = (cqkd_loss(p, zt, 2, 0.5, Temperature(tau)).loss -
                              cqkd_loss(m, zt, 2, 0.5, Temperature(tau)).loss) / 2e-6;
      CHECK(std::abs(numeric - r.grad(i)) / std::max({std::abs(numeric), std::abs(r.grad(i)), 1e-8}) < 1e-6);
    }
  }
}

TEST_CASE("dml_loss decomposition and peer identity") {
  std::mt19937_64 rng(4);
  const auto p = test::random_probs(rng, 5);
  std::vector<Vector<double>> same{p, p};
  CHECK(std::abs(dml_loss<double>(same, 0, 1).loss - cross_entropy(1, p)) < 1e-12);
  std::vector<Vector<double>> four(4, p);
  CHECK(std::abs(dml_loss<double>(four, 2, 3).loss - cross_entropy(3, p)) < 1e-12);

  std::vector<Vector<double>> three{test::random_probs(rng, 5), test::random_probs(rng, 5), test::random_probs(rng, 5)};
  for (std::size_t i = 0; i < 3; ++i) {
    double kl = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j != i) kl += kl_divergence(three[j], three[i]);
    }
    CHECK(std::abs(dml_loss<double>(three, i, 0).loss - (cross_entropy(0, three[i]) + kl / 2.0)) < 1e-12);
  }
  CHECK_THROWS_AS(dml_loss<double>(std::vector<Vector<double>>{p}, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(dml_loss<double>(three, 3, 0), std::invalid_argument);
}

TEST_CASE("batch losses pass the gradient checker through a network") {
  std::mt19937_64 rng(5);
  const auto net = init_model({10, 16, 8, 4}, 6);
  const Matrix<double> x = test::random_matrix(rng, 10, 5);
  const std::vector<int> y{0, 1, 2, 3, 1};
  const Matrix<double> teacher = test::random_matrix(rng, 4, 5, 4.0);
  auto ce = [&](const auto& z) { return cross_entropy_batch(z, y); };
  CHECK(grad_check(net, x, ce) < 1e-5);
  for (double tau : {1.0, 10.0, 20.0}) {
    auto kd = [&](const auto& z) {
      using S = typename std::decay_t<decltype(z)>::Scalar;
      return cqkd_batch<S>(z, teacher.cast<S>(), y, 0.5, Temperature(tau));
    };
    CHECK(grad_check(net, x, kd) < 1e-5);
  }
  const std::vector<Matrix<double>> peers{Matrix<double>(), softmax_tau_columns(test::random_matrix(rng, 4, 5), Temperature(1)),
                                          softmax_tau_columns(test::random_matrix(rng, 4, 5), Temperature(1))};
  auto dml = [&](const auto& z) {
    using S = typename std::decay_t<decltype(z)>::Scalar;
    std::vector<Matrix<S>> cohort;
    for (const auto& p : peers) cohort.push_back(p.cast<S>());
    return dml_batch<S>(z, cohort, 0, y);
  };
  CHECK(grad_check(net, x, dml) < 1e-5);
}

TEST_CASE("method names") {
  for (auto m : {Method::teacher, Method::supervised, Method::cqkd, Method::dml}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(method_from_string("kd"), std::invalid_argument);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(0, 1) != derive_seed(0, 2));
  CHECK(derive_seed(0, 1) != derive_seed(1, 1));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}

TEST_CASE("supervised training basics") {
  const auto data = toy(2);
  auto config = small_config(2);
  config.epochs = 0;
  const auto untrained = train_supervised(config, data.train, data.validation);
  CHECK(untrained.metrics.empty());
  CHECK(untrained.model.layer_sizes() == std::vector<Eigen::Index>{64, 12, 4});

  config.epochs = 3;
  const auto a = train_supervised(config, data.train, data.validation);
  const auto b = train_supervised(config, data.train, data.validation);
  CHECK(encode_model(a.model) == encode_model(b.model));
  REQUIRE(a.metrics.size() == 6);
  CHECK(a.metrics[0].split == Split::train);
  CHECK(a.metrics[1].split == Split::validation);
  CHECK(a.metrics[5].epoch == 3);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].loss == b.metrics[i].loss);
    CHECK(a.metrics[i].accuracy == b.metrics[i].accuracy);
  }

  auto wrong = config;
  wrong.factor = 4;
  CHECK_THROWS_AS(train_supervised(wrong, data.train, data.validation), std::invalid_argument);
}

TEST_CASE("supervised training overfits a small set") {
  const Dataset train = make_pairs(generate_synthetic(64, 4, 16, 0.15, 8), 1);
  auto config = small_config(1);
  config.student_hidden = {64};
  config.epochs = 150;
  config.batch_size = 16;
  config.eta_max = 1e-2;
  config.weight_decay = 0.0;
  const auto r = train_supervised(config, train, train);
  CHECK(evaluate(r.model, train, Resolution::low, 10).accuracy == 1.0);
}

TEST_CASE("teacher trains on full resolution and round-trips") {
  const auto data = toy(4);
  const auto t = train_teacher(small_config(4), data.train, data.validation);
  CHECK(t.model.input_size() == 256);
  CHECK(decode_model(encode_model(t.model)) == t.model);
}

TEST_CASE("distillation leaves the teacher untouched and logs exact losses") {
  const auto data = toy(4);
  const auto config = small_config(4);
  const auto teacher = train_teacher(config, data.train, data.validation).model;
  const auto before = encode_model(teacher);

  int steps = 0;
  double worst = 0.0;
  double current_tau = 0.0;
  auto observe = [&](const CqkdStep& s) {
    ++steps;
    const auto again = cqkd_batch<double>(s.student_logits, s.teacher_logits, s.labels, config.alpha,
                                          Temperature(current_tau));
    worst = std::max(worst, std::abs(again.first - s.loss));
    // Teacher logits are the frozen teacher's own outputs on those samples.
    CHECK(s.teacher_logits.cols() == s.student_logits.cols());
  };
  for (double tau : {10.0, 20.0}) {
    auto c = config;
    c.tau = tau;
    current_tau = tau;
    const auto r = train_cqkd(teacher, c, data.train, data.validation, observe);
    CHECK(r.metrics.size() == 6);
    CHECK(r.model.input_size() == 16);
  }
  CHECK(steps == 2 * 3 * 13);
  CHECK(worst < 1e-12);
  CHECK(encode_model(teacher) == before);

  auto bad = config;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(train_cqkd(teacher, bad, data.train, data.validation), std::invalid_argument);
  CHECK_THROWS_AS(train_cqkd(init_model({64, 4}, 1), config, data.train, data.validation), std::invalid_argument);
}

TEST_CASE("deep mutual learning") {
  const auto data = toy(2);
  auto config = small_config(2);
  config.cohort_size = 2;
  config.dml_seed_stride = 0;
  config.dml_peer_outputs = PeerOutputs::step_start;
  const auto sym = train_dml(config, data.train, data.validation);
  REQUIRE(sym.students.size() == 2);
  CHECK(encode_model(sym.students[0]) == encode_model(sym.students[1]));

  config.cohort_size = 3;
  config.dml_seed_stride = 1;
  config.dml_peer_outputs = PeerOutputs::fresh;
  const auto cohort = train_dml(config, data.train, data.validation);
  REQUIRE(cohort.students.size() == 3);
  CHECK_FALSE(cohort.students[0] == cohort.students[1]);
  const auto mean = cohort_mean(cohort.metrics);
  REQUIRE(mean.size() == 6);
  CHECK(std::abs(mean[1].accuracy - (cohort.metrics[0][1].accuracy + cohort.metrics[1][1].accuracy +
                                     cohort.metrics[2][1].accuracy) / 3.0) < 1e-15);
  const auto again = train_dml(config, data.train, data.validation);
  for (std::size_t i = 0; i < 3; ++i) CHECK(encode_model(again.students[i]) == encode_model(cohort.students[i]));

  config.cohort_size = 1;
  CHECK_THROWS_AS(train_dml(config, data.train, data.validation), std::invalid_argument);
}

TEST_CASE("dml student 0 starts from the supervised initialisation") {
  const auto data = toy(2);
  auto config = small_config(2);
  config.epochs = 0;
  const auto sup = train_supervised(config, data.train, data.validation);
  const auto dml = train_dml(config, data.train, data.validation);
  CHECK(dml.students[0] == sup.model);
}
