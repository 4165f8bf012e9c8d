// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Training criteria use the default experiment config.

#include "cqkd/distill.hpp"
#include "cqkd/errors.hpp"
#include "cqkd/experiment.hpp"
#include "cqkd/grad_check.hpp"
#include "cqkd/model_io.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace cqkd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double elapsed, double budget) {
  const bool ok = o.pass && elapsed < budget;
  if (!ok) ++failures;
  std::printf("[%s] %d %s: %s (%.1f s, budget %.0f s)\n", ok ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
              elapsed, budget);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Vector<double> random_vector(std::mt19937_64& rng, Eigen::Index k, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vector<double> v(k);
  for (Eigen::Index i = 0; i < k; ++i) v(i) = d(rng);
  return v;
}

Matrix<double> random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = d(rng);
  return m;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_oracle() {
  std::mt19937_64 rng(2024);
  const std::vector<std::vector<Eigen::Index>> nets = {{16, 8, 4}, {64, 32, 10}, {256, 64, 10}};
  double worst = 0.0;
  std::string worst_case;
  for (std::size_t n = 0; n < nets.size(); ++n) {
    const auto& sizes = nets[n];
    const auto model = init_model(sizes, 100 + n);
    const Eigen::Index k = sizes.back();
    const Eigen::Index batch = 4;
    const Matrix<double> x = random_matrix(rng, sizes.front(), batch, 1.0);
    std::vector<int> y;
    for (Eigen::Index j = 0; j < batch; ++j) y.push_back(static_cast<int>((j * 3) % k));
    const Matrix<double> teacher = random_matrix(rng, k, batch, 4.0);
    std::vector<Matrix<double>> peers(3);
    peers[1] = softmax_tau_columns(random_matrix(rng, k, batch, 2.0), Temperature(1));
    peers[2] = softmax_tau_columns(random_matrix(rng, k, batch, 2.0), Temperature(1));

    auto track = [&](double err, const std::string& name) {
      if (err > worst) {
        worst = err;
        worst_case = name;
      }
    };
    const std::string tag = std::to_string(sizes.front()) + "x" + std::to_string(sizes[1]) + "x" + std::to_string(k);
    track(grad_check(model, x, [&](const auto& z) { return cross_entropy_batch(z, y); }), tag + " ce");
    for (double tau : {1.0, 10.0, 20.0}) {
      auto kd = [&](const auto& z) {
        using S = typename std::decay_t<decltype(z)>::Scalar;
        return cqkd_batch<S>(z, teacher.cast<S>(), y, 0.5, Temperature(tau));
      };
      track(grad_check(model, x, kd), tag + " cqkd tau " + fmt("%g", tau));
    }
    auto dml = [&](const auto& z) {
      using S = typename std::decay_t<decltype(z)>::Scalar;
      std::vector<Matrix<S>> cohort;
      for (const auto& p : peers) cohort.push_back(p.cast<S>());
      return dml_batch<S>(z, cohort, 0, y);
    };
    track(grad_check(model, x, dml), tag + " dml");
  }
  return {worst < 1e-5, "max relative error " + fmt("%.3e", worst) + " (" + worst_case + ") < 1e-5"};
}

// ---- 2 ---------------------------------------------------------------------

Outcome temperature_properties() {
  std::mt19937_64 rng(7);
  const std::vector<double> taus = {1, 2, 10, 20, 100};
  int monotone_violations = 0, argmax_violations = 0;
  double worst_uniform = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index k = 2 + trial % 19;
    const Vector<double> z = random_vector(rng, k, -10.0, 10.0);
    double previous = -1.0;
    for (double tau : taus) {
      const auto p = softmax_tau(z, Temperature(tau));
      const double h = entropy(p);
      if (h < previous) ++monotone_violations;
      previous = h;
      if (argmax(p) != argmax(z)) ++argmax_violations;
    }
    const auto flat = softmax_tau(z, Temperature(1e6));
    worst_uniform = std::max(worst_uniform, (flat.array() - 1.0 / static_cast<double>(k)).abs().maxCoeff());
  }
  const bool ok = monotone_violations == 0 && argmax_violations == 0 && worst_uniform < 1e-3;
  return {ok, std::to_string(monotone_violations) + " entropy-order violations, " +
                  std::to_string(argmax_violations) + " argmax changes, max |p - 1/K| at tau=1e6 " +
                  fmt("%.2e", worst_uniform)};
}

// ---- 3 ---------------------------------------------------------------------

double brute_force_ece(const std::vector<PredictionRecord>& records, int num_bins) {
  double total = 0.0;
  for (int b = 0; b < num_bins; ++b) {
    const double lo = static_cast<double>(b) / num_bins;
    const double hi = static_cast<double>(b + 1) / num_bins;
    double hits = 0.0, conf = 0.0, count = 0.0;
    for (const auto& r : records) {
      if (!((b == 0 ? r.confidence >= lo : r.confidence > lo) && r.confidence <= hi)) continue;
      count += 1.0;
      conf += r.confidence;
      if (r.predicted == r.actual) hits += 1.0;
    }
    if (count > 0.0) total += count / static_cast<double>(records.size()) * std::abs(hits / count - conf / count);
  }
  return total;
}

Outcome ece_oracle() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(1, 200);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index k = 2 + trial % 9;
    std::uniform_int_distribution<int> label(0, static_cast<int>(k) - 1);
    std::vector<PredictionRecord> records;
    const int n = size(rng);
    const double scale = 0.5 + (trial % 7);
    for (int i = 0; i < n; ++i) {
      const Vector<double> z = random_vector(rng, k, -scale, scale);
      records.push_back(make_record(softmax_tau(z, Temperature(1)), label(rng)));
    }
    for (int b : {1, 5, 10, 15}) worst = std::max(worst, std::abs(ece(records, b) - brute_force_ece(records, b)));
  }
  std::vector<PredictionRecord> half;
  for (int i = 0; i < 100; ++i) half.push_back({0, 1.0, i % 2, std::nullopt});
  const double hand = ece(half, 10);
  return {worst < 1e-12 && hand == 0.5,
          "max |ece - brute force| " + fmt("%.2e", worst) + ", half-correct full-confidence case " + fmt("%.17g", hand)};
}

// ---- 4 ---------------------------------------------------------------------

Outcome loss_decomposition() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index k = 2 + trial % 10;
    const Vector<double> zs = random_vector(rng, k, -8, 8);
    const Vector<double> zt = random_vector(rng, k, -8, 8);
    const Eigen::Index y = trial % k;
    for (double tau : {1.0, 10.0, 20.0}) {
      const double h = cross_entropy(y, softmax_tau(zs, Temperature(1)));
      const double d = kl_divergence(softmax_tau(zt, Temperature(tau)), softmax_tau(zs, Temperature(tau)));
      for (double alpha : {0.0, 0.5, 1.0}) {
        const double composite = cqkd_loss(zs, zt, y, alpha, Temperature(tau)).loss;
        worst = std::max(worst, std::abs(composite - ((1 - alpha) * h + alpha * d)));
      }
    }
    const Vector<double> p = softmax_tau(zs, Temperature(1));
    for (std::size_t m : {2, 3, 5}) {
      const std::vector<Vector<double>> same(m, p);
      worst = std::max(worst, std::abs(dml_loss<double>(same, m - 1, y).loss - cross_entropy(y, p)));
      std::vector<Vector<double>> mixed;
      for (std::size_t j = 0; j < m; ++j) mixed.push_back(softmax_tau(random_vector(rng, k, -5, 5), Temperature(1)));
      double kl = 0.0;
      for (std::size_t j = 1; j < m; ++j) kl += kl_divergence(mixed[j], mixed[0]);
      const double expected = cross_entropy(y, mixed[0]) + kl / static_cast<double>(m - 1);
      worst = std::max(worst, std::abs(dml_loss<double>(mixed, 0, y).loss - expected));
    }
  }
  return {worst < 1e-12, "max deviation from independently composed terms " + fmt("%.2e", worst)};
}

// ---- shared training runs for 5-7 ------------------------------------------

struct Runs {
  ExperimentConfig config = parse_config("{}");
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::map<int, DatasetPair> data;
  std::vector<ModelParams<double>> teachers;
  std::vector<double> teacher_accuracy;

  const DatasetPair& at(int factor) {
    auto it = data.find(factor);
    if (it == data.end()) {
      DataParams p = config.data;
      p.factor = factor;
      it = data.emplace(factor, generate_datasets(p)).first;
    }
    return it->second;
  }

  TrainConfig train(int factor, std::uint64_t seed) const {
    TrainConfig t = config.train;
    t.factor = factor;
    t.seed = seed;
    return t;
  }
};

nlohmann::json load_expected() {
  std::ifstream in(CQKD_EXPECTED_PATH);
  if (!in) return nlohmann::json::object();
  return nlohmann::json::parse(in, nullptr, false);
}

double expected_value(const nlohmann::json& e, const char* section, const char* key, double fallback) {
  if (e.is_object() && e.contains(section) && e[section].contains(key)) return e[section][key].get<double>();
  return fallback;
}

Outcome desk_trend(Runs& runs, const nlohmann::json& expected) {
  const auto& full = runs.at(1);
  const auto& low = runs.at(4);
  const double teacher_floor = expected_value(expected, "teacher", "min_validation_accuracy", 0.9);
  double e10 = 0, e20 = 0, c10 = 0, c20 = 0;
  int entropy_wins = 0;
  bool teachers_ok = true;
  std::ostringstream per_seed;
  for (auto seed : runs.seeds) {
    const auto teacher = train_teacher(runs.train(1, seed), full.train, full.validation);
    runs.teachers.push_back(teacher.model);
    const double tacc = teacher.metrics.back().accuracy;
    runs.teacher_accuracy.push_back(tacc);
    teachers_ok = teachers_ok && tacc >= teacher_floor;
    std::map<double, EpochMetrics> final;
    for (double tau : {10.0, 20.0}) {
      auto cfg = runs.train(4, seed);
      cfg.tau = tau;
      final[tau] = train_cqkd(teacher.model, cfg, low.train, low.validation).metrics.back();
    }
    e10 += final[10].entropy;
    e20 += final[20].entropy;
    c10 += final[10].ece;
    c20 += final[20].ece;
    if (final[20].entropy > final[10].entropy) ++entropy_wins;
    per_seed << " seed " << seed << ": teacher acc " << fmt("%.3f", tacc) << ", H10 " << fmt("%.4f", final[10].entropy)
             << " H20 " << fmt("%.4f", final[20].entropy) << " ECE10 " << fmt("%.4f", final[10].ece) << " ECE20 "
             << fmt("%.4f", final[20].ece) << ";";
  }
  const double n = static_cast<double>(runs.seeds.size());
  e10 /= n, e20 /= n, c10 /= n, c20 /= n;
  const bool a = entropy_wins >= 2 && e20 > e10;
  const bool b = c20 <= c10;
  std::ostringstream detail;
  detail << "(a) entropy tau20 > tau10 in " << entropy_wins << "/3 seeds, mean " << fmt("%.4f", e20) << " vs "
         << fmt("%.4f", e10) << (a ? " ok" : " NOT MET") << "; (b) mean ECE tau20 " << fmt("%.4f", c20) << " vs tau10 "
         << fmt("%.4f", c10) << (b ? " ok" : " NOT MET") << "; teachers >= " << fmt("%.2f", teacher_floor)
         << (teachers_ok ? " ok" : " NOT MET") << ";" << per_seed.str();
  if (expected.contains("trend")) {
    detail << " recorded pilot: H10 " << fmt("%.4f", expected_value(expected, "trend", "mean_entropy_tau10", 0))
           << " H20 " << fmt("%.4f", expected_value(expected, "trend", "mean_entropy_tau20", 0)) << " ECE10 "
           << fmt("%.4f", expected_value(expected, "trend", "mean_ece_tau10", 0)) << " ECE20 "
           << fmt("%.4f", expected_value(expected, "trend", "mean_ece_tau20", 0));
  }
  return {a && b && teachers_ok, detail.str()};
}

std::vector<EpochMetrics> supervised_f2;

Outcome mild_downscale(Runs& runs) {
  const auto& mid = runs.at(2);
  double sup = 0.0, kd = 0.0;
  for (std::size_t s = 0; s < runs.seeds.size(); ++s) {
    const auto cfg = runs.train(2, runs.seeds[s]);
    const auto base = train_supervised(cfg, mid.train, mid.validation).metrics.back();
    supervised_f2.push_back(base);
    sup += base.accuracy;
    kd += train_cqkd(runs.teachers.at(s), cfg, mid.train, mid.validation).metrics.back().accuracy;
  }
  const double n = static_cast<double>(runs.seeds.size());
  sup /= n, kd /= n;
  return {kd >= sup - 0.005, "mean validation accuracy cqkd tau10 " + fmt("%.4f", kd) + " vs supervised " +
                                 fmt("%.4f", sup) + " (margin -0.005)"};
}

Outcome dml_plausibility(Runs& runs) {
  const auto& mid = runs.at(2);
  double dml = 0.0, sup = 0.0;
  bool decreasing = true;
  std::ostringstream losses;
  for (std::size_t s = 0; s < runs.seeds.size(); ++s) {
    const auto r = train_dml(runs.train(2, runs.seeds[s]), mid.train, mid.validation);
    dml += cohort_mean(r.metrics).back().accuracy;
    sup += supervised_f2.at(s).accuracy;
    for (const auto& student : r.metrics) {
      std::vector<double> train_loss;
      for (const auto& m : student) {
        if (m.split == Split::train && m.epoch <= 3) train_loss.push_back(m.loss);
      }
      if (train_loss.size() < 3 || !(train_loss[1] < train_loss[0] && train_loss[2] < train_loss[1])) {
        decreasing = false;
      }
      losses << " " << fmt("%.3f", train_loss.at(0)) << ">" << fmt("%.3f", train_loss.at(1)) << ">"
             << fmt("%.3f", train_loss.at(2));
    }
  }
  const double n = static_cast<double>(runs.seeds.size());
  dml /= n, sup /= n;
  const bool close = dml >= sup - 0.05;
  return {close && decreasing, "mean accuracy dml " + fmt("%.4f", dml) + " vs supervised " + fmt("%.4f", sup) +
                                   (close ? " (within 5 pp)" : " (gap over 5 pp)") + "; epoch-mean losses" +
                                   losses.str() + (decreasing ? "" : " NOT all decreasing")};
}

// ---- 8 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string strip_elapsed(const std::string& csv) {
  std::istringstream in(csv);
  std::string out;
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

template <typename Decode>
int fuzz(const std::vector<unsigned char>& bytes, Decode decode, std::mt19937_64& rng, int& typed) {
  int untyped = 0;
  std::uniform_int_distribution<std::size_t> pos(0, bytes.size() - 1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<unsigned char> bad = bytes;
    switch (trial % 3) {
      case 0: bad.resize(pos(rng)); break;
      case 1: bad[pos(rng) % 24] ^= static_cast<unsigned char>(1 + rng() % 255); break;
      case 2: bad[pos(rng)] ^= static_cast<unsigned char>(1 + rng() % 255); break;
    }
    try {
      decode(bad);
    } catch (const FormatError&) {
      ++typed;
    } catch (...) {
      ++untyped;
    }
  }
  return untyped;
}

Outcome determinism_and_io() {
  const fs::path dir = fs::temp_directory_path() / "cqkd_acceptance_determinism";
  fs::remove_all(dir);
  auto config = parse_config(R"({"method": "supervised", "train": {"epochs": 3}})");
  bool identical = true;
  for (Method m : {Method::supervised, Method::dml}) {
    config.method = m;
    const std::string name = to_string(m);
    cmd_train(config, {dir / (name + "_a"), std::nullopt, std::nullopt, std::uint64_t{5}});
    cmd_train(config, {dir / (name + "_b"), std::nullopt, std::nullopt, std::uint64_t{5}});
    const std::string ckpt = m == Method::dml ? "model_2.ckpt" : "model.ckpt";
    identical = identical && slurp(dir / (name + "_a") / ckpt) == slurp(dir / (name + "_b") / ckpt);
    identical = identical && strip_elapsed(slurp(dir / (name + "_a") / "metrics.csv")) ==
                                 strip_elapsed(slurp(dir / (name + "_b") / "metrics.csv"));
  }

  const auto model = load_model(dir / "supervised_a" / "model.ckpt");
  const auto model_bytes = encode_model(model);
  const auto data = generate_datasets(config.data);
  const auto data_bytes = encode_dataset(data.validation);
  const bool round_trip = decode_model(model_bytes) == model && encode_model(decode_model(model_bytes)) == model_bytes &&
                          decode_dataset(data_bytes) == data.validation &&
                          encode_dataset(decode_dataset(data_bytes)) == data_bytes;

  std::mt19937_64 rng(8);
  int typed = 0;
  int untyped = fuzz(model_bytes, [](const auto& b) { decode_model(b); }, rng, typed);
  untyped += fuzz(data_bytes, [](const auto& b) { decode_dataset(b); }, rng, typed);
  fs::remove_all(dir);
  return {identical && round_trip && untyped == 0,
          std::string(identical ? "repeat runs bit-identical" : "repeat runs DIFFER") + ", " +
              (round_trip ? "round-trips exact" : "round-trip MISMATCH") + ", corrupted inputs: " +
              std::to_string(typed) + " typed errors, " + std::to_string(untyped) + " other outcomes"};
}

// ---- 9 ---------------------------------------------------------------------

// Nearest-centroid probe on a fixed view of the pixels: train accuracy.
double probe_accuracy(const Dataset& d) {
  const Matrix<double> x = stack_inputs(d, Resolution::low);
  const auto y = labels(d);
  Matrix<double> centroids = Matrix<double>::Zero(x.rows(), d.num_classes);
  Vector<double> counts = Vector<double>::Zero(d.num_classes);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    centroids.col(y[static_cast<std::size_t>(j)]) += x.col(j);
    counts(y[static_cast<std::size_t>(j)]) += 1.0;
  }
  for (int k = 0; k < d.num_classes; ++k) centroids.col(k) /= counts(k);
  int hits = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::Index best = 0;
    (centroids.colwise() - x.col(j)).colwise().squaredNorm().minCoeff(&best);
    hits += best == y[static_cast<std::size_t>(j)];
  }
  return static_cast<double>(hits) / static_cast<double>(x.cols());
}

Outcome downsampling_invariants(Runs& runs) {
  double worst_mean = 0.0;
  std::size_t coupled = 0, total = 0;
  std::vector<double> probe;
  for (int f : {1, 2, 4}) {
    const auto& d = runs.at(f);
    for (const Dataset* set : {&d.train, &d.validation}) {
      for (const auto& p : set->pairs) {
        worst_mean = std::max(worst_mean, std::abs(p.low.pixels.mean() - p.full.pixels.mean()));
        coupled += downsample(p.full, f) == p.low;
        ++total;
      }
    }
    probe.push_back(probe_accuracy(d.train));
  }
  const bool non_increasing = probe[1] <= probe[0] && probe[2] <= probe[1];
  return {worst_mean < 1e-12 && coupled == total && non_increasing,
          "max mean shift " + fmt("%.2e", worst_mean) + ", coupled pairs " + std::to_string(coupled) + "/" +
              std::to_string(total) + ", probe accuracy f1 " + fmt("%.4f", probe[0]) + " f2 " + fmt("%.4f", probe[1]) +
              " f4 " + fmt("%.4f", probe[2])};
}

template <typename F>
void run(int id, const std::string& name, double budget, F&& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, o, seconds_since(start), budget);
}

}  // namespace

int main() {
  const auto expected = load_expected();
  Runs runs;
  run(1, "gradient oracle", 30, gradient_oracle);
  run(2, "temperature softmax properties", 5, temperature_properties);
  run(3, "ECE oracle equivalence", 10, ece_oracle);
  run(4, "loss decomposition", 60, loss_decomposition);
  run(5, "desk-scale entropy/calibration trend", 600, [&] { return desk_trend(runs, expected); });
  run(6, "mild-downscale distillation vs baseline", 600, [&] { return mild_downscale(runs); });
  run(7, "mutual learning plausibility", 600, [&] { return dml_plausibility(runs); });
  run(8, "determinism and file I/O", 600, determinism_and_io);
  run(9, "downsampling invariants", 60, [&] { return downsampling_invariants(runs); });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
