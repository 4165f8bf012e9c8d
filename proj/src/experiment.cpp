#include "cqkd/experiment.hpp"

#include "cqkd/binary_io.hpp"
#include "cqkd/errors.hpp"
#include "cqkd/model_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#ifndef CQKD_VERSION
#define CQKD_VERSION "0.0.0"
#endif

namespace cqkd {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kValidationDataStream = 100;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  binary::write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = binary::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// ---- strict config parsing -------------------------------------------------

class Section {
 public:
  Section(const json& node, std::string prefix) : node_(node), prefix_(std::move(prefix)) {
    if (!node_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  std::string key(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

  const json* find(const std::string& name) {
    seen_.insert(name);
    auto it = node_.find(name);
    return it == node_.end() ? nullptr : &*it;
  }

  void number(const std::string& name, double& out, double lo, double hi, bool open_lo = false,
              bool open_hi = false) {
    const json* v = find(name);
    if (!v) return;
    if (!v->is_number()) throw ConfigError(key(name), "expected a number");
    const double x = v->get<double>();
    const bool ok = std::isfinite(x) && (open_lo ? x > lo : x >= lo) && (open_hi ? x < hi : x <= hi);
    if (!ok) {
      throw ConfigError(key(name), "value " + format_double(x) + " outside " + (open_lo ? "(" : "[") +
                                       format_double(lo) + ", " + format_double(hi) + (open_hi ? ")" : "]"));
    }
    out = x;
  }

  template <typename Int>
  void integer(const std::string& name, Int& out, std::int64_t lo, std::int64_t hi) {
    const json* v = find(name);
    if (!v) return;
    out = static_cast<Int>(parse_integer(*v, key(name), lo, hi));
  }

  void boolean(const std::string& name, bool& out) {
    const json* v = find(name);
    if (!v) return;
    if (!v->is_boolean()) throw ConfigError(key(name), "expected true or false");
    out = v->get<bool>();
  }

  void seed(const std::string& name, std::uint64_t& out) {
    const json* v = find(name);
    if (!v) return;
    out = parse_seed(*v, key(name));
  }

  void sizes(const std::string& name, std::vector<Eigen::Index>& out) {
    const json* v = find(name);
    if (!v) return;
    if (!v->is_array()) throw ConfigError(key(name), "expected a list of layer widths");
    std::vector<Eigen::Index> sizes;
    for (const auto& item : *v) sizes.push_back(parse_integer(item, key(name), 1, 1 << 16));
    out = std::move(sizes);
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(key(item.key()), "unknown key");
    }
  }

  static std::int64_t parse_integer(const json& v, const std::string& key, std::int64_t lo, std::int64_t hi) {
    if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
    const bool negative = v.is_number_unsigned() ? false : v.get<std::int64_t>() < 0;
    if (!negative && v.get<std::uint64_t>() > static_cast<std::uint64_t>(hi)) {
      throw ConfigError(key, "value above " + std::to_string(hi));
    }
    const std::int64_t x = v.get<std::int64_t>();
    if (x < lo || x > hi) {
      throw ConfigError(key, "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                 std::to_string(hi) + "]");
    }
    return x;
  }

  static std::uint64_t parse_seed(const json& v, const std::string& key) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(key, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

 private:
  const json& node_;
  std::string prefix_;
  std::set<std::string> seen_;
};

ordered_json config_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  const DataParams& d = c.data;
  ordered_json j;
  j["method"] = to_string(c.method);
  j["output_dir"] = c.output_dir.string();
  j["seeds"] = c.seeds;
  j["data"] = {{"n", d.n},
               {"validation_fraction", d.validation_fraction},
               {"num_classes", d.num_classes},
               {"h_full", d.h_full},
               {"factor", d.factor},
               {"noise_sigma", d.noise_sigma},
               {"seed", d.seed}};
  j["train"] = {{"alpha", t.alpha},
                {"tau", t.tau},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"eta_max", t.eta_max},
                {"floor_fraction", t.floor_fraction},
                {"weight_decay", t.weight_decay},
                {"teacher_hidden", t.teacher_hidden},
                {"student_hidden", t.student_hidden},
                {"cohort_size", t.cohort_size},
                {"scale_kl_by_tau_squared", t.scale_kl_by_tau_squared},
                {"dml_seed_stride", t.dml_seed_stride},
                {"dml_peer_outputs", t.dml_peer_outputs == PeerOutputs::fresh ? "fresh" : "step_start"}};
  j["metrics"] = {{"bins", t.bins}};
  j["sweep"] = {{"taus", c.sweep_taus}};
  return j;
}

// ---- run bookkeeping -------------------------------------------------------

struct Manifest {
  Manifest(fs::path p, ordered_json c) : path(std::move(p)), config(std::move(c)) {}

  fs::path path;
  ordered_json config;
  std::string started_at = timestamp_utc();
  std::map<std::string, fs::path> artifacts;

  void write(const std::string& status, const std::string& error = {}) const {
    ordered_json j;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["version"] = version_string();
    j["started_at"] = started_at;
    j["finished_at"] = timestamp_utc();
    j["config"] = config;
    ordered_json a = ordered_json::object();
    for (const auto& [name, p] : artifacts) a[name] = p.string();
    j["artifacts"] = a;
    write_text(path, j.dump(2) + "\n");
  }
};

void write_evaluation(const ModelParams<double>& model, const Dataset& validation, Resolution res, int bins,
                      const fs::path& dir, const std::string& suffix, Manifest& manifest) {
  const fs::path ckpt = dir / ("model" + suffix + ".ckpt");
  const fs::path preds = dir / ("predictions" + suffix + ".csv");
  const fs::path report = dir / ("bins" + suffix + ".json");
  save_model(model, ckpt);
  const auto records = predict_records(model, validation, res);
  write_records(records, preds);
  write_bin_report(calibration_report(records, bins), report);
  manifest.artifacts["checkpoint" + suffix] = ckpt;
  manifest.artifacts["predictions" + suffix] = preds;
  manifest.artifacts["bin_report" + suffix] = report;
}

EpochMetrics final_validation(const std::vector<EpochMetrics>& metrics) {
  for (auto it = metrics.rbegin(); it != metrics.rend(); ++it) {
    if (it->split == Split::validation) return *it;
  }
  throw std::invalid_argument("run produced no validation metrics");
}

void check_dataset(const Dataset& d, const DataParams& p, Split split, const fs::path& path) {
  if (d.split != split) throw ConfigError("data", path.string() + " holds the wrong split");
  if (d.factor != p.factor) {
    throw ConfigError("data.factor", path.string() + " was stored at factor " + std::to_string(d.factor));
  }
  if (d.num_classes != p.num_classes) throw ConfigError("data.num_classes", path.string() + " disagrees");
  if (d.h_full != p.h_full) throw ConfigError("data.h_full", path.string() + " disagrees");
}

}  // namespace

// ---- config ----------------------------------------------------------------

int DataParams::n_validation() const {
  return static_cast<int>(std::lround(static_cast<double>(n) * validation_fraction));
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", e.what());
  }

  ExperimentConfig c;
  Section top(root, "");
  if (const json* m = top.find("method")) {
    if (!m->is_string()) throw ConfigError("method", "expected a string");
    try {
      c.method = method_from_string(m->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("method", e.what());
    }
  }
  if (const json* o = top.find("output_dir")) {
    if (!o->is_string() || o->get<std::string>().empty()) throw ConfigError("output_dir", "expected a path");
    c.output_dir = o->get<std::string>();
  }
  if (const json* s = top.find("seeds")) {
    if (!s->is_array() || s->empty()) throw ConfigError("seeds", "expected a non-empty list");
    c.seeds.clear();
    for (const auto& v : *s) c.seeds.push_back(Section::parse_seed(v, "seeds"));
  }

  DataParams& d = c.data;
  if (const json* node = top.find("data")) {
    Section s(*node, "data");
    s.integer("n", d.n, 2, 1 << 24);
    s.number("validation_fraction", d.validation_fraction, 0.0, 1.0, true, true);
    s.integer("num_classes", d.num_classes, 2, 65535);
    s.integer("h_full", d.h_full, 8, 4096);
    s.integer("factor", d.factor, 1, 4096);
    s.number("noise_sigma", d.noise_sigma, 0.0, 1e6);
    s.seed("seed", d.seed);
    s.finish();
  }
  if (d.h_full % d.factor != 0) throw ConfigError("data.factor", "must divide data.h_full");
  if (d.n_train() < d.num_classes) throw ConfigError("data.n", "training split smaller than num_classes");
  if (d.n_validation() < d.num_classes) throw ConfigError("data.n", "validation split smaller than num_classes");

  TrainConfig& t = c.train;
  if (const json* node = top.find("train")) {
    Section s(*node, "train");
    s.number("alpha", t.alpha, 0.0, 1.0, true, true);
    s.number("tau", t.tau, 0.0, 1e9, true);
    s.integer("epochs", t.epochs, 0, 100000);
    s.integer("batch_size", t.batch_size, 1, 1 << 24);
    s.number("eta_max", t.eta_max, 0.0, 10.0, true);
    s.number("floor_fraction", t.floor_fraction, 0.0, 1.0, false, true);
    s.number("weight_decay", t.weight_decay, 0.0, 1.0);
    s.sizes("teacher_hidden", t.teacher_hidden);
    s.sizes("student_hidden", t.student_hidden);
    s.integer("cohort_size", t.cohort_size, 2, 64);
    s.boolean("scale_kl_by_tau_squared", t.scale_kl_by_tau_squared);
    s.seed("dml_seed_stride", t.dml_seed_stride);
    if (const json* p = s.find("dml_peer_outputs")) {
      const std::string v = p->is_string() ? p->get<std::string>() : "";
      if (v == "fresh") {
        t.dml_peer_outputs = PeerOutputs::fresh;
      } else if (v == "step_start") {
        t.dml_peer_outputs = PeerOutputs::step_start;
      } else {
        throw ConfigError("train.dml_peer_outputs", "expected \"fresh\" or \"step_start\"");
      }
    }
    s.finish();
  }
  if (const json* node = top.find("metrics")) {
    Section s(*node, "metrics");
    s.integer("bins", t.bins, 1, 1000);
    s.finish();
  }
  if (const json* node = top.find("sweep")) {
    Section s(*node, "sweep");
    if (const json* taus = s.find("taus")) {
      if (!taus->is_array() || taus->empty()) throw ConfigError("sweep.taus", "expected a non-empty list");
      c.sweep_taus.clear();
      for (const auto& v : *taus) {
        if (!v.is_number() || !(v.get<double>() > 0.0) || !std::isfinite(v.get<double>())) {
          throw ConfigError("sweep.taus", "temperatures must be positive numbers");
        }
        c.sweep_taus.push_back(v.get<double>());
      }
    }
    s.finish();
  }
  top.finish();

  t.factor = d.factor;
  t.seed = c.seeds.front();
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

std::string dump_config(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

// ---- data ------------------------------------------------------------------

DatasetPair generate_datasets(const DataParams& data) {
  const Dataset train = generate_synthetic(data.n_train(), data.num_classes, data.h_full, data.noise_sigma,
                                           data.seed, Split::train);
  const Dataset validation = generate_synthetic(data.n_validation(), data.num_classes, data.h_full,
                                                data.noise_sigma, derive_seed(data.seed, kValidationDataStream),
                                                Split::validation);
  return {make_pairs(train, data.factor), make_pairs(validation, data.factor)};
}

GenDataResult cmd_gen_data(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  Manifest manifest{dir / "manifest.json", config_json(config)};
  const DatasetPair data = generate_datasets(config.data);
  GenDataResult r{dir / "train.cqds", dir / "validation.cqds", manifest.path};
  save_dataset(data.train, r.train_path);
  save_dataset(data.validation, r.validation_path);
  write_text(dir / "config.json", dump_config(config));
  manifest.artifacts = {{"train", r.train_path}, {"validation", r.validation_path}, {"config", dir / "config.json"}};
  manifest.write("succeeded");
  return r;
}

// ---- training --------------------------------------------------------------

std::string format_metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,split,loss,accuracy,entropy,ece,elapsed_s\n";
  for (const auto& m : metrics) {
    out += std::to_string(m.epoch) + "," + to_string(m.split) + "," + format_double(m.loss) + "," +
           format_double(m.accuracy) + "," + format_double(m.entropy) + "," + format_double(m.ece) + "," +
           format_double(m.elapsed_seconds) + "\n";
  }
  return out;
}

void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const fs::path& path) {
  write_text(path, format_metrics_csv(metrics));
}

RunSummary run_training(const ExperimentConfig& config, const DatasetPair& data, const fs::path& out_dir,
                        const std::optional<fs::path>& teacher) {
  const TrainConfig& t = config.train;
  if (config.method == Method::cqkd && !teacher) {
    throw ConfigError("teacher", "method cqkd needs a teacher checkpoint (--teacher)");
  }
  try {
    t.validate(config.method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train", e.what());
  }

  fs::create_directories(out_dir);
  Manifest manifest{out_dir / "manifest.json", config_json(config)};
  const fs::path config_path = out_dir / "config.json";
  write_text(config_path, dump_config(config));
  manifest.artifacts["config"] = config_path;

  RunSummary summary;
  summary.method = config.method;
  summary.factor = config.data.factor;
  summary.tau = config.method == Method::cqkd ? t.tau : 0.0;
  summary.seed = t.seed;
  summary.run_dir = out_dir;
  summary.manifest_path = manifest.path;

  try {
    std::optional<ModelParams<double>> teacher_model;
    if (teacher) teacher_model = load_model(*teacher);

    const auto start = std::chrono::steady_clock::now();
    std::vector<EpochMetrics> metrics;
    switch (config.method) {
      case Method::teacher: {
        auto r = train_teacher(t, data.train, data.validation);
        write_evaluation(r.model, data.validation, Resolution::full, t.bins, out_dir, "", manifest);
        metrics = std::move(r.metrics);
        break;
      }
      case Method::supervised: {
        auto r = train_supervised(t, data.train, data.validation);
        write_evaluation(r.model, data.validation, Resolution::low, t.bins, out_dir, "", manifest);
        metrics = std::move(r.metrics);
        break;
      }
      case Method::cqkd: {
        auto r = train_cqkd(*teacher_model, t, data.train, data.validation);
        write_evaluation(r.model, data.validation, Resolution::low, t.bins, out_dir, "", manifest);
        metrics = std::move(r.metrics);
        break;
      }
      case Method::dml: {
        auto r = train_dml(t, data.train, data.validation);
        for (std::size_t i = 0; i < r.students.size(); ++i) {
          const std::string suffix = "_" + std::to_string(i);
          write_evaluation(r.students[i], data.validation, Resolution::low, t.bins, out_dir, suffix, manifest);
          const fs::path m = out_dir / ("metrics" + suffix + ".csv");
          write_metrics_csv(r.metrics[i], m);
          manifest.artifacts["metrics" + suffix] = m;
        }
        metrics = cohort_mean(r.metrics);
        break;
      }
    }
    const fs::path metrics_path = out_dir / "metrics.csv";
    write_metrics_csv(metrics, metrics_path);
    manifest.artifacts["metrics"] = metrics_path;

    summary.final_validation = final_validation(metrics);
    summary.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    summary.artifacts = manifest.artifacts;
    manifest.write("succeeded");
  } catch (const std::exception& e) {
    try {
      manifest.write("failed", e.what());
    } catch (...) {
    }
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) throw;
    throw RunFailure(manifest.path, std::string(to_string(config.method)) + " run failed: " + e.what());
  }
  return summary;
}

RunSummary cmd_train(const ExperimentConfig& config, const TrainOptions& options) {
  ExperimentConfig effective = config;
  if (options.seed) {
    effective.train.seed = *options.seed;
    effective.seeds = {*options.seed};
  }
  if (effective.method == Method::cqkd && !options.teacher_path) {
    throw ConfigError("teacher", "method cqkd needs a teacher checkpoint (--teacher)");
  }

  DatasetPair data;
  if (options.data_dir) {
    const fs::path tr = *options.data_dir / "train.cqds";
    const fs::path va = *options.data_dir / "validation.cqds";
    data = {load_dataset(tr), load_dataset(va)};
    check_dataset(data.train, effective.data, Split::train, tr);
    check_dataset(data.validation, effective.data, Split::validation, va);
  } else {
    data = generate_datasets(effective.data);
  }
  return run_training(effective, data, options.out_dir, options.teacher_path);
}

// ---- sweeps ----------------------------------------------------------------

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "factor") return SweepAxis::factor;
  if (name == "tau") return SweepAxis::tau;
  if (name == "seed") return SweepAxis::seed;
  throw std::invalid_argument("unknown sweep axis '" + name + "' (expected factor, tau or seed)");
}

unsigned threads_from_env() {
  const char* v = std::getenv("CQKD_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("CQKD_THREADS", "expected a positive integer");
  return static_cast<unsigned>(std::min<long>(n, 256));
}

namespace {

struct SweepJob {
  ExperimentConfig config;
  fs::path dir;
  std::optional<fs::path> teacher;
  std::size_t row = 0;
};

std::string tau_label(double tau) {
  std::ostringstream s;
  s << tau;
  return s.str();
}

void run_parallel(std::vector<std::function<void()>>& tasks, unsigned threads) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr first;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      {
        std::lock_guard lock(mu);
        if (first) return;
      }
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(tasks.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first) std::rethrow_exception(first);
}

void write_summary(const std::vector<SweepRow>& rows, const fs::path& path) {
  std::string out = "method,factor,tau,seed,accuracy,ece,mean_entropy,elapsed_seconds\n";
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.factor) + "," + (r.tau ? format_double(*r.tau) : "") + "," + r.seed +
           "," + format_double(r.accuracy) + "," + format_double(r.ece) + "," + format_double(r.mean_entropy) +
           "," + format_double(r.elapsed_seconds) + "\n";
  }
  write_text(path, out);
}

std::vector<SweepRow> aggregate(const std::vector<SweepRow>& rows) {
  std::vector<SweepRow> out;
  std::vector<std::pair<std::string, std::optional<double>>> keys;
  for (const auto& r : rows) {
    const std::pair<std::string, std::optional<double>> k{r.method, r.tau};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [method, tau] : keys) {
    std::vector<const SweepRow*> group;
    for (const auto& r : rows) {
      if (r.method == method && r.tau == tau) group.push_back(&r);
    }
    const double n = static_cast<double>(group.size());
    auto stat = [&](double SweepRow::*field, bool sd) {
      double mean = 0.0;
      for (const auto* r : group) mean += r->*field;
      mean /= n;
      if (!sd) return mean;
      if (group.size() < 2) return 0.0;
      double ss = 0.0;
      for (const auto* r : group) ss += (r->*field - mean) * (r->*field - mean);
      return std::sqrt(ss / (n - 1.0));
    };
    for (bool sd : {false, true}) {
      SweepRow a;
      a.method = method;
      a.factor = group.front()->factor;
      a.tau = tau;
      a.seed = sd ? "std" : "mean";
      a.accuracy = stat(&SweepRow::accuracy, sd);
      a.ece = stat(&SweepRow::ece, sd);
      a.mean_entropy = stat(&SweepRow::mean_entropy, sd);
      a.elapsed_seconds = stat(&SweepRow::elapsed_seconds, sd);
      out.push_back(a);
    }
  }
  return out;
}

}  // namespace

SweepResult cmd_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<double>& values,
                      const fs::path& out_dir, unsigned threads) {
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  std::vector<int> factors{config.data.factor};
  std::vector<double> taus = config.sweep_taus;
  std::vector<std::uint64_t> seeds = config.seeds;
  auto whole = [](double v, const char* what) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
      throw std::invalid_argument(std::string("sweep ") + what + " values must be non-negative integers");
    }
    return v;
  };
  switch (axis) {
    case SweepAxis::factor:
      factors.clear();
      for (double v : values) {
        whole(v, "factor");
        if (v < 1 || config.data.h_full % static_cast<int>(v) != 0) {
          throw std::invalid_argument("sweep factor " + tau_label(v) + " does not divide h_full");
        }
        factors.push_back(static_cast<int>(v));
      }
      break;
    case SweepAxis::tau:
      for (double v : values) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("sweep tau values must be positive");
      }
      taus = values;
      break;
    case SweepAxis::seed:
      seeds.clear();
      for (double v : values) seeds.push_back(static_cast<std::uint64_t>(whole(v, "seed")));
      break;
  }
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", dump_config(config));

  std::map<int, DatasetPair> datasets;
  for (int f : factors) {
    DataParams p = config.data;
    p.factor = f;
    datasets.emplace(f, generate_datasets(p));
  }
  DataParams full_params = config.data;
  full_params.factor = 1;
  const DatasetPair full = generate_datasets(full_params);

  auto job_config = [&](Method method, int factor, std::uint64_t seed, double tau) {
    ExperimentConfig c = config;
    c.method = method;
    c.data.factor = factor;
    c.train.factor = factor;
    c.train.seed = seed;
    c.train.tau = tau;
    c.seeds = {seed};
    return c;
  };

  // Teachers first: one per seed, at full resolution.
  std::map<std::uint64_t, fs::path> teachers;
  std::vector<std::function<void()>> tasks;
  for (auto seed : seeds) {
    const fs::path dir = out_dir / ("teacher_seed" + std::to_string(seed));
    teachers[seed] = dir / "model.ckpt";
    tasks.push_back([&, seed, dir] {
      run_training(job_config(Method::teacher, 1, seed, config.train.tau), full, dir, std::nullopt);
    });
  }
  run_parallel(tasks, threads);

  std::vector<SweepJob> jobs;
  for (auto seed : seeds) {
    for (int f : factors) {
      const std::string tag = "f" + std::to_string(f) + "_seed" + std::to_string(seed);
      jobs.push_back({job_config(Method::supervised, f, seed, config.train.tau), out_dir / ("supervised_" + tag),
                      std::nullopt});
      for (double tau : taus) {
        jobs.push_back({job_config(Method::cqkd, f, seed, tau),
                        out_dir / ("cqkd_tau" + tau_label(tau) + "_" + tag), teachers[seed]});
      }
      jobs.push_back({job_config(Method::dml, f, seed, config.train.tau), out_dir / ("dml_" + tag), std::nullopt});
    }
  }

  std::vector<RunSummary> summaries(jobs.size());
  tasks.clear();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    tasks.push_back([&, i] {
      summaries[i] = run_training(jobs[i].config, datasets.at(jobs[i].config.data.factor), jobs[i].dir,
                                  jobs[i].teacher);
    });
  }
  run_parallel(tasks, threads);

  SweepResult result;
  for (const auto& s : summaries) {
    SweepRow row;
    row.method = to_string(s.method);
    row.factor = s.factor;
    if (s.method == Method::cqkd) row.tau = s.tau;
    row.seed = std::to_string(s.seed);
    row.accuracy = s.final_validation.accuracy;
    row.ece = s.final_validation.ece;
    row.mean_entropy = s.final_validation.entropy;
    row.elapsed_seconds = s.elapsed_seconds;
    row.run_dir = s.run_dir;
    result.rows.push_back(row);
  }
  if (axis == SweepAxis::seed) {
    const auto agg = aggregate(result.rows);
    result.rows.insert(result.rows.end(), agg.begin(), agg.end());
  }
  result.summary_path = out_dir / "summary.csv";
  write_summary(result.rows, result.summary_path);
  return result;
}

// ---- report ----------------------------------------------------------------

CalibrationReport cmd_report(const fs::path& predictions, int bins, const fs::path& bin_path, std::ostream& out) {
  if (bins < 1) throw std::invalid_argument("bins must be at least 1");
  const auto records = read_records(predictions);
  const CalibrationReport report = calibration_report(records, bins);
  out << std::fixed << std::setprecision(6);
  out << "n: " << report.n << "\n";
  out << "accuracy: " << report.accuracy << "\n";
  if (report.mean_entropy) {
    out << "mean entropy: " << *report.mean_entropy << "\n";
  } else {
    out << "mean entropy: n/a\n";
  }
  out << "ECE: " << report.ece << "\n";
  out << "bin  lower     upper     count  accuracy  confidence\n";
  for (const auto& b : report.bins) {
    out << std::setw(3) << b.index << "  " << std::setprecision(4) << b.lower << "    " << b.upper << "    "
        << std::setw(5) << b.count << "  " << std::setprecision(6) << b.accuracy << "  " << b.confidence << "\n";
  }
  write_bin_report(report, bin_path);
  return report;
}

const char* version_string() { return CQKD_VERSION; }

}  // namespace cqkd
