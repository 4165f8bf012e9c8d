#pragma once

// Experiment orchestration behind the command-line tool: strict JSON
// configuration, dataset generation, single training runs, sweeps and
// calibration reports. Every run directory holds its config snapshot and a
// manifest.json listing the artifacts it produced.

#include "cqkd/distill.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cqkd {

struct DataParams {
  int n = 2500;
  double validation_fraction = 0.2;
  int num_classes = 10;
  int h_full = 32;
  int factor = 4;
  double noise_sigma = 0.15;
  std::uint64_t seed = 0;

  int n_validation() const;
  int n_train() const { return n - n_validation(); }
};

struct ExperimentConfig {
  Method method = Method::cqkd;
  TrainConfig train;
  DataParams data;
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds = {0};
  /// Temperatures the sweep grid runs distillation at.
  std::vector<double> sweep_taus = {10.0, 20.0};
};

/// Parses and validates a JSON config. Unknown keys and out-of-range values
/// throw ConfigError naming the dotted key.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& config);

/// A sub-run that failed; manifest_path points at its failed manifest.
class RunFailure : public std::runtime_error {
 public:
  RunFailure(std::filesystem::path manifest, const std::string& what)
      : std::runtime_error(what), manifest_(std::move(manifest)) {}
  const std::filesystem::path& manifest_path() const { return manifest_; }

 private:
  std::filesystem::path manifest_;
};

struct DatasetPair {
  Dataset train;
  Dataset validation;
};

/// Train and validation sets at data.factor, generated from data.seed.
DatasetPair generate_datasets(const DataParams& data);

struct GenDataResult {
  std::filesystem::path train_path;
  std::filesystem::path validation_path;
  std::filesystem::path manifest_path;
};

/// Writes train.cqds, validation.cqds, config.json and manifest.json into dir.
GenDataResult cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& dir);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> teacher_path;
  /// Directory holding train.cqds / validation.cqds; generated from the
  /// config when absent.
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::uint64_t> seed;
};

struct RunSummary {
  Method method = Method::supervised;
  int factor = 1;
  double tau = 0.0;
  std::uint64_t seed = 0;
  EpochMetrics final_validation;
  double elapsed_seconds = 0.0;
  std::filesystem::path run_dir;
  std::filesystem::path manifest_path;
  std::map<std::string, std::filesystem::path> artifacts;
};

/// Trains config.method and writes metrics.csv, the checkpoint(s),
/// validation predictions and the bin report. A failing run still leaves a
/// manifest with status "failed" before rethrowing.
RunSummary cmd_train(const ExperimentConfig& config, const TrainOptions& options);

/// Same as cmd_train but on already materialised datasets (used by sweeps).
RunSummary run_training(const ExperimentConfig& config, const DatasetPair& data,
                        const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& teacher);

enum class SweepAxis { factor, tau, seed };
SweepAxis sweep_axis_from_string(const std::string& name);

struct SweepRow {
  std::string method;
  int factor = 1;
  std::optional<double> tau;
  std::string seed;  // seed value, or "mean" / "std" on aggregate rows
  double accuracy = 0.0;
  double ece = 0.0;
  double mean_entropy = 0.0;
  double elapsed_seconds = 0.0;
  std::filesystem::path run_dir;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::filesystem::path summary_path;
};

/// Runs supervised, distillation (per sweep tau) and DML for every axis
/// value and seed; distillation teachers are trained once per seed. Writes
/// summary.csv with columns method,factor,tau,seed,accuracy,ece,mean_entropy,
/// elapsed_seconds. threads caps concurrent sub-runs.
SweepResult cmd_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<double>& values,
                      const std::filesystem::path& out_dir, unsigned threads = 1);

/// Worker count from CQKD_THREADS (default 1).
unsigned threads_from_env();

/// Prints n, accuracy, mean entropy, ECE and the bin table; writes the JSON
/// bin report to bin_path.
CalibrationReport cmd_report(const std::filesystem::path& predictions, int bins,
                             const std::filesystem::path& bin_path, std::ostream& out);

std::string format_metrics_csv(const std::vector<EpochMetrics>& metrics);
void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::filesystem::path& path);

const char* version_string();

}  // namespace cqkd
