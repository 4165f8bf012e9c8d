// cqkd: generate data, train, sweep and report.
//
// Exit codes: 0 success, 2 invalid configuration or arguments, 3 file I/O or
// format errors, 4 failed run.

#include "cqkd/errors.hpp"
#include "cqkd/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kRun = 4 };

template <typename F>
int guarded(F&& body) {
  try {
    body();
    return kOk;
  } catch (const cqkd::RunFailure& e) {
    std::cerr << "error: " << e.what() << "\nmanifest: " << e.manifest_path().string() << "\n";
    return kRun;
  } catch (const cqkd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const cqkd::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const cqkd::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const cqkd::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRun;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-quality knowledge distillation experiments"};
  app.set_version_flag("--version", std::string(cqkd::version_string()));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> teacher;
  std::optional<std::string> data_dir;
  std::string axis;
  std::vector<double> values;
  std::string predictions;
  int bins = cqkd::kDefaultBins;

  auto* gen = app.add_subcommand("gen-data", "Write train and validation datasets");
  gen->add_option("--config", config_path, "Experiment config (JSON)")->required();
  gen->add_option("--out", out_dir, "Output directory (default: config output_dir)");

  auto* train = app.add_subcommand("train", "Train one method and write its artifacts");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--teacher", teacher, "Teacher checkpoint (required for cqkd)");
  train->add_option("--data", data_dir, "Directory with train.cqds and validation.cqds");
  train->add_option("--out", out_dir, "Run directory (default: config output_dir)");
  train->add_option("--seed", seed, "Training seed (overrides config)");

  auto* sweep = app.add_subcommand("sweep", "Run the method grid over one axis");
  sweep->add_option("--config", config_path, "Experiment config (JSON)")->required();
  sweep->add_option("--axis", axis, "factor, tau or seed")->required();
  sweep->add_option("--values", values, "Axis values")->required()->delimiter(',');
  sweep->add_option("--out", out_dir, "Sweep directory (default: config output_dir)");

  auto* report = app.add_subcommand("report", "Calibration report for a predictions CSV");
  report->add_option("predictions", predictions, "Predictions CSV")->required();
  report->add_option("--bins", bins, "Number of confidence bins");
  report->add_option("--out", out_dir, "Bin report path (default: <predictions>.bins.json)");

  CLI11_PARSE(app, argc, argv);

  auto load = [&] {
    auto config = cqkd::load_config(config_path);
    if (!out_dir.empty()) config.output_dir = out_dir;
    return config;
  };

  if (*gen) {
    return guarded([&] {
      const auto config = load();
      const auto r = cqkd::cmd_gen_data(config, config.output_dir);
      std::cout << r.train_path.string() << "\n" << r.validation_path.string() << "\n";
    });
  }
  if (*train) {
    return guarded([&] {
      const auto config = load();
      cqkd::TrainOptions options;
      options.out_dir = config.output_dir;
      if (teacher) options.teacher_path = *teacher;
      if (data_dir) options.data_dir = *data_dir;
      options.seed = seed;
      const auto r = cqkd::cmd_train(config, options);
      std::cout << cqkd::to_string(r.method) << " validation accuracy " << r.final_validation.accuracy << " ece "
                << r.final_validation.ece << "\n"
                << "manifest: " << r.manifest_path.string() << "\n";
    });
  }
  if (*sweep) {
    return guarded([&] {
      const auto config = load();
      const auto axis_value = cqkd::sweep_axis_from_string(axis);
      const auto r = cqkd::cmd_sweep(config, axis_value, values, config.output_dir, cqkd::threads_from_env());
      std::cout << r.summary_path.string() << "\n";
    });
  }
  return guarded([&] {
    const std::filesystem::path bin_path = out_dir.empty() ? predictions + ".bins.json" : out_dir;
    cqkd::cmd_report(predictions, bins, bin_path, std::cout);
  });
}
