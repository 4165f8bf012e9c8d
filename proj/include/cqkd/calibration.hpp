#pragma once

// Accuracy, mean entropy and expected calibration error over prediction
// records, plus the record CSV and reliability-bin report formats.

#include "cqkd/prob_math.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cqkd {

inline constexpr int kDefaultBins = 10;

struct PredictionRecord {
  int predicted = 0;
  double confidence = 0.0;
  int actual = 0;
  std::optional<Vector<double>> probs;

  bool operator==(const PredictionRecord& other) const;
};

/// Builds a record from a full distribution: predicted = argmax (lowest index
/// on ties), confidence = max probability.
PredictionRecord make_record(const Vector<double>& probs, int actual);

/// Throws std::invalid_argument if the record violates its invariants.
void check_record(const PredictionRecord& record);

/// Bin b (zero-based) covers (b/B, (b+1)/B]; bin 0 also takes confidence 0.
struct ReliabilityBin {
  int index = 0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

struct CalibrationReport {
  std::size_t n = 0;
  int num_bins = kDefaultBins;
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
  double accuracy = 0.0;
  /// Present only when every record carries probs.
  std::optional<double> mean_entropy;
};

double accuracy(std::span<const PredictionRecord> records);
double mean_entropy(std::span<const PredictionRecord> records);

/// Zero-based bin index for a confidence in [0, 1].
int bin_index(double confidence, int num_bins);
std::vector<ReliabilityBin> compute_bins(std::span<const PredictionRecord> records, int num_bins);
/// Weighted |acc - conf| over bins; n is the total record count.
double ece_from_bins(std::span<const ReliabilityBin> bins, std::size_t n);
double ece(std::span<const PredictionRecord> records, int num_bins = kDefaultBins);

CalibrationReport calibration_report(std::span<const PredictionRecord> records, int num_bins = kDefaultBins);

/// CSV header: sample_id,actual,predicted,confidence,p_0,...,p_{K-1}. The
/// probability columns are omitted when records carry no probs.
void write_records(std::span<const PredictionRecord> records, const std::filesystem::path& path);
std::string format_records(std::span<const PredictionRecord> records);
/// Throws ParseError with the offending line number.
std::vector<PredictionRecord> parse_records(const std::string& text);
std::vector<PredictionRecord> read_records(const std::filesystem::path& path);

/// JSON document with n, B, ece, accuracy, mean_entropy and one object per
/// bin (index, lower, upper, count, accuracy, confidence).
std::string format_bin_report(const CalibrationReport& report);
void write_bin_report(const CalibrationReport& report, const std::filesystem::path& path);

}  // namespace cqkd
