#include "cqkd/calibration.hpp"

#include "cqkd/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string_view>

namespace cqkd {

bool PredictionRecord::operator==(const PredictionRecord& other) const {
  if (predicted != other.predicted || confidence != other.confidence || actual != other.actual) return false;
  if (probs.has_value() != other.probs.has_value()) return false;
  return !probs || (probs->size() == other.probs->size() && *probs == *other.probs);
}

PredictionRecord make_record(const Vector<double>& probs, int actual) {
  check_probabilities(probs);
  const auto best = argmax(probs);
  PredictionRecord rec{static_cast<int>(best), probs(best), actual, probs};
  check_record(rec);
  return rec;
}

void check_record(const PredictionRecord& record) {
  if (!(record.confidence >= 0.0 && record.confidence <= 1.0)) {
    throw std::invalid_argument("confidence " + std::to_string(record.confidence) + " outside [0, 1]");
  }
  if (record.predicted < 0 || record.actual < 0) throw std::invalid_argument("class indices must be non-negative");
  if (!record.probs) return;
  const Vector<double>& p = *record.probs;
  check_probabilities(p);
  if (record.predicted >= p.size() || record.actual >= p.size()) {
    throw std::invalid_argument("class index exceeds probability vector length");
  }
  if (record.predicted != argmax(p)) throw std::invalid_argument("predicted class is not the argmax of probs");
  if (std::abs(record.confidence - p.maxCoeff()) > 1e-12) {
    throw std::invalid_argument("confidence differs from the maximum probability");
  }
}

namespace {

void require_records(std::span<const PredictionRecord> records) {
  if (records.empty()) throw std::invalid_argument("no prediction records");
}

}  // namespace

double accuracy(std::span<const PredictionRecord> records) {
  require_records(records);
  const auto hits = std::count_if(records.begin(), records.end(),
                                  [](const PredictionRecord& r) { return r.predicted == r.actual; });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_entropy(std::span<const PredictionRecord> records) {
  require_records(records);
  double total = 0.0;
  for (const auto& r : records) {
    if (!r.probs) throw std::invalid_argument("mean_entropy needs records with probabilities");
    total += entropy(*r.probs);
  }
  return total / static_cast<double>(records.size());
}

int bin_index(double confidence, int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("bin count must be at least 1");
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw std::invalid_argument("confidence outside [0, 1]");
  const double b = static_cast<double>(num_bins);
  int idx = std::clamp(static_cast<int>(std::ceil(confidence * b)) - 1, 0, num_bins - 1);
  // Snap to the interval test against the same bounds the bins report.
  while (idx > 0 && confidence <= static_cast<double>(idx) / b) --idx;
  while (idx < num_bins - 1 && confidence > static_cast<double>(idx + 1) / b) ++idx;
  return idx;
}

std::vector<ReliabilityBin> compute_bins(std::span<const PredictionRecord> records, int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("bin count must be at least 1");
  require_records(records);
  std::vector<ReliabilityBin> bins(static_cast<std::size_t>(num_bins));
  std::vector<double> hits(bins.size(), 0.0);
  std::vector<double> conf_sum(bins.size(), 0.0);
  for (int b = 0; b < num_bins; ++b) {
    bins[b].index = b;
    bins[b].lower = static_cast<double>(b) / num_bins;
    bins[b].upper = static_cast<double>(b + 1) / num_bins;
  }
  for (const auto& r : records) {
    const auto b = static_cast<std::size_t>(bin_index(r.confidence, num_bins));
    bins[b].count += 1;
    hits[b] += r.predicted == r.actual ? 1.0 : 0.0;
    conf_sum[b] += r.confidence;
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count == 0) continue;
    const auto m = static_cast<double>(bins[b].count);
    bins[b].accuracy = hits[b] / m;
    bins[b].confidence = conf_sum[b] / m;
  }
  return bins;
}

double ece_from_bins(std::span<const ReliabilityBin> bins, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ece needs at least one record");
  double total = 0.0;
  for (const auto& bin : bins) {
    if (bin.count == 0) continue;
    total += static_cast<double>(bin.count) / static_cast<double>(n) * std::abs(bin.accuracy - bin.confidence);
  }
  return total;
}

double ece(std::span<const PredictionRecord> records, int num_bins) {
  const auto bins = compute_bins(records, num_bins);
  return ece_from_bins(bins, records.size());
}

CalibrationReport calibration_report(std::span<const PredictionRecord> records, int num_bins) {
  CalibrationReport report;
  report.n = records.size();
  report.num_bins = num_bins;
  report.bins = compute_bins(records, num_bins);
  report.ece = ece_from_bins(report.bins, report.n);
  report.accuracy = accuracy(records);
  const bool all_probs =
      std::all_of(records.begin(), records.end(), [](const PredictionRecord& r) { return r.probs.has_value(); });
  if (all_probs) report.mean_entropy = mean_entropy(records);
  return report;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return {buf, static_cast<std::size_t>(len)};
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(line, std::string("invalid ") + what + " '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::string format_records(std::span<const PredictionRecord> records) {
  const Eigen::Index k = records.empty() || !records.front().probs ? 0 : records.front().probs->size();
  std::string out = "sample_id,actual,predicted,confidence";
  for (Eigen::Index i = 0; i < k; ++i) out += ",p_" + std::to_string(i);
  out += '\n';
  for (std::size_t id = 0; id < records.size(); ++id) {
    const auto& r = records[id];
    const Eigen::Index rk = r.probs ? r.probs->size() : 0;
    if (rk != k) throw std::invalid_argument("records disagree on probability vector length");
    out += std::to_string(id) + ',' + std::to_string(r.actual) + ',' + std::to_string(r.predicted) + ',' +
           format_double(r.confidence);
    for (Eigen::Index i = 0; i < k; ++i) out += ',' + format_double((*r.probs)(i));
    out += '\n';
  }
  return out;
}

void write_records(std::span<const PredictionRecord> records, const std::filesystem::path& path) {
  const std::string text = format_records(records);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed on " + path.string());
}

std::vector<PredictionRecord> parse_records(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header row");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  const std::vector<std::string_view> fixed = {"sample_id", "actual", "predicted", "confidence"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw ParseError(line_no, "expected header starting with sample_id,actual,predicted,confidence");
  }
  const std::size_t k = header.size() - fixed.size();
  for (std::size_t i = 0; i < k; ++i) {
    if (header[fixed.size() + i] != "p_" + std::to_string(i)) {
      throw ParseError(line_no, "unexpected probability column '" + std::string(header[fixed.size() + i]) + "'");
    }
  }
  if (k == 1) throw ParseError(line_no, "need at least 2 probability columns");

  std::vector<PredictionRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    PredictionRecord r;
    parse_number<long long>(fields[0], line_no, "sample_id");
    r.actual = parse_number<int>(fields[1], line_no, "actual class");
    r.predicted = parse_number<int>(fields[2], line_no, "predicted class");
    r.confidence = parse_number<double>(fields[3], line_no, "confidence");
    if (k > 0) {
      Vector<double> p(static_cast<Eigen::Index>(k));
      for (std::size_t i = 0; i < k; ++i) p(static_cast<Eigen::Index>(i)) = parse_number<double>(fields[4 + i], line_no, "probability");
      r.probs = std::move(p);
    }
    try {
      check_record(r);
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<PredictionRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_records(buf.str());
}

std::string format_bin_report(const CalibrationReport& report) {
  nlohmann::ordered_json doc;
  doc["n"] = report.n;
  doc["num_bins"] = report.num_bins;
  doc["ece"] = report.ece;
  doc["accuracy"] = report.accuracy;
  doc["mean_entropy"] = report.mean_entropy ? nlohmann::ordered_json(*report.mean_entropy) : nullptr;
  auto& bins = doc["bins"] = nlohmann::ordered_json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"index", b.index},
                    {"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"accuracy", b.accuracy},
                    {"confidence", b.confidence}});
  }
  return doc.dump(2) + "\n";
}

void write_bin_report(const CalibrationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_bin_report(report);
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace cqkd
