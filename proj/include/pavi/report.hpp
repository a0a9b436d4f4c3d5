#pragma once

// Convergence reports: a metrics series plus run metadata and a summary.
// On disk a report is two files in one directory: metrics.jsonl (one object
// per recorded iteration, deterministic bytes) and summary.json (metadata,
// summary statistics and wall-clock timings).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace pavi {

struct MetricRow {
  std::uint64_t iteration = 0;
  std::optional<double> w2_total;     // absent when no reference is attached
  std::vector<double> w2_coordinates;
  double wall_clock_s = 0.0;          // not part of metrics.jsonl

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct ReportSummary {
  std::optional<double> trailing_mean;
  std::optional<double> trailing_stderr;
  std::optional<double> contraction_rate;
  std::optional<double> steady_state_level;

  friend bool operator==(const ReportSummary&, const ReportSummary&) = default;
};

struct RunMetadata {
  std::string potential_fingerprint;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string code_version;

  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

struct ConvergenceReport {
  RunMetadata metadata;
  std::vector<MetricRow> series;
  ReportSummary summary;

  friend bool operator==(const ConvergenceReport&, const ConvergenceReport&) = default;
};

inline constexpr const char* kCodeVersion = "pavi 1.0.0";

class ReportSink {
 public:
  virtual ~ReportSink() = default;
  virtual void record(const MetricRow& row) = 0;
};

// Appends rows to metrics.jsonl; thread-safe.
class JsonLinesSink : public ReportSink {
 public:
  JsonLinesSink(const std::filesystem::path& path, bool append = false);
  void record(const MetricRow& row) override;

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

std::string metric_row_json(const MetricRow& row);

void write_report(const std::filesystem::path& dir, const ConvergenceReport& report);
ConvergenceReport read_report(const std::filesystem::path& dir);

}  // namespace pavi
