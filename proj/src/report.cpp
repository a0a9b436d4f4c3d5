#include "pavi/report.hpp"

#include <sstream>

#include "pavi/errors.hpp"

namespace pavi {

using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

json row_json(const MetricRow& row) {
  json j;
  j["iteration"] = row.iteration;
  j["w2"] = optional_json(row.w2_total);
  j["w2_coordinates"] = row.w2_coordinates;
  return j;
}

}  // namespace

std::string metric_row_json(const MetricRow& row) { return row_json(row).dump(); }

JsonLinesSink::JsonLinesSink(const std::filesystem::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
}

void JsonLinesSink::record(const MetricRow& row) {
  std::lock_guard lock(mutex_);
  out_ << metric_row_json(row) << '\n';
  out_.flush();
}

void write_report(const std::filesystem::path& dir, const ConvergenceReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.jsonl", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "metrics.jsonl").string());
    for (const auto& row : report.series) out << metric_row_json(row) << '\n';
  }
  json s;
  s["metadata"] = {{"potential", report.metadata.potential_fingerprint},
                   {"config", report.metadata.config},
                   {"seed", report.metadata.seed},
                   {"code_version", report.metadata.code_version}};
  s["summary"] = {{"trailing_mean", optional_json(report.summary.trailing_mean)},
                  {"trailing_stderr", optional_json(report.summary.trailing_stderr)},
                  {"contraction_rate", optional_json(report.summary.contraction_rate)},
                  {"steady_state_level", optional_json(report.summary.steady_state_level)}};
  json clock = json::array();
  for (const auto& row : report.series) clock.push_back(row.wall_clock_s);
  s["wall_clock_s"] = clock;
  std::ofstream out(dir / "summary.json", std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "summary.json").string());
  out << s.dump(2) << '\n';
}

ConvergenceReport read_report(const std::filesystem::path& dir) {
  ConvergenceReport report;
  std::ifstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw Error("cannot read " + (dir / "metrics.jsonl").string());
  std::string line;
  while (std::getline(metrics, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    MetricRow row;
    row.iteration = j.at("iteration").get<std::uint64_t>();
    row.w2_total = optional_from(j, "w2");
    row.w2_coordinates = j.at("w2_coordinates").get<std::vector<double>>();
    report.series.push_back(std::move(row));
  }
  std::ifstream summary(dir / "summary.json");
  if (!summary) throw Error("cannot read " + (dir / "summary.json").string());
  const json s = json::parse(summary);
  const json& meta = s.at("metadata");
  report.metadata.potential_fingerprint = meta.at("potential").get<std::string>();
  report.metadata.config = meta.at("config");
  report.metadata.seed = meta.at("seed").get<std::uint64_t>();
  report.metadata.code_version = meta.at("code_version").get<std::string>();
  const json& sum = s.at("summary");
  report.summary.trailing_mean = optional_from(sum, "trailing_mean");
  report.summary.trailing_stderr = optional_from(sum, "trailing_stderr");
  report.summary.contraction_rate = optional_from(sum, "contraction_rate");
  report.summary.steady_state_level = optional_from(sum, "steady_state_level");
  const auto clock = s.at("wall_clock_s").get<std::vector<double>>();
  if (clock.size() != report.series.size()) {
    throw Error("summary.json timings do not match metrics.jsonl rows");
  }
  for (std::size_t k = 0; k < clock.size(); ++k) report.series[k].wall_clock_s = clock[k];
  return report;
}

}  // namespace pavi
