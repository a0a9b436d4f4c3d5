#pragma once

// Experiment orchestration behind the `pavi` command-line tool: single runs,
// particle-count sweeps, oracle generation, assumption checks and report
// comparison.
//
// Exit codes: 0 success, 1 failed checks or unexpected error,
// 2 configuration / validation error, 3 divergence, 4 oracle non-convergence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pavi/config.hpp"
#include "pavi/metrics.hpp"
#include "pavi/report.hpp"

namespace pavi {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitOracle = 4;

// Fraction of a series treated as steady state.
inline constexpr double kTrailingFraction = 0.25;

struct RateFit {
  std::optional<double> rate;  // per-iteration geometric factor
  double level = 0.0;          // trailing-window mean
};

// Fits log(W2_n - level) against n on the leading transient segment, where
// level is the trailing-window mean. The rate is unavailable when fewer than
// three points rise clearly above the noise of the trailing window or the fit
// does not decay. Requires at least 10 points.
RateFit rate_fit(std::span<const double> iterations, std::span<const double> values);

struct TrailingStats {
  double mean = 0.0;
  double stderr_ = 0.0;
};
TrailingStats trailing_stats(std::span<const double> values);

struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;   // 95% interval on the slope
  double ci_high = 0.0;
};

// Least squares of log(values) on log(n). Needs at least 3 strictly
// increasing n.
PowerLawFit fit_power_law(std::span<const double> n, std::span<const double> values);

// Reference selected by the config (analytic, oracle file, inline grid
// oracle) or nullopt.
std::optional<ReferenceProduct> build_reference(const ExperimentConfig& cfg);

struct RunRequest {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::size_t threads = 1;
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
};

// Runs one configuration and persists metrics.jsonl, summary.json,
// config.json and final.bin under the output directory.
ConvergenceReport cmd_run(const ExperimentConfig& cfg, const RunRequest& request,
                          const ReferenceProduct* reference = nullptr);

void summarize(ConvergenceReport& report);

struct SweepEntry {
  std::size_t particles = 0;
  double h = 0.0;
  std::size_t batch = 0;
  double mean_w2 = 0.0;
  double stderr_w2 = 0.0;
  std::vector<double> replicate_w2;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  PowerLawFit fit;
};

nlohmann::json sweep_document(const SweepResult& result);

// For each N: corollary schedule, R seeds (base seed + r), steady-state W2
// per seed, mean and standard error; then the log-log slope over N.
SweepResult cmd_sweep(const ExperimentConfig& cfg, std::span<const std::size_t> particle_counts,
                      std::size_t replications, const RunRequest& request,
                      const ReferenceProduct* reference = nullptr);

// Writes oracle.json (analytic or grid fixed point with residual report).
nlohmann::json cmd_oracle(const ExperimentConfig& cfg, const RunRequest& request);

struct CheckItem {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckItem> items;
  bool all_passed() const;
};

CheckReport cmd_check(const ExperimentConfig& cfg, const ReferenceProduct* reference,
                      std::uint64_t seed);

// Compares two report directories, a report and an oracle document, or two
// oracle documents; prints W2 deltas.
nlohmann::json cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b);

// Entry point of the command-line tool. Diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pavi
