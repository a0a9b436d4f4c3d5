#include "pavi/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <typeinfo>

#include <CLI11.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "pavi/dynamics.hpp"
#include "pavi/errors.hpp"
#include "pavi/oracle.hpp"
#include "pavi/rng.hpp"
#include "pavi/thread_pool.hpp"

namespace pavi {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Unbiased standard deviation; 0 for a single value.
double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::size_t trailing_start(std::size_t n) {
  const auto window = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(kTrailingFraction * static_cast<double>(n))));
  return n - std::min(window, n);
}

std::vector<double> w2_series(const ConvergenceReport& report) {
  std::vector<double> out;
  for (const auto& row : report.series)
    if (row.w2_total) out.push_back(*row.w2_total);
  return out;
}

const char* to_string(Algorithm a) { return a == Algorithm::kPavi ? "pavi" : "exact"; }
const char* to_string(Schedule s) {
  return s == Schedule::kCorollary ? "corollary" : "explicit";
}

json run_config_json(const RunConfig& c) {
  json j = {{"algorithm", to_string(c.algorithm)},
            {"schedule", to_string(c.schedule)},
            {"h", c.h},
            {"N", c.particles},
            {"T", c.iterations},
            {"seed", c.seed},
            {"metrics_every", c.metrics_every}};
  if (c.algorithm == Algorithm::kPavi) j["B"] = c.batch;
  return j;
}

RunConfig effective_run(const ExperimentConfig& cfg, const RunRequest& request) {
  RunConfig run = cfg.run;
  if (request.seed) run.seed = *request.seed;
  return resolve_config(*cfg.potential, run);
}

fs::path output_dir(const ExperimentConfig& cfg, const RunRequest& request) {
  return request.out_dir ? *request.out_dir : cfg.output_dir;
}

// Exactly quadratic; the perturbed family derives from QuadraticPotential.
const QuadraticPotential* as_quadratic(const Potential& v) {
  if (typeid(v) != typeid(QuadraticPotential)) return nullptr;
  return static_cast<const QuadraticPotential*>(&v);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Rows of an existing metrics.jsonl with iteration < limit, as raw lines.
std::vector<std::string> metric_lines_before(const fs::path& path, std::uint64_t limit) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("iteration").get<std::uint64_t>() < limit) kept.push_back(line);
  }
  return kept;
}

MetricRow parse_metric_line(const std::string& line) {
  const json j = json::parse(line);
  MetricRow row;
  row.iteration = j.at("iteration").get<std::uint64_t>();
  if (!j.at("w2").is_null()) row.w2_total = j.at("w2").get<double>();
  row.w2_coordinates = j.at("w2_coordinates").get<std::vector<double>>();
  return row;
}

RunResult run_dynamics(const Potential& v, const RunConfig& cfg, ParticleArray initial,
                       const RunOptions& options) {
  return run(v, cfg, std::move(initial), options);
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(6) << x;
  return s.str();
}

}  // namespace

RateFit rate_fit(std::span<const double> iterations, std::span<const double> values) {
  if (iterations.size() != values.size()) throw UsageError("rate_fit: length mismatch");
  if (values.size() < 10) throw UsageError("rate_fit needs at least 10 points");
  const std::size_t n = values.size();
  const auto tail = values.subspan(trailing_start(n));
  RateFit fit;
  fit.level = mean_of(tail);
  const double threshold =
      std::max(3.0 * sd_of(tail), 1e-3 * (values.front() - fit.level));
  std::size_t prefix = 0;
  while (prefix < n && values[prefix] - fit.level > threshold && values[prefix] > fit.level)
    ++prefix;
  if (prefix < 3) return fit;

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < prefix; ++k) {
    const double x = iterations[k];
    const double y = std::log(values[k] - fit.level);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double p = static_cast<double>(prefix);
  const double denom = p * sxx - sx * sx;
  if (!(denom > 0.0)) return fit;
  const double rate = std::exp((p * sxy - sx * sy) / denom);
  if (std::isfinite(rate) && rate < 1.0) fit.rate = rate;
  return fit;
}

TrailingStats trailing_stats(std::span<const double> values) {
  if (values.empty()) throw UsageError("trailing_stats: empty series");
  const auto tail = values.subspan(trailing_start(values.size()));
  return {mean_of(tail), sd_of(tail) / std::sqrt(static_cast<double>(tail.size()))};
}

PowerLawFit fit_power_law(std::span<const double> n, std::span<const double> values) {
  if (n.size() != values.size()) throw UsageError("power-law fit: length mismatch");
  if (n.size() < 3) throw UsageError("power-law fit needs at least 3 particle counts");
  for (std::size_t k = 1; k < n.size(); ++k)
    if (!(n[k] > n[k - 1]))
      throw UsageError("particle counts must be strictly increasing (slope undefined)");
  std::vector<double> x, y;
  for (std::size_t k = 0; k < n.size(); ++k) {
    if (!(values[k] > 0.0)) throw UsageError("power-law fit needs positive values");
    x.push_back(std::log(n[k]));
    y.push_back(std::log(values[k]));
  }
  const double mx = mean_of(x), my = mean_of(y);
  double sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  PowerLawFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - fit.intercept - fit.slope * x[k];
    rss += r * r;
  }
  const double dof = static_cast<double>(x.size() - 2);
  const double se = std::sqrt(rss / dof / sxx);
  const double t = boost::math::quantile(boost::math::students_t(dof), 0.975);
  fit.ci_low = fit.slope - t * se;
  fit.ci_high = fit.slope + t * se;
  return fit;
}

std::optional<ReferenceProduct> build_reference(const ExperimentConfig& cfg) {
  switch (cfg.reference.kind) {
    case ReferenceKind::kNone:
      return std::nullopt;
    case ReferenceKind::kAnalytic: {
      const auto* q = as_quadratic(*cfg.potential);
      if (!q) throw ConfigError("analytic reference needs a quadratic potential");
      return gaussian_mfvi_solution(*q);
    }
    case ReferenceKind::kOracle:
      if (!cfg.reference.path.empty()) {
        auto ref = load_reference(cfg.reference.path);
        if (ref.dimension() != cfg.potential->dimension())
          throw ConfigError("oracle document dimension does not match the potential");
        return ref;
      }
      return to_reference(
          fixed_point_solve(*cfg.potential, default_grid(*cfg.potential, cfg.grid_points),
                            cfg.oracle)
              .solution);
  }
  return std::nullopt;
}

void summarize(ConvergenceReport& report) {
  report.summary = {};
  const auto values = w2_series(report);
  if (values.empty()) return;
  const auto stats = trailing_stats(values);
  report.summary.trailing_mean = stats.mean;
  report.summary.trailing_stderr = stats.stderr_;
  if (values.size() >= 10) {
    std::vector<double> its;
    for (const auto& row : report.series)
      if (row.w2_total) its.push_back(static_cast<double>(row.iteration));
    const auto fit = rate_fit(its, values);
    report.summary.contraction_rate = fit.rate;
    report.summary.steady_state_level = fit.level;
  }
}

ConvergenceReport cmd_run(const ExperimentConfig& cfg, const RunRequest& request,
                          const ReferenceProduct* reference) {
  const Potential& v = *cfg.potential;
  RunConfig run = effective_run(cfg, request);
  validate_config(v, run);
  const fs::path dir = output_dir(cfg, request);
  if (run.checkpoint_every > 0) run.checkpoint_dir = dir;

  std::optional<ReferenceProduct> owned;
  if (!reference) {
    owned = build_reference(cfg);
    if (owned) reference = &*owned;
  }

  ParticleArray initial;
  std::size_t start = 0;
  std::vector<std::string> kept;
  if (request.resume) {
    fs::path path = *request.resume;
    if (fs::is_directory(path)) path = checkpoint_path(path);
    ParticleFile file = read_particles_binary(path);
    if (file.header.seed != run.seed)
      throw ConfigError("checkpoint seed " + std::to_string(file.header.seed) +
                        " does not match run seed " + std::to_string(run.seed));
    initial = std::move(file.particles);
    start = file.header.iteration;
    kept = metric_lines_before(dir / "metrics.jsonl", start);
  } else {
    initial = init_particles(v.dimension(), run.particles, cfg.init, run.seed);
  }

  fs::create_directories(dir);
  write_json(dir / "config.json", cfg.raw);
  {
    std::ofstream rewrite(dir / "metrics.jsonl", std::ios::trunc);
    for (const auto& line : kept) rewrite << line << '\n';
  }
  JsonLinesSink sink(dir / "metrics.jsonl", true);
  ThreadPool pool(std::max<std::size_t>(1, request.threads));

  RunOptions options;
  options.reference = reference;
  options.sink = &sink;
  options.pool = &pool;
  options.start_iteration = start;
  RunResult result = run_dynamics(v, run, std::move(initial), options);

  ConvergenceReport report;
  for (const auto& line : kept) report.series.push_back(parse_metric_line(line));
  for (auto& row : result.report.series) report.series.push_back(std::move(row));
  report.metadata.potential_fingerprint = v.fingerprint();
  report.metadata.config = run_config_json(run);
  report.metadata.seed = run.seed;
  report.metadata.code_version = kCodeVersion;
  summarize(report);
  write_report(dir, report);
  write_particles_binary(dir / "final.bin", result.final_particles, run.seed, run.iterations);
  return report;
}

json sweep_document(const SweepResult& result) {
  json entries = json::array();
  for (const auto& e : result.entries) {
    entries.push_back({{"N", e.particles},
                       {"h", e.h},
                       {"B", e.batch},
                       {"mean_w2", e.mean_w2},
                       {"stderr_w2", e.stderr_w2},
                       {"replicates", e.replicate_w2}});
  }
  return {{"entries", entries},
          {"slope", result.fit.slope},
          {"intercept", result.fit.intercept},
          {"slope_ci95", {result.fit.ci_low, result.fit.ci_high}}};
}

SweepResult cmd_sweep(const ExperimentConfig& cfg, std::span<const std::size_t> particle_counts,
                      std::size_t replications, const RunRequest& request,
                      const ReferenceProduct* reference) {
  if (particle_counts.size() < 3)
    throw UsageError("sweep needs at least 3 particle counts (slope undefined)");
  for (std::size_t k = 1; k < particle_counts.size(); ++k)
    if (particle_counts[k] <= particle_counts[k - 1])
      throw UsageError("sweep particle counts must be strictly increasing");
  std::optional<ReferenceProduct> owned;
  if (!reference) {
    owned = build_reference(cfg);
    if (!owned) throw UsageError("sweep needs an analytic or oracle reference");
    reference = &*owned;
  }

  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (seeds.empty()) {
    if (replications == 0) throw UsageError("sweep needs at least one replication");
    const std::uint64_t base = request.seed.value_or(cfg.run.seed);
    for (std::size_t r = 0; r < replications; ++r) seeds.push_back(base + r);
  }
  const Potential& v = *cfg.potential;
  ThreadPool pool(std::max<std::size_t>(1, request.threads));

  SweepResult result;
  for (std::size_t n : particle_counts) {
    RunConfig run = cfg.run;
    run.particles = n;
    run.schedule = Schedule::kCorollary;
    run.checkpoint_every = 0;
    if (cfg.sweep.iterations) run.iterations = *cfg.sweep.iterations;
    run.metrics_every = cfg.run.metrics_every;
    run = resolve_config(v, run);
    validate_config(v, run);

    SweepEntry entry;
    entry.particles = n;
    entry.h = run.h;
    entry.batch = run.batch;
    entry.replicate_w2.assign(seeds.size(), 0.0);
    pool.parallel_for(seeds.size(), [&](std::size_t r) {
      RunConfig job = run;
      job.seed = seeds[r];
      RunOptions options;
      options.reference = reference;
      const auto res = run_dynamics(
          v, job, init_particles(v.dimension(), n, cfg.init, job.seed), options);
      entry.replicate_w2[r] = trailing_stats(w2_series(res.report)).mean;
    });
    entry.mean_w2 = mean_of(entry.replicate_w2);
    entry.stderr_w2 =
        sd_of(entry.replicate_w2) / std::sqrt(static_cast<double>(entry.replicate_w2.size()));
    result.entries.push_back(std::move(entry));
  }
  std::vector<double> ns, means;
  for (const auto& e : result.entries) {
    ns.push_back(static_cast<double>(e.particles));
    means.push_back(e.mean_w2);
  }
  result.fit = fit_power_law(ns, means);
  return result;
}

json cmd_oracle(const ExperimentConfig& cfg, const RunRequest& request) {
  const Potential& v = *cfg.potential;
  json doc;
  if (const auto* q = as_quadratic(v)) {
    doc = oracle_document(gaussian_mfvi_solution(*q));
  } else {
    const auto from_uniform =
        fixed_point_solve(v, default_grid(v, cfg.grid_points, GridInit::kUniform), cfg.oracle);
    const auto from_point =
        fixed_point_solve(v, default_grid(v, cfg.grid_points, GridInit::kPointMass), cfg.oracle);
    doc = oracle_document(from_uniform);
    std::vector<double> gap;
    for (std::size_t i = 0; i < v.dimension(); ++i) {
      gap.push_back(w2_between_marginals(from_uniform.solution[i], from_point.solution[i],
                                         cfg.oracle.w2_points));
    }
    doc["uniqueness"] = {{"w2_between_initializations", gap},
                         {"point_mass_iterations", from_point.iterations}};
  }
  write_json(output_dir(cfg, request) / "oracle.json", doc);
  return doc;
}

bool CheckReport::all_passed() const {
  return std::all_of(items.begin(), items.end(), [](const CheckItem& c) { return c.passed; });
}

CheckReport cmd_check(const ExperimentConfig& cfg, const ReferenceProduct* reference,
                      std::uint64_t seed) {
  const Potential& v = *cfg.potential;
  const std::size_t m = v.dimension();
  const double alpha = v.alpha(), lip = v.lip();
  const std::vector<double> center = v.minimizer();
  constexpr std::size_t kPoints = 1000;
  CheckReport report;

  // Points around the minimizer with spread a few posterior widths.
  auto draw = [&](RngStream& rng) {
    std::vector<double> x(m);
    for (std::size_t i = 0; i < m; ++i) x[i] = center[i] + 3.0 * rng.normal() / std::sqrt(alpha);
    return x;
  };

  {
    RngStream rng(seed, 0, StreamRole::kCheck, 0);
    constexpr double delta = 1e-4;
    double worst = 0.0;
    std::size_t failures = 0;
    for (std::size_t k = 0; k < kPoints; ++k) {
      auto x = draw(rng);
      for (std::size_t i = 0; i < m; ++i) {
        const double g = partial_derivative(v, i, x);
        const double keep = x[i];
        x[i] = keep + delta;
        const double up = eval_potential(v, x);
        x[i] = keep - delta;
        const double down = eval_potential(v, x);
        x[i] = keep;
        const double err = std::abs((up - down) / (2 * delta) - g) / (1.0 + std::abs(g));
        worst = std::max(worst, err);
        if (err > 1e-6) ++failures;
      }
    }
    report.items.push_back({"gradient_finite_difference", failures == 0,
                            "max relative error " + fmt(worst) + " (tolerance 1e-06)"});
  }

  {
    RngStream rng(seed, 0, StreamRole::kCheck, 1);
    double worst = 0.0;
    std::vector<double> g(m);
    for (std::size_t k = 0; k < kPoints; ++k) {
      const auto x = draw(rng);
      g = gradient(v, x);
      for (std::size_t i = 0; i < m; ++i) {
        const double p = partial_derivative(v, i, x);
        worst = std::max(worst, std::abs(g[i] - p) / (1.0 + std::abs(p)));
      }
    }
    report.items.push_back({"gradient_matches_partials", worst <= 1e-12,
                            "max relative difference " + fmt(worst)});
  }

  {
    RngStream rng(seed, 0, StreamRole::kCheck, 2);
    constexpr double delta = 1e-4;
    double lowest = std::numeric_limits<double>::infinity();
    double highest = -lowest;
    std::vector<double> u(m), g0, g1, shifted(m);
    for (std::size_t k = 0; k < kPoints; ++k) {
      const auto x = draw(rng);
      double norm = 0.0;
      for (auto& e : u) {
        e = rng.normal();
        norm += e * e;
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < m; ++i) {
        u[i] /= norm;
        shifted[i] = x[i] + delta * u[i];
      }
      g0 = gradient(v, x);
      g1 = gradient(v, shifted);
      double q = 0.0;
      for (std::size_t i = 0; i < m; ++i) q += u[i] * (g1[i] - g0[i]);
      q /= delta;
      lowest = std::min(lowest, q);
      highest = std::max(highest, q);
    }
    const bool ok = lowest >= alpha - 1e-3 && highest <= lip + 1e-3;
    report.items.push_back({"convexity_sandwich", ok,
                            "directional curvature range [" + fmt(lowest) + ", " +
                                fmt(highest) + "] vs [alpha, L] = [" + fmt(alpha) + ", " +
                                fmt(lip) + "] +/- 1e-3"});
  }

  {
    RngStream rng(seed, 0, StreamRole::kCheck, 3);
    const double h = 1.0 / (alpha + lip);
    const double factor = 1.0 - alpha * h;
    std::size_t violations = 0;
    double worst = 0.0;
    std::vector<double> gx(m), gy(m);
    for (std::size_t k = 0; k < kPoints; ++k) {
      const auto x = draw(rng);
      const auto y = draw(rng);
      gx = gradient(v, x);
      gy = gradient(v, y);
      double d0 = 0.0, d1 = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        d0 += (x[i] - y[i]) * (x[i] - y[i]);
        const double e = (x[i] - h * gx[i]) - (y[i] - h * gy[i]);
        d1 += e * e;
      }
      const double excess = std::sqrt(d1) - factor * std::sqrt(d0);
      worst = std::max(worst, excess);
      if (excess > 1e-12) ++violations;
    }
    report.items.push_back({"contraction_map", violations == 0,
                            std::to_string(violations) + " violations, max excess " +
                                fmt(worst) + " at h = 1/(alpha+L)"});
  }

  if (reference) {
    if (reference->dimension() != m) throw ConfigError("reference dimension mismatch");
    constexpr std::size_t kSamples = 100000;
    const auto samples = sample_reference(*reference, kSamples, seed);
    const auto mom = grad_moment_check(v, samples);
    const double md = static_cast<double>(m);
    const double k = static_cast<double>(kSamples);
    const double mean_bound = 4.0 * std::sqrt(md * lip * lip / alpha) / std::sqrt(k);
    const double sq_bound = md * lip * lip / alpha * 1.05;
    const double var_bound = 1.05 / alpha;
    report.items.push_back({"moment_mean_gradient", mom.mean_grad_norm <= mean_bound,
                            fmt(mom.mean_grad_norm) + " <= " + fmt(mean_bound)});
    report.items.push_back({"moment_mean_squared_gradient", mom.mean_sq_grad <= sq_bound,
                            fmt(mom.mean_sq_grad) + " <= " + fmt(sq_bound)});
    const double top =
        *std::max_element(mom.coordinate_variances.begin(), mom.coordinate_variances.end());
    report.items.push_back({"moment_covariance", top <= var_bound,
                            "max coordinate variance " + fmt(top) + " <= 1/alpha*1.05 = " +
                                fmt(var_bound) + " (margin " + fmt(var_bound - top) + ")"});
  }
  return report;
}

namespace {

enum class ArtifactKind { kReport, kOracle };

struct Artifact {
  ArtifactKind kind;
  fs::path path;  // report directory or oracle document
};

Artifact classify(const fs::path& p) {
  if (fs::is_directory(p)) {
    if (fs::exists(p / "metrics.jsonl")) return {ArtifactKind::kReport, p};
    if (fs::exists(p / "oracle.json")) return {ArtifactKind::kOracle, p / "oracle.json"};
    throw UsageError(p.string() + " holds neither a report nor an oracle document");
  }
  if (!fs::exists(p)) throw UsageError("no such file: " + p.string());
  return {ArtifactKind::kOracle, p};
}

std::optional<ParticleArray> final_particles(const fs::path& dir) {
  if (!fs::exists(dir / "final.bin")) return std::nullopt;
  return read_particles_binary(dir / "final.bin").particles;
}

}  // namespace

json cmd_compare(const fs::path& a_path, const fs::path& b_path) {
  Artifact a = classify(a_path), b = classify(b_path);
  if (a.kind == ArtifactKind::kOracle && b.kind == ArtifactKind::kReport) std::swap(a, b);
  json out;

  if (a.kind == ArtifactKind::kReport && b.kind == ArtifactKind::kReport) {
    const auto ra = read_report(a.path), rb = read_report(b.path);
    out["kind"] = "report-report";
    json rows = json::array();
    double worst = 0.0;
    std::size_t ib = 0;
    for (const auto& row : ra.series) {
      while (ib < rb.series.size() && rb.series[ib].iteration < row.iteration) ++ib;
      if (ib == rb.series.size() || rb.series[ib].iteration != row.iteration) continue;
      if (!row.w2_total || !rb.series[ib].w2_total) continue;
      const double d = *rb.series[ib].w2_total - *row.w2_total;
      worst = std::max(worst, std::abs(d));
      rows.push_back({{"iteration", row.iteration},
                      {"w2_a", *row.w2_total},
                      {"w2_b", *rb.series[ib].w2_total},
                      {"delta", d}});
    }
    out["rows"] = rows;
    out["max_abs_delta"] = worst;
    if (ra.summary.trailing_mean && rb.summary.trailing_mean)
      out["trailing_mean_delta"] = *rb.summary.trailing_mean - *ra.summary.trailing_mean;
    const auto fa = final_particles(a.path), fb = final_particles(b.path);
    if (fa && fb && fa->rows() == fb->rows() && fa->cols() == fb->cols())
      out["final_particles_w2"] = w2_product_empirical(*fa, *fb);
  } else if (a.kind == ArtifactKind::kReport) {
    const auto ra = read_report(a.path);
    const auto ref = load_reference(b.path);
    out["kind"] = "report-oracle";
    const auto fa = final_particles(a.path);
    if (!fa) throw UsageError(a.path.string() + " has no final.bin");
    if (fa->rows() != ref.dimension()) throw UsageError("report and oracle dimensions differ");
    const auto per = w2_per_coordinate(*fa, ref);
    out["final_w2_per_coordinate"] = per;
    out["final_w2"] = combine_coordinates(per);
    if (!ra.series.empty() && ra.series.back().w2_total) {
      out["last_recorded_w2"] = *ra.series.back().w2_total;
      out["delta"] = combine_coordinates(per) - *ra.series.back().w2_total;
    }
  } else {
    const auto ra = load_reference(a.path), rb = load_reference(b.path);
    if (ra.dimension() != rb.dimension()) throw UsageError("oracle dimensions differ");
    out["kind"] = "oracle-oracle";
    std::vector<double> per;
    for (std::size_t i = 0; i < ra.dimension(); ++i)
      per.push_back(w2_between_marginals(*ra.marginals[i], *rb.marginals[i]));
    out["w2_per_coordinate"] = per;
    out["w2"] = combine_coordinates(per);
  }
  return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pavi: particle mean-field variational inference"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t threads = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* run_cmd = app.add_subcommand("run", "run the particle dynamics");
  add_common(run_cmd);
  std::string resume;
  run_cmd->add_option("--resume", resume, "checkpoint file or run directory to continue from");

  auto* sweep_cmd = app.add_subcommand("sweep", "particle-count sweep with seed replication");
  add_common(sweep_cmd);
  std::vector<std::size_t> sweep_n;
  std::optional<std::size_t> sweep_r;
  sweep_cmd->add_option("--N", sweep_n, "particle counts (overrides config)");
  sweep_cmd->add_option("--replications", sweep_r, "seeds per particle count");

  auto* oracle_cmd = app.add_subcommand("oracle", "compute the mean-field solution");
  add_common(oracle_cmd);

  auto* check_cmd = app.add_subcommand("check", "validate potential constants");
  add_common(check_cmd);

  auto* compare_cmd = app.add_subcommand("compare", "W2 deltas between reports or oracles");
  std::vector<std::string> compare_paths;
  compare_cmd->add_option("paths", compare_paths, "two report directories or oracle documents")
      ->required()
      ->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunRequest request;
    request.seed = seed;
    request.threads = threads;
    if (!out_dir.empty()) request.out_dir = fs::path(out_dir);

    if (*compare_cmd) {
      out << cmd_compare(compare_paths[0], compare_paths[1]).dump(2) << '\n';
      return kExitOk;
    }
    const ExperimentConfig cfg = load_config(config_path);

    if (*run_cmd) {
      if (!resume.empty()) request.resume = fs::path(resume);
      const auto report = cmd_run(cfg, request);
      json s = {{"rows", report.series.size()}};
      if (report.summary.trailing_mean) s["trailing_mean_w2"] = *report.summary.trailing_mean;
      if (report.summary.contraction_rate) s["contraction_rate"] = *report.summary.contraction_rate;
      s["output"] = output_dir(cfg, request).string();
      out << s.dump() << '\n';
    } else if (*sweep_cmd) {
      const auto counts = sweep_n.empty() ? cfg.sweep.particle_counts : sweep_n;
      const auto result =
          cmd_sweep(cfg, counts, sweep_r.value_or(cfg.sweep.replications), request);
      const json doc = sweep_document(result);
      write_json(output_dir(cfg, request) / "sweep.json", doc);
      out << doc.dump(2) << '\n';
    } else if (*oracle_cmd) {
      const json doc = cmd_oracle(cfg, request);
      json brief = {{"kind", doc.at("kind")},
                    {"output", (output_dir(cfg, request) / "oracle.json").string()}};
      if (doc.contains("residual")) brief["residual"] = doc.at("residual");
      if (doc.contains("uniqueness")) brief["uniqueness"] = doc.at("uniqueness");
      out << brief.dump(2) << '\n';
    } else if (*check_cmd) {
      const auto ref = build_reference(cfg);
      const auto report =
          cmd_check(cfg, ref ? &*ref : nullptr, seed.value_or(cfg.run.seed));
      for (const auto& item : report.items)
        out << (item.passed ? "PASS " : "FAIL ") << item.name << ": " << item.detail << '\n';
      return report.all_passed() ? kExitOk : kExitFailure;
    }
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "error: diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NonConvergenceError& e) {
    err << "error: oracle did not converge: " << e.what() << '\n';
    return kExitOracle;
  } catch (const GridTooNarrowError& e) {
    err << "error: " << e.what() << '\n';
    return kExitOracle;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ScaleError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnsupportedCapabilityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace pavi
