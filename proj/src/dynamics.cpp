#include "pavi/dynamics.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <cmath>
#include <sstream>

#include "pavi/errors.hpp"
#include "pavi/rng.hpp"

namespace pavi {

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// Exact integer fourth root when n is a perfect fourth power.
double fourth_root(std::size_t n) {
  const double q = std::pow(static_cast<double>(n), 0.25);
  const auto r = static_cast<std::size_t>(std::llround(q));
  if (r * r * r * r == n) return static_cast<double>(r);
  return q;
}

void fill_noise_row(std::span<double> out, std::uint64_t seed, std::uint64_t n, std::size_t i,
                    bool zero) {
  if (zero) {
    std::ranges::fill(out, 0.0);
    return;
  }
  RngStream rng(seed, n, StreamRole::kNoise, i);
  for (double& v : out) v = rng.normal();
}

void parallel_rows(ThreadPool* pool, std::size_t rows,
                   const std::function<void(std::size_t)>& body) {
  if (pool) {
    pool->parallel_for(rows, body);
  } else {
    for (std::size_t i = 0; i < rows; ++i) body(i);
  }
}

std::size_t checked_power(std::size_t base, std::size_t exponent, std::size_t cap) {
  std::size_t out = 1;
  for (std::size_t k = 0; k < exponent; ++k) {
    if (out > cap / base) return cap + 1;
    out *= base;
  }
  return out;
}

double exhaustive_mean_field_grad(const Potential& v, const ParticleArray& x, std::size_t i,
                                  double xi) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  const std::size_t terms = checked_power(n, m - 1, kMaxExhaustiveTerms);
  if (terms > kMaxExhaustiveTerms) {
    throw ScaleError("exact mean-field gradient needs N^(m-1) = " + std::to_string(n) + "^" +
                     std::to_string(m - 1) + " > " + std::to_string(kMaxExhaustiveTerms) +
                     " terms and the potential has no conditional-mean capability; use the "
                     "stochastic PAVI algorithm instead");
  }
  std::vector<std::size_t> idx(m, 0);
  std::vector<double> point(m);
  for (std::size_t k = 0; k < m; ++k) point[k] = k == i ? xi : x(k, 0);
  double acc = 0.0;
  for (std::size_t t = 0; t < terms; ++t) {
    acc += v.partial(i, point);
    // Odometer over the rows other than i.
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      if (++idx[k] < n) {
        point[k] = x(k, idx[k]);
        break;
      }
      idx[k] = 0;
      point[k] = x(k, 0);
    }
  }
  return acc / static_cast<double>(terms);
}

void require_finite_row(const ParticleArray& out, std::size_t i, std::uint64_t n) {
  const auto r = out.row(i);
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (!std::isfinite(r[j])) throw DivergenceError(n, i, j);
  }
}

}  // namespace

StepSchedule corollary_schedule(double lip, std::size_t n) {
  if (!(lip > 0.0)) throw ConfigError("corollary schedule needs L > 0");
  if (n < 2) throw ConfigError("N >= 2 required (particle count " + std::to_string(n) + ")");
  const double root = fourth_root(n);
  StepSchedule s;
  s.h = 1.0 / (lip * root);
  s.batch = static_cast<std::size_t>(std::ceil(root));
  return s;
}

RunConfig resolve_config(const Potential& v, RunConfig cfg) {
  if (cfg.schedule == Schedule::kCorollary) {
    const StepSchedule s = corollary_schedule(v.lip(), cfg.particles);
    cfg.h = s.h;
    cfg.batch = s.batch;
  }
  if (cfg.metrics_every == 0) cfg.metrics_every = std::max<std::size_t>(1, cfg.iterations / 200);
  return cfg;
}

void validate_config(const Potential& v, const RunConfig& cfg) {
  const bool explicit_schedule = cfg.schedule == Schedule::kExplicit;
  const bool batched = cfg.algorithm == Algorithm::kPavi;
  const double alpha = v.alpha();
  const double lip = v.lip();
  const double bound_smooth = 2.0 / (alpha + lip);
  const double bound_batch = batched && cfg.batch >= 1
                                 ? static_cast<double>(cfg.batch) * alpha / (4.0 * lip * lip)
                                 : std::numeric_limits<double>::infinity();
  // Every rejection in explicit mode reports both bounds of the guard.
  const std::string bounds =
      explicit_schedule
          ? "; required 0 < h < min{2/(alpha+L) = " + format_double(bound_smooth) +
                ", B*alpha/(4L^2) = " +
                (batched ? format_double(bound_batch) : std::string("inf")) + "}"
          : std::string();

  if (cfg.particles < 2) {
    throw ConfigError("N >= 2 required (particle count " + std::to_string(cfg.particles) +
                      "); the convergence guarantee assumes at least two particles" + bounds);
  }
  if (cfg.batch < 1 && batched) throw ConfigError("batch size B must be >= 1" + bounds);
  if (!(cfg.h > 0.0) || !std::isfinite(cfg.h)) {
    throw ConfigError("step size h must be positive and finite (h = " + format_double(cfg.h) +
                      ")" + bounds);
  }
  if (!explicit_schedule) return;
  // Constants come from an eigendecomposition, so a bound can land a few ulps
  // off its exact value; h within that band counts as equality.
  auto reaches = [&](double bound) { return cfg.h >= bound * (1.0 - kGuardRelTol); };
  if (reaches(bound_smooth)) {
    throw ConfigError("step size h = " + format_double(cfg.h) +
                      " violates h < 2/(alpha+L) = " + format_double(bound_smooth) + bounds);
  }
  if (reaches(bound_batch)) {
    throw ConfigError("step size h = " + format_double(cfg.h) +
                      " violates h < B*alpha/(4L^2) = " + format_double(bound_batch) + bounds);
  }
}

double stochastic_grad(const Potential& v, const ParticleArray& contexts, std::size_t i,
                       double x) {
  if (i >= v.dimension() || contexts.rows() != v.dimension()) {
    throw UsageError("stochastic_grad: index or context shape does not match the potential");
  }
  std::vector<double> point(contexts.rows());
  double acc = 0.0;
  for (std::size_t b = 0; b < contexts.cols(); ++b) {
    for (std::size_t k = 0; k < point.size(); ++k) point[k] = contexts(k, b);
    point[i] = x;
    const double p = v.partial(i, point);
    if (!std::isfinite(p)) {
      throw EvaluationError("partial derivative along coordinate " + std::to_string(i) +
                            " is not finite for context column " + std::to_string(b));
    }
    acc += p;
  }
  return acc / static_cast<double>(contexts.cols());
}

double exact_mean_field_grad(const Potential& v, const ParticleArray& x, std::size_t i,
                             double xi, MeanFieldPath path) {
  if (i >= x.rows() || x.rows() != v.dimension()) {
    throw UsageError("exact_mean_field_grad: index or particle shape does not match");
  }
  if (path == MeanFieldPath::kAuto) {
    path = v.has_conditional_mean() ? MeanFieldPath::kCapability : MeanFieldPath::kExhaustive;
  }
  if (path == MeanFieldPath::kExhaustive) return exhaustive_mean_field_grad(v, x, i, xi);

  const std::vector<double> means = coordinate_means(x);
  std::vector<double> others;
  others.reserve(means.size() - 1);
  for (std::size_t k = 0; k < means.size(); ++k)
    if (k != i) others.push_back(means[k]);
  return conditional_mean_gradient(v, i, xi, others);
}

ParticleArray pavi_step(const Potential& v, const ParticleArray& x, double h, std::size_t batch,
                        std::uint64_t seed, std::uint64_t n, ThreadPool* pool,
                        const StepHooks& hooks) {
  const std::size_t m = x.rows();
  const std::size_t cols = x.cols();
  if (m != v.dimension()) throw UsageError("pavi_step: particle rows do not match dimension");

  // Contexts are drawn once and shared by every row and particle.
  const ParticleArray z = sample_product(x, batch, seed, n);
  // Column-major copy so each context is a contiguous point.
  std::vector<double> columns(batch * m);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < m; ++k) columns[b * m + k] = z(k, b);

  ParticleArray out(m, cols);
  if (hooks.noise_out) *hooks.noise_out = ParticleArray(m, cols);
  const double noise_scale = std::sqrt(2.0 * h);
  const double inv_batch = 1.0 / static_cast<double>(batch);

  parallel_rows(pool, m, [&](std::size_t i) {
    std::vector<double> local(columns);
    std::vector<double> xi(cols);
    fill_noise_row(xi, seed, n, i, hooks.zero_noise);
    const auto src = x.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < cols; ++j) {
      const double xij = src[j];
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        double* point = local.data() + b * m;
        point[i] = xij;
        acc += v.partial(i, std::span<const double>(point, m));
      }
      dst[j] = xij - h * (acc * inv_batch) + noise_scale * xi[j];
    }
    if (hooks.noise_out) std::ranges::copy(xi, hooks.noise_out->row(i).begin());
    require_finite_row(out, i, n);
  });
  return out;
}

ParticleArray exact_step(const Potential& v, const ParticleArray& x, double h,
                         std::uint64_t seed, std::uint64_t n, ThreadPool* pool,
                         const StepHooks& hooks, MeanFieldPath path) {
  const std::size_t m = x.rows();
  const std::size_t cols = x.cols();
  if (m != v.dimension()) throw UsageError("exact_step: particle rows do not match dimension");
  if (path == MeanFieldPath::kAuto) {
    path = v.has_conditional_mean() ? MeanFieldPath::kCapability : MeanFieldPath::kExhaustive;
  }
  if (path == MeanFieldPath::kExhaustive &&
      checked_power(cols, m - 1, kMaxExhaustiveTerms) > kMaxExhaustiveTerms) {
    // Fail before doing any work.
    exhaustive_mean_field_grad(v, x, 0, 0.0);
  }

  const std::vector<double> means = coordinate_means(x);
  ParticleArray out(m, cols);
  if (hooks.noise_out) *hooks.noise_out = ParticleArray(m, cols);
  const double noise_scale = std::sqrt(2.0 * h);
  parallel_rows(pool, m, [&](std::size_t i) {
    std::vector<double> xi(cols);
    fill_noise_row(xi, seed, n, i, hooks.zero_noise);
    const auto src = x.row(i);
    auto dst = out.row(i);
    if (path == MeanFieldPath::kCapability) {
      std::vector<double> others;
      for (std::size_t k = 0; k < m; ++k)
        if (k != i) others.push_back(means[k]);
      for (std::size_t j = 0; j < cols; ++j) {
        dst[j] = src[j] - h * conditional_mean_gradient(v, i, src[j], others) +
                 noise_scale * xi[j];
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) {
        dst[j] = src[j] - h * exhaustive_mean_field_grad(v, x, i, src[j]) + noise_scale * xi[j];
      }
    }
    if (hooks.noise_out) std::ranges::copy(xi, hooks.noise_out->row(i).begin());
    require_finite_row(out, i, n);
  });
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir) {
  return dir / "checkpoint.bin";
}

RunResult run(const Potential& v, const RunConfig& cfg, ParticleArray initial,
              const RunOptions& options) {
  validate_config(v, cfg);
  if (initial.rows() != v.dimension() || initial.cols() != cfg.particles) {
    throw ConfigError("initial particles have shape " + std::to_string(initial.rows()) + "x" +
                      std::to_string(initial.cols()) + ", expected " +
                      std::to_string(v.dimension()) + "x" + std::to_string(cfg.particles));
  }
  const std::size_t every = cfg.metrics_every != 0
                                ? cfg.metrics_every
                                : std::max<std::size_t>(1, cfg.iterations / 200);
  const auto started = std::chrono::steady_clock::now();

  RunResult result;
  ParticleArray x = std::move(initial);

  QuantileTable table;
  if (options.reference) table = tabulate_midpoint_quantiles(*options.reference, cfg.particles);

  auto record = [&](std::size_t n) {
    MetricRow row;
    row.iteration = n;
    if (options.reference) {
      row.w2_coordinates = w2_per_coordinate(x, table);
      row.w2_total = combine_coordinates(row.w2_coordinates);
    }
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (options.sink) options.sink->record(row);
    result.report.series.push_back(std::move(row));
  };

  auto checkpoint = [&](std::size_t n) {
    if (cfg.checkpoint_every == 0 || cfg.checkpoint_dir.empty()) return;
    if (n % cfg.checkpoint_every != 0) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    const auto final_path = checkpoint_path(cfg.checkpoint_dir);
    auto tmp = final_path;
    tmp += ".tmp";
    write_particles_binary(tmp, x, cfg.seed, n);
    std::filesystem::rename(tmp, final_path);
  };

  if (cfg.iterations == 0 && options.start_iteration == 0) record(0);
  for (std::size_t n = options.start_iteration; n < cfg.iterations; ++n) {
    if (n % every == 0) record(n);
    checkpoint(n);
    x = cfg.algorithm == Algorithm::kPavi
            ? pavi_step(v, x, cfg.h, cfg.batch, cfg.seed, n, options.pool)
            : exact_step(v, x, cfg.h, cfg.seed, n, options.pool);
  }
  result.final_particles = std::move(x);
  return result;
}

}  // namespace pavi
