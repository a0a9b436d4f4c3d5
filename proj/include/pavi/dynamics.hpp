#pragma once

// Particle mean-field Langevin dynamics.
//
// One PAVI iteration draws B context columns from the product empirical
// measure of X_n, then for every row i updates all particles with
//
//   X_{n+1}^{i,j} = X_n^{i,j} - h g_n^i(X_n^{i,j}) + sqrt(2h) ξ_n^{i,j},
//   g_n^i(x) = (1/B) Σ_b ∂_i V(z^{1,b}, .., x, .., z^{m,b}).
//
// The exact variant replaces g_n^i by the mean-field gradient
// E_{x_{-i} ~ q_X^{-i}} ∂_i V(.., x, ..), which is the B → ∞ limit.
//
// Randomness is addressed by (seed, n, role, row): contexts come from
// (seed, n, kContext, i) and noise from (seed, n, kNoise, i), so rows may be
// updated in parallel without affecting the result.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "pavi/metrics.hpp"
#include "pavi/particles.hpp"
#include "pavi/potential.hpp"
#include "pavi/report.hpp"
#include "pavi/thread_pool.hpp"

namespace pavi {

enum class Schedule { kExplicit, kCorollary };
enum class Algorithm { kPavi, kExact };

struct RunConfig {
  double h = 0.0;
  std::size_t batch = 1;
  std::size_t iterations = 0;  // T
  std::size_t particles = 2;   // N
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::kCorollary;
  Algorithm algorithm = Algorithm::kPavi;
  std::size_t metrics_every = 0;  // 0 selects max(1, T/200)
  std::size_t checkpoint_every = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_dir;
};

struct StepSchedule {
  double h = 0.0;
  std::size_t batch = 0;
};

// h = 1/(L N^{1/4}), B = ⌈1/(L h)⌉ = ⌈N^{1/4}⌉.
StepSchedule corollary_schedule(double lip, std::size_t n);

// Fills h and B for the corollary schedule and the metrics cadence default.
RunConfig resolve_config(const Potential& v, RunConfig cfg);

// Relative band below each guard bound that is treated as equality.
inline constexpr double kGuardRelTol = 1e-12;

// Explicit schedule: 0 < h < min{2/(α+L), Bα/(4L²)}, closed at the bounds.
// The exact algorithm has no batch, so only h < 2/(α+L) applies. Requires
// N >= 2 in every mode.
void validate_config(const Potential& v, const RunConfig& cfg);

// Test-only instrumentation; the command-line tool never sets it.
struct StepHooks {
  bool zero_noise = false;
  // When set, receives the m×N noise array used by the step.
  ParticleArray* noise_out = nullptr;
};

// (1/B) Σ_b ∂_i V(z^{:,b} with coordinate i replaced by x).
double stochastic_grad(const Potential& v, const ParticleArray& contexts, std::size_t i,
                       double x);

enum class MeanFieldPath { kAuto, kCapability, kExhaustive };

// Largest number of context combinations the exhaustive path will average.
inline constexpr std::size_t kMaxExhaustiveTerms = 1'000'000;

double exact_mean_field_grad(const Potential& v, const ParticleArray& x, std::size_t i,
                             double xi, MeanFieldPath path = MeanFieldPath::kAuto);

ParticleArray pavi_step(const Potential& v, const ParticleArray& x, double h, std::size_t batch,
                        std::uint64_t seed, std::uint64_t n, ThreadPool* pool = nullptr,
                        const StepHooks& hooks = {});

ParticleArray exact_step(const Potential& v, const ParticleArray& x, double h,
                         std::uint64_t seed, std::uint64_t n, ThreadPool* pool = nullptr,
                         const StepHooks& hooks = {},
                         MeanFieldPath path = MeanFieldPath::kAuto);

struct RunResult {
  ConvergenceReport report;
  ParticleArray final_particles;
};

struct RunOptions {
  const ReferenceProduct* reference = nullptr;
  ReportSink* sink = nullptr;
  ThreadPool* pool = nullptr;
  // Resume point: `initial` holds X_{start_iteration}.
  std::size_t start_iteration = 0;
};

// Runs iterations start..T-1 from `initial`. Metrics are recorded for X_n at
// every n with n % metrics_every == 0 (and for X_0 when T = 0). Checkpoints
// hold X_n for n % checkpoint_every == 0 and are written before step n.
RunResult run(const Potential& v, const RunConfig& cfg, ParticleArray initial,
              const RunOptions& options = {});

// Checkpoint = particles (binary) plus the iteration counter; the config echo
// lives alongside in the run directory.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir);

}  // namespace pavi
