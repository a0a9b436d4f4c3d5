#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "pavi/dynamics.hpp"
#include "pavi/errors.hpp"
#include "pavi/oracle.hpp"
#include "pavi/rng.hpp"
#include "support.hpp"

using namespace pavi;
using pavi::test::PairwiseLogcosh;
using pavi::test::perturbed;
using pavi::test::quadratic;

namespace {

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

std::string config_error(const Potential& v, const RunConfig& cfg) {
  try {
    validate_config(v, cfg);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

RunConfig explicit_config(double h, std::size_t batch, std::size_t n = 16) {
  RunConfig cfg;
  cfg.schedule = Schedule::kExplicit;
  cfg.h = h;
  cfg.batch = batch;
  cfg.particles = n;
  return cfg;
}

// Quadratic with constants pinned exactly at α = 1, L = 3.
std::shared_ptr<QuadraticPotential> pinned_quadratic() {
  Eigen::Matrix2d a;
  a << 2, 1, 1, 2;
  ConstantOverrides ov;
  ov.alpha = 1.0;
  ov.lip = 3.0;
  return std::make_shared<QuadraticPotential>(a, Eigen::Vector2d(1, -1), ov);
}

ParticleArray column_context(const ParticleArray& x, std::vector<std::size_t> idx) {
  ParticleArray z(x.rows(), 1);
  for (std::size_t k = 0; k < x.rows(); ++k) z(k, 0) = x(k, idx[k]);
  return z;
}

std::vector<double> metric_values(const ConvergenceReport& r) {
  std::vector<double> out;
  for (const auto& row : r.series) out.push_back(*row.w2_total);
  return out;
}

}  // namespace

TEST_CASE("step-size guard") {
  const auto v = pinned_quadratic();
  CHECK(config_error(*v, explicit_config(0.02, 1)).empty());

  const auto msg = config_error(*v, explicit_config(0.05, 1));
  CHECK(contains(msg, "B*alpha/(4L^2) = 0.02777777778"));
  CHECK(contains(msg, "2/(alpha+L) = 0.5"));

  // Closed check: equality with either bound is rejected.
  CHECK_FALSE(config_error(*v, explicit_config(1.0 / 36.0, 1)).empty());
  CHECK_FALSE(config_error(*v, explicit_config(0.5, 1000)).empty());
  CHECK(contains(config_error(*v, explicit_config(0.5, 1000)), "violates h < 2/(alpha+L)"));
  CHECK(config_error(*v, explicit_config(0.5 * (1 - 1e-11), 1000)).empty());
  // Unpinned constants carry eigensolver rounding; equality is still caught.
  const auto raw = quadratic({{2, 1}, {1, 2}}, {1, -1});
  CHECK_FALSE(config_error(*raw, explicit_config(0.5, 1000)).empty());
  CHECK_FALSE(config_error(*raw, explicit_config(1.0 / 36.0, 1)).empty());

  const auto id = quadratic({{1, 0}, {0, 1}}, {0, 0});
  const auto zero = config_error(*id, explicit_config(0.0, 1000000));
  CHECK(contains(zero, "positive"));
  CHECK(contains(zero, "2/(alpha+L) = 1"));
  CHECK(contains(zero, "B*alpha/(4L^2) = 250000"));
  CHECK_FALSE(config_error(*id, explicit_config(-0.1, 1)).empty());
  CHECK_FALSE(config_error(*id, explicit_config(std::nan(""), 1)).empty());

  const auto single = config_error(*v, explicit_config(0.01, 1, 1));
  CHECK(contains(single, "N >= 2 required"));
  CHECK(contains(single, "0.02777777778"));
  CHECK(contains(config_error(*v, explicit_config(0.01, 0)), "B must be >= 1"));
}

TEST_CASE("guard for the exact algorithm and the corollary schedule") {
  const auto v = pinned_quadratic();
  auto exact = explicit_config(0.05, 1);
  exact.algorithm = Algorithm::kExact;
  CHECK(config_error(*v, exact).empty());
  exact.h = 0.5;
  CHECK_FALSE(config_error(*v, exact).empty());

  RunConfig cor;
  cor.schedule = Schedule::kCorollary;
  cor.particles = 64;
  cor = resolve_config(*v, cor);
  // The corollary values sit above Bα/(4L²) here; they are accepted as prescribed.
  CHECK(cor.h > static_cast<double>(cor.batch) * 1.0 / 36.0);
  CHECK(config_error(*v, cor).empty());
  cor.particles = 1;
  CHECK_FALSE(config_error(*v, cor).empty());
}

TEST_CASE("corollary schedule") {
  auto s = corollary_schedule(1.0, 16);
  CHECK(s.h == 0.5);
  CHECK(s.batch == 2);
  s = corollary_schedule(2.0, 16);
  CHECK(s.h == 0.25);
  CHECK(s.batch == 2);
  s = corollary_schedule(1.0, 81);
  CHECK(s.h == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.batch == 3);
  s = corollary_schedule(3.0, 2048);
  CHECK(s.h == doctest::Approx(1.0 / (3.0 * std::pow(2048.0, 0.25))));
  CHECK(s.batch == 7);
  // B = ⌈1/(L h)⌉.
  for (std::size_t n : {2, 5, 16, 17, 256, 1000, 4096}) {
    const auto t = corollary_schedule(1.7, n);
    CHECK(t.batch == static_cast<std::size_t>(std::ceil(1.0 / (1.7 * t.h) - 1e-12)));
  }
  CHECK_THROWS_AS(corollary_schedule(1.0, 1), ConfigError);

  RunConfig cfg;
  cfg.iterations = 1000;
  cfg.particles = 16;
  CHECK(resolve_config(*pinned_quadratic(), cfg).metrics_every == 5);
  cfg.iterations = 100;
  CHECK(resolve_config(*pinned_quadratic(), cfg).metrics_every == 1);
}

TEST_CASE("stochastic gradient") {
  const auto one = quadratic({{2.5}}, {0.4});
  const ParticleArray ctx1(1, 3, {9, -9, 4});
  CHECK(stochastic_grad(*one, ctx1, 0, 1.3) == partial_derivative(*one, 0, std::vector<double>{1.3}));

  const auto v = quadratic({{2, 1}, {1, 2}}, {0, 0});
  const ParticleArray ctx(2, 2, {7, -7, 0, 1});
  CHECK(stochastic_grad(*v, ctx, 0, 1.0) == doctest::Approx(2.5));
  CHECK_THROWS_AS(stochastic_grad(*v, ctx, 2, 1.0), UsageError);
}

TEST_CASE("stochastic gradient is unbiased by enumeration") {
  // m = 2, N = 3, B = 1: the context law is uniform over three atoms of q^{-i}.
  const PairwiseLogcosh v(2, 1.0, 0.8);
  const ParticleArray x(2, 3, {0.3, -1.1, 2.0, 0.7, -0.4, 1.9});
  for (std::size_t i = 0; i < 2; ++i) {
    for (double probe : {-1.0, 0.2, 1.5}) {
      double avg = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<std::size_t> idx(2, 0);
        idx[1 - i] = j;
        avg += stochastic_grad(v, column_context(x, idx), i, probe) / 3.0;
      }
      CHECK(avg == doctest::Approx(exact_mean_field_grad(v, x, i, probe, MeanFieldPath::kExhaustive))
                       .epsilon(1e-14));
    }
  }
}

TEST_CASE("stochastic gradient: Monte Carlo mean and 1/B variance") {
  const PairwiseLogcosh v(3, 1.0, 0.6);
  const ParticleArray x(3, 4, {0.3, -1.1, 2.0, 0.5, 0.7, -0.4, 1.9, -2.2, 1.0, 0.0, -0.8, 0.6});
  constexpr std::size_t kDraws = 20000;
  for (std::size_t i = 0; i < 3; ++i) {
    const double probe = 0.25 * static_cast<double>(i) - 0.3;
    const double exact = exact_mean_field_grad(v, x, i, probe, MeanFieldPath::kExhaustive);
    double s = 0, s2 = 0, t = 0, t2 = 0;
    for (std::size_t r = 0; r < kDraws; ++r) {
      const double g1 = stochastic_grad(v, sample_product(x, 1, 100 + i, r), i, probe);
      const double g16 = stochastic_grad(v, sample_product(x, 16, 200 + i, r), i, probe);
      s += g1;
      s2 += g1 * g1;
      t += g16;
      t2 += g16 * g16;
    }
    const double n = kDraws;
    const double mean = s / n, var1 = (s2 - n * mean * mean) / (n - 1);
    const double mean16 = t / n, var16 = (t2 - n * mean16 * mean16) / (n - 1);
    CHECK(std::abs(mean - exact) <= 4 * std::sqrt(var1 / n));
    CHECK(std::abs(mean16 - exact) <= 4 * std::sqrt(var16 / n));
    CHECK(var1 / var16 >= 16 / 1.5);
    CHECK(var1 / var16 <= 16 * 1.5);
  }
}

TEST_CASE("exact mean-field gradient") {
  const auto v = quadratic({{2, 1}, {1, 2}}, {0, 0});
  const ParticleArray x(2, 2, {5, -3, 0, 1});
  CHECK(exact_mean_field_grad(*v, x, 0, 1.0, MeanFieldPath::kCapability) == doctest::Approx(2.5));
  CHECK(exact_mean_field_grad(*v, x, 0, 1.0, MeanFieldPath::kExhaustive) == doctest::Approx(2.5));

  const auto one = perturbed({{1.5}}, {0.2}, {0.7});
  const ParticleArray x1(1, 3, {1, 2, 3});
  CHECK(exact_mean_field_grad(*one, x1, 0, 0.4) ==
        partial_derivative(*one, 0, std::vector<double>{0.4}));

  const auto p = perturbed({{2, 0.5, 0.1}, {0.5, 2, -0.3}, {0.1, -0.3, 1.5}}, {0.2, 0, -0.5},
                           {1, 0.5, 2});
  const auto x3 = init_particles(3, 5, InitSpec{}, 21);
  for (double probe : {-1.3, 0.0, 0.9}) {
    CHECK(std::abs(exact_mean_field_grad(*p, x3, 1, probe, MeanFieldPath::kCapability) -
                   exact_mean_field_grad(*p, x3, 1, probe, MeanFieldPath::kExhaustive)) <= 1e-10);
  }

  const PairwiseLogcosh pw(3, 1.0, 0.5);
  const auto big = init_particles(3, 1001, InitSpec{}, 1);
  CHECK_THROWS_AS(exact_mean_field_grad(pw, big, 0, 0.0), ScaleError);
  CHECK_THROWS_AS(exact_mean_field_grad(pw, big, 0, 0.0, MeanFieldPath::kCapability),
                  UnsupportedCapabilityError);
  // Capability path has no scale limit.
  const auto wide = init_particles(3, 1001, InitSpec{}, 1);
  CHECK(std::isfinite(exact_mean_field_grad(*p, wide, 0, 0.0)));
}

TEST_CASE("deterministic drift with zero noise") {
  const auto v = quadratic({{1}}, {0});
  const ParticleArray x(1, 2, {1, 1});
  StepHooks quiet;
  quiet.zero_noise = true;
  for (double h : {0.01, 0.3, 0.9}) {
    const auto y = pavi_step(*v, x, h, 3, 7, 0, nullptr, quiet);
    CHECK(y(0, 0) == doctest::Approx(1 - h).epsilon(1e-15));
    CHECK(y(0, 1) == doctest::Approx(1 - h).epsilon(1e-15));
  }

  const auto diag = quadratic({{2, 0}, {0, 0.5}}, {1, -2});
  const ParticleArray at_min(2, 3, {1, 1, 1, -2, -2, -2});
  CHECK(pavi_step(*diag, at_min, 0.1, 2, 3, 4, nullptr, quiet) == at_min);
  CHECK(exact_step(*diag, at_min, 0.1, 3, 4, nullptr, quiet) == at_min);

  // Decoupled coordinates: contexts are irrelevant, so both algorithms agree.
  const auto y0 = init_particles(2, 6, InitSpec{}, 5);
  const auto a = pavi_step(*diag, y0, 0.1, 2, 3, 4, nullptr, quiet);
  const auto b = exact_step(*diag, y0, 0.1, 3, 4, nullptr, quiet);
  for (std::size_t k = 0; k < a.values().size(); ++k)
    CHECK(a.values()[k] == doctest::Approx(b.values()[k]).epsilon(1e-15));
}

TEST_CASE("pavi_step determinism across thread counts") {
  const auto v = perturbed({{2, 0.5}, {0.5, 2}}, {0, 0}, {1, 1});
  const auto x = init_particles(2, 4, InitSpec{}, 3);
  const auto a = pavi_step(*v, x, 0.05, 2, 11, 0);
  CHECK(pavi_step(*v, x, 0.05, 2, 11, 0) == a);

  const auto big = init_particles(5, 301, InitSpec{}, 3);
  const auto v5 = std::make_shared<PairwiseLogcosh>(5, 1.0, 0.3);
  const auto ref = pavi_step(*v5, big, 0.02, 4, 9, 17);
  for (std::size_t t : {2, 4, 8}) {
    ThreadPool pool(t);
    CHECK(pavi_step(*v5, big, 0.02, 4, 9, 17, &pool) == ref);
    CHECK(exact_step(*v, x, 0.05, 11, 0, &pool) == exact_step(*v, x, 0.05, 11, 0));
  }
}

TEST_CASE("recorded noise is the update's Gaussian term") {
  const auto v = quadratic({{2, 1}, {1, 2}}, {0, 0});
  const auto x = init_particles(2, 5, InitSpec{}, 2);
  ParticleArray noise;
  StepHooks hooks;
  hooks.noise_out = &noise;
  const double h = 0.02;
  const auto y = pavi_step(*v, x, h, 3, 4, 6, nullptr, hooks);
  StepHooks quiet;
  quiet.zero_noise = true;
  const auto drift = pavi_step(*v, x, h, 3, 4, 6, nullptr, quiet);
  REQUIRE(noise.rows() == 2);
  REQUIRE(noise.cols() == 5);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(y(i, j) - drift(i, j) == doctest::Approx(std::sqrt(2 * h) * noise(i, j)));
}

TEST_CASE("noise passes an Anderson-Darling normality test") {
  const auto v = perturbed({{2, 0.5}, {0.5, 2}}, {0, 0}, {1, 1});
  auto x = init_particles(2, 500, InitSpec{}, 8);
  std::vector<double> z;
  for (std::uint64_t n = 0; n < 20; ++n) {
    ParticleArray noise;
    StepHooks hooks;
    hooks.noise_out = &noise;
    x = pavi_step(*v, x, 0.05, 3, 8, n, nullptr, hooks);
    z.insert(z.end(), noise.values().begin(), noise.values().end());
  }
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  auto phi = [](double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); };
  double s = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    s += (2.0 * static_cast<double>(k) + 1.0) *
         (std::log(phi(z[k])) + std::log(1.0 - phi(z[z.size() - 1 - k])));
  }
  const double a2 = -n - s / n;
  // Upper 0.1% point of the A² law for a fully specified null.
  CHECK(a2 < 5.97);
}

TEST_CASE("pavi approaches the exact step as B grows") {
  // Shared noise: the two steps differ only by h (g - V̄'), whose RMS is ∝ 1/√B.
  const auto v = std::make_shared<PairwiseLogcosh>(3, 1.0, 0.8);
  const auto x = init_particles(3, 40, InitSpec{}, 4);
  auto rms = [&](std::size_t batch) {
    double acc = 0;
    std::size_t count = 0;
    for (std::uint64_t n = 0; n < 200; ++n) {
      const auto a = pavi_step(*v, x, 0.05, batch, 31, n);
      const auto b = exact_step(*v, x, 0.05, 31, n, nullptr, {}, MeanFieldPath::kExhaustive);
      for (std::size_t k = 0; k < a.values().size(); ++k) {
        const double d = a.values()[k] - b.values()[k];
        acc += d * d;
        ++count;
      }
    }
    return std::sqrt(acc / static_cast<double>(count));
  };
  const double r16 = rms(16), r32 = rms(32), r64 = rms(64), r256 = rms(256);
  CHECK(r16 / r32 >= std::sqrt(2.0) / 1.3);
  CHECK(r16 / r32 <= std::sqrt(2.0) * 1.3);
  CHECK(r32 / r64 >= std::sqrt(2.0) / 1.3);
  CHECK(r32 / r64 <= std::sqrt(2.0) * 1.3);
  // Quadrupling B halves the difference.
  CHECK(r16 / r64 >= 2.0 / 1.3);
  CHECK(r16 / r64 <= 2.0 * 1.3);
  CHECK(r64 / r256 >= 2.0 / 1.3);
  CHECK(r64 / r256 <= 2.0 * 1.3);
}

TEST_CASE("divergence is reported with its location") {
  const auto v = quadratic({{1}}, {0});
  const ParticleArray x(1, 3, {1, 1e10, 1});
  try {
    pavi_step(*v, x, 1e300, 1, 0, 12);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() == 12);
    CHECK(e.row() == 0);
    CHECK(e.column() == 1);
  }
}

TEST_CASE("run records the expected rows") {
  const auto v = quadratic({{1.5}}, {0.5});
  RunConfig cfg;
  cfg.particles = 64;
  cfg.iterations = 100;
  cfg.seed = 3;
  cfg = resolve_config(*v, cfg);
  const auto ref = gaussian_mfvi_solution(*v);
  RunOptions options;
  options.reference = &ref;
  const auto x0 = init_particles(1, 64, InitSpec{}, 3);
  auto res = run(*v, cfg, x0, options);
  CHECK(res.report.series.size() == 100 / cfg.metrics_every);
  for (std::size_t k = 0; k < res.report.series.size(); ++k)
    CHECK(res.report.series[k].iteration == k * cfg.metrics_every);

  cfg.metrics_every = 10;
  res = run(*v, cfg, x0, options);
  CHECK(res.report.series.size() == 10);
  CHECK(res.report.series.back().iteration == 90);

  cfg.iterations = 0;
  res = run(*v, cfg, x0, options);
  REQUIRE(res.report.series.size() == 1);
  CHECK(res.report.series[0].iteration == 0);
  CHECK(*res.report.series[0].w2_total == doctest::Approx(w2_to_reference(x0, ref)));
  CHECK(res.final_particles == x0);

  cfg.iterations = 5;
  options.reference = nullptr;
  res = run(*v, cfg, x0, options);
  CHECK_FALSE(res.report.series[0].w2_total.has_value());
  CHECK_THROWS_AS(run(*v, cfg, init_particles(1, 63, InitSpec{}, 3), options), ConfigError);
}

TEST_CASE("Gaussian target: trailing W2 below early W2") {
  const auto v = quadratic({{2, 1}, {1, 2}}, {1, -1});
  RunConfig cfg;
  cfg.particles = 2048;
  cfg.iterations = 600;
  cfg.metrics_every = 5;
  cfg.seed = 1;
  cfg = resolve_config(*v, cfg);
  const auto ref = gaussian_mfvi_solution(*v);
  RunOptions options;
  options.reference = &ref;
  const auto res = run(*v, cfg, init_particles(2, 2048, InitSpec{}, 1), options);
  const auto w = metric_values(res.report);
  const std::size_t tail = w.size() - w.size() / 4;
  const double trailing = std::accumulate(w.begin() + tail, w.end(), 0.0) / (w.size() - tail);
  CHECK(trailing < 0.5 * w.front());
  CHECK(trailing < 0.15);
}

TEST_CASE("runs are identical for any thread count") {
  const auto v = perturbed({{2, 0.5}, {0.5, 2}}, {0, 0}, {1, 1});
  RunConfig cfg;
  cfg.particles = 256;
  cfg.iterations = 40;
  cfg.metrics_every = 4;
  cfg.seed = 12;
  cfg = resolve_config(*v, cfg);
  const auto ref = gaussian_mfvi_solution(*quadratic({{2, 0.5}, {0.5, 2}}, {0, 0}));
  const auto x0 = init_particles(2, 256, InitSpec{}, 12);
  RunOptions options;
  options.reference = &ref;
  const auto base = run(*v, cfg, x0, options);
  for (std::size_t t : {1, 4, 8}) {
    ThreadPool pool(t);
    options.pool = &pool;
    const auto other = run(*v, cfg, x0, options);
    CHECK(other.final_particles == base.final_particles);
    CHECK(metric_values(other.report) == metric_values(base.report));
  }
}

TEST_CASE("permuting particles leaves the metrics unchanged") {
  const auto v = quadratic({{2, 1}, {1, 2}}, {1, -1});
  const auto ref = gaussian_mfvi_solution(*v);
  const auto x = init_particles(2, 30, InitSpec{}, 6);
  ParticleArray p(2, 30);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 7, perm.end());
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 30; ++j) p(i, j) = x(i, perm[j]);
  CHECK(w2_per_coordinate(p, ref) == w2_per_coordinate(x, ref));
  CHECK(coordinate_means(p)[0] == doctest::Approx(coordinate_means(x)[0]).epsilon(1e-15));
}

TEST_CASE("checkpoint resume is bit-identical") {
  test::TempDir dir("ckpt");
  const auto v = perturbed({{2, 0.5}, {0.5, 2}}, {0, 0}, {1, 1});
  RunConfig cfg;
  cfg.particles = 50;
  cfg.iterations = 60;
  cfg.seed = 5;
  cfg.metrics_every = 3;
  cfg = resolve_config(*v, cfg);
  const auto x0 = init_particles(2, 50, InitSpec{}, 5);
  const auto full = run(*v, cfg, x0);

  // Interrupted run: stop after 35 steps with checkpoints every 10.
  auto partial = cfg;
  partial.iterations = 35;
  partial.checkpoint_every = 10;
  partial.checkpoint_dir = dir.path();
  run(*v, partial, x0);
  const auto ck = read_particles_binary(checkpoint_path(dir.path()));
  CHECK(ck.header.iteration == 30);
  CHECK(ck.header.seed == 5);

  RunOptions options;
  options.start_iteration = ck.header.iteration;
  const auto resumed = run(*v, cfg, ck.particles, options);
  CHECK(resumed.final_particles == full.final_particles);
  REQUIRE(!resumed.report.series.empty());
  CHECK(resumed.report.series.front().iteration == 30);
}

TEST_CASE("divergence keeps the last good checkpoint") {
  test::TempDir dir("diverge");
  // Declared constants far below the real curvature, so the guard passes.
  ConstantOverrides ov;
  ov.alpha = 1.0;
  ov.lip = 1.0;
  const auto v = std::make_shared<QuadraticPotential>(Eigen::MatrixXd::Constant(1, 1, 1e6),
                                                      Eigen::VectorXd::Zero(1), ov);
  RunConfig cfg;
  cfg.schedule = Schedule::kExplicit;
  cfg.h = 0.2;
  cfg.batch = 1;
  cfg.particles = 4;
  cfg.iterations = 1000;
  cfg.checkpoint_every = 5;
  cfg.checkpoint_dir = dir.path();
  std::size_t failed_at = 0;
  try {
    run(*v, cfg, init_particles(1, 4, InitSpec{}, 1));
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    failed_at = e.iteration();
  }
  const auto ck = read_particles_binary(checkpoint_path(dir.path()));
  CHECK(ck.particles.all_finite());
  CHECK(ck.header.iteration <= failed_at);
  CHECK(failed_at - ck.header.iteration < 5);
}
