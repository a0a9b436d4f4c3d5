#pragma once

// Independent computation of the mean-field solution q*.
//
// Quadratic potentials have a closed form: a product of Gaussians with means μ
// and variances 1/A_ii. For other potentials the solution is the fixed point
// of q^i ← T_i(q^{-i}) ∝ exp(-V̄_i(·, q^{-i})), iterated cyclically on
// per-coordinate uniform grids with log-space storage.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "pavi/metrics.hpp"
#include "pavi/particles.hpp"
#include "pavi/potential.hpp"

namespace pavi {

// Density on a uniform grid of G nodes over [lo, hi], stored as log values
// and normalized so that the trapezoid integral of exp(log_density) is 1.
// Between nodes the CDF is the cubic Hermite interpolant of the nodal CDF
// (corrected trapezoid) and the nodal density, which keeps quantiles accurate
// to O(dx⁴) on smooth densities.
class GridDensity : public ReferenceMarginal {
 public:
  GridDensity(double lo, double hi, std::vector<double> log_density);

  std::size_t size() const { return log_density_.size(); }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double spacing() const { return dx_; }
  double node(std::size_t k) const { return lo_ + dx_ * static_cast<double>(k); }
  std::vector<double> nodes() const;

  const std::vector<double>& log_density() const { return log_density_; }
  const std::vector<double>& density() const { return density_; }
  const std::vector<double>& cdf_nodes() const { return cdf_; }

  // Trapezoid integral of the stored density minus 1.
  double normalization_error() const;
  double boundary_density() const;

  double quantile(double u) const override;
  double mean() const override { return mean_; }
  double variance() const override { return variance_; }

 private:
  double lo_;
  double hi_;
  double dx_;
  std::vector<double> log_density_;
  std::vector<double> density_;
  std::vector<double> slope_;  // d density / dx at nodes
  std::vector<double> cdf_;
  double cdf_total_ = 1.0;  // corrected-trapezoid mass before rescaling
  double mean_ = 0.0;
  double variance_ = 0.0;
};

using GridProduct = std::vector<GridDensity>;

enum class QuadratureMode { kAuto, kTensor, kSeparable };

// V̄_i(node, ⊗_{k≠i} q^k) at every node of q[i]'s grid (up to an additive
// constant on the separable path). Tensor quadrature is used for m <= 3;
// the separable path needs the conditional-mean capability.
std::vector<double> vbar_on_grid(const Potential& v, std::size_t i, const GridProduct& q,
                                 QuadratureMode mode = QuadratureMode::kAuto);

// Normalized density ∝ exp(-V̄_i) on q[i]'s grid.
GridDensity apply_transform(const Potential& v, std::size_t i, const GridProduct& q,
                            QuadratureMode mode = QuadratureMode::kAuto);

enum class GridInit { kUniform, kPointMass };

inline constexpr std::size_t kDefaultGridPoints = 1025;

// Per coordinate: [c - 8/√α, c + 8/√α] around the minimizer c of V.
GridProduct default_grid(const Potential& v, std::size_t points = kDefaultGridPoints,
                         GridInit init = GridInit::kUniform);

struct FixedPointOptions {
  double tol = 1e-8;
  std::size_t max_iter = 500;
  double damping = 1.0;  // in (0, 1]; mixes log densities
  QuadratureMode mode = QuadratureMode::kAuto;
  double boundary_limit = 1e-8;
  std::size_t w2_points = 4096;
};

struct FixedPointResult {
  GridProduct solution;
  std::size_t iterations = 0;
  // max_i W2(q^i before, q^i after) for every sweep.
  std::vector<double> residual_trace;
  std::vector<double> final_w2_residuals;
  double log_density_sup_change = 0.0;
  // W2(q^i, T_i(q^{-i})) evaluated at the returned solution.
  std::vector<double> fixed_point_residuals;
};

FixedPointResult fixed_point_solve(const Potential& v, GridProduct init,
                                   const FixedPointOptions& options = {});

ReferenceProduct to_reference(const GridProduct& q);

// Product of N(μ_i, 1/A_ii).
ReferenceProduct gaussian_mfvi_solution(const QuadraticPotential& v);

// m×K inverse-CDF samples; row i uses stream (seed, 0, kReference, i).
ParticleArray sample_reference(const ReferenceProduct& ref, std::size_t count,
                               std::uint64_t seed);

// Oracle documents: {"kind": "analytic-gaussian" | "grid-oracle", "marginals": [...], ...}.
nlohmann::json oracle_document(const ReferenceProduct& ref);
nlohmann::json oracle_document(const FixedPointResult& result);
ReferenceProduct reference_from_document(const nlohmann::json& doc);
ReferenceProduct load_reference(const std::filesystem::path& path);

}  // namespace pavi
