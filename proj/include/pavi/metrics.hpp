#pragma once

// Wasserstein-2 distances between product empirical measures and from an
// empirical measure to a product reference. All one-dimensional distances use
// the sorted (order-statistics) coupling; product distances combine the
// per-coordinate values by summing squares in ascending coordinate order.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pavi/particles.hpp"
#include "pavi/potential.hpp"

namespace pavi {

class ReferenceMarginal {
 public:
  virtual ~ReferenceMarginal() = default;
  // Inverse CDF on (0, 1), nondecreasing.
  virtual double quantile(double u) const = 0;
  virtual double mean() const = 0;
  virtual double variance() const = 0;
};

class GaussianMarginal : public ReferenceMarginal {
 public:
  GaussianMarginal(double mean, double variance);
  double quantile(double u) const override;
  double mean() const override { return mean_; }
  double variance() const override { return variance_; }

 private:
  double mean_;
  double variance_;
};

class PointMassMarginal : public ReferenceMarginal {
 public:
  explicit PointMassMarginal(double at) : at_(at) {}
  double quantile(double) const override { return at_; }
  double mean() const override { return at_; }
  double variance() const override { return 0.0; }

 private:
  double at_;
};

using MarginalPtr = std::shared_ptr<const ReferenceMarginal>;

struct ReferenceProduct {
  enum class Provenance { kAnalyticGaussian, kGridOracle, kOther };
  std::vector<MarginalPtr> marginals;
  Provenance provenance = Provenance::kOther;

  std::size_t dimension() const { return marginals.size(); }
};

std::string to_string(ReferenceProduct::Provenance p);

double w2_1d_empirical(std::span<const double> a, std::span<const double> b);
// Same as above for inputs already in ascending order.
double w2_1d_sorted(std::span<const double> a_sorted, std::span<const double> b_sorted);

// Minimum over all N! matchings; N <= 8.
double w2_1d_bruteforce(std::span<const double> a, std::span<const double> b);

double w2_product_empirical(const ParticleArray& x, const ParticleArray& y);

// Midpoint-quantile coupling: atom_(j) against ref.quantile((j - 1/2)/N).
// Carries an O(1/N) discretization bias relative to the exact distance.
double w2_empirical_vs_reference(std::span<const double> atoms, const ReferenceMarginal& ref);

std::vector<double> w2_per_coordinate(const ParticleArray& x, const ReferenceProduct& ref);
double w2_to_reference(const ParticleArray& x, const ReferenceProduct& ref);
double combine_coordinates(std::span<const double> per_coordinate);

// Reference quantiles at the midpoint levels (j - 1/2)/N, per coordinate.
// Lets repeated distance evaluations against one reference skip the
// quantile inversions.
struct QuantileTable {
  std::size_t atoms = 0;
  std::vector<std::vector<double>> levels;
};

QuantileTable tabulate_midpoint_quantiles(const ReferenceProduct& ref, std::size_t n);
std::vector<double> w2_per_coordinate(const ParticleArray& x, const QuantileTable& table);

// W2 = (∫_0^1 (Q_a(u) - Q_b(u))² du)^{1/2}, midpoint rule on `points` cells.
double w2_between_marginals(const ReferenceMarginal& a, const ReferenceMarginal& b,
                            std::size_t points = 4096);

struct GradMoments {
  double mean_grad_norm = 0.0;          // ‖(1/K) Σ ∇V(x_k)‖₂
  double mean_sq_grad = 0.0;            // (1/K) Σ ‖∇V(x_k)‖₂²
  std::vector<double> coordinate_variances;
};

// `samples` is m×K, one sample per column.
GradMoments grad_moment_check(const Potential& v, const ParticleArray& samples);

}  // namespace pavi
