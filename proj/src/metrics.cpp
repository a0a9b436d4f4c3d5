#include "pavi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "pavi/errors.hpp"

namespace pavi {

GaussianMarginal::GaussianMarginal(double mean, double variance)
    : mean_(mean), variance_(variance) {
  if (!std::isfinite(mean) || !(variance > 0.0) || !std::isfinite(variance)) {
    throw ConfigError("Gaussian marginal needs finite mean and positive variance");
  }
}

double GaussianMarginal::quantile(double u) const {
  if (!(u > 0.0 && u < 1.0)) {
    throw ReferenceError("quantile level " + std::to_string(u) + " outside (0, 1)");
  }
  const boost::math::normal_distribution<double> dist(mean_, std::sqrt(variance_));
  return boost::math::quantile(dist, u);
}

std::string to_string(ReferenceProduct::Provenance p) {
  switch (p) {
    case ReferenceProduct::Provenance::kAnalyticGaussian: return "analytic-gaussian";
    case ReferenceProduct::Provenance::kGridOracle: return "grid-oracle";
    case ReferenceProduct::Provenance::kOther: return "other";
  }
  return "other";
}

double w2_1d_sorted(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw UsageError("w2_1d: unequal numbers of atoms (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw UsageError("w2_1d: empty input");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double w2_1d_empirical(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw UsageError("w2_1d: unequal numbers of atoms (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return w2_1d_sorted(sa, sb);
}

double w2_1d_bruteforce(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("w2_1d_bruteforce: unequal lengths");
  if (a.empty()) throw UsageError("w2_1d_bruteforce: empty input");
  if (a.size() > 8) {
    throw ScaleError("w2_1d_bruteforce supports at most 8 atoms, got " +
                     std::to_string(a.size()));
  }
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = a[j] - b[perm[j]];
      acc += d * d;
    }
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.size()));
}

double combine_coordinates(std::span<const double> per_coordinate) {
  double acc = 0.0;
  for (double w : per_coordinate) acc += w * w;
  return std::sqrt(acc);
}

double w2_product_empirical(const ParticleArray& x, const ParticleArray& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw UsageError("w2_product_empirical: shapes " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()) + " and " + std::to_string(y.rows()) + "x" +
                     std::to_string(y.cols()) + " differ");
  }
  std::vector<double> per(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) per[i] = w2_1d_empirical(x.row(i), y.row(i));
  return combine_coordinates(per);
}

double w2_empirical_vs_reference(std::span<const double> atoms, const ReferenceMarginal& ref) {
  if (atoms.empty()) throw UsageError("w2_empirical_vs_reference: no atoms");
  std::vector<double> sorted(atoms.begin(), atoms.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    const double q = ref.quantile((static_cast<double>(j) + 0.5) / n);
    if (!std::isfinite(q)) {
      throw ReferenceError("reference quantile at level " +
                           std::to_string((static_cast<double>(j) + 0.5) / n) +
                           " is not finite");
    }
    const double d = sorted[j] - q;
    acc += d * d;
  }
  return std::sqrt(acc / n);
}

std::vector<double> w2_per_coordinate(const ParticleArray& x, const ReferenceProduct& ref) {
  if (x.rows() != ref.dimension()) {
    throw UsageError("w2_to_reference: particles have " + std::to_string(x.rows()) +
                     " coordinates, reference has " + std::to_string(ref.dimension()));
  }
  std::vector<double> per(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    per[i] = w2_empirical_vs_reference(x.row(i), *ref.marginals[i]);
  }
  return per;
}

double w2_to_reference(const ParticleArray& x, const ReferenceProduct& ref) {
  return combine_coordinates(w2_per_coordinate(x, ref));
}

QuantileTable tabulate_midpoint_quantiles(const ReferenceProduct& ref, std::size_t n) {
  if (n == 0) throw UsageError("tabulate_midpoint_quantiles: n must be positive");
  QuantileTable table;
  table.atoms = n;
  table.levels.resize(ref.dimension());
  const auto nd = static_cast<double>(n);
  for (std::size_t i = 0; i < ref.dimension(); ++i) {
    auto& col = table.levels[i];
    col.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / nd;
      col[j] = ref.marginals[i]->quantile(u);
      if (!std::isfinite(col[j])) {
        throw ReferenceError("reference quantile of coordinate " + std::to_string(i) +
                             " at level " + std::to_string(u) + " is not finite");
      }
    }
  }
  return table;
}

std::vector<double> w2_per_coordinate(const ParticleArray& x, const QuantileTable& table) {
  if (x.rows() != table.levels.size() || x.cols() != table.atoms) {
    throw UsageError("w2_per_coordinate: particle shape does not match the quantile table");
  }
  std::vector<double> per(x.rows());
  std::vector<double> sorted(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::ranges::copy(x.row(i), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    per[i] = w2_1d_sorted(sorted, table.levels[i]);
  }
  return per;
}

double w2_between_marginals(const ReferenceMarginal& a, const ReferenceMarginal& b,
                            std::size_t points) {
  if (points == 0) throw UsageError("w2_between_marginals: points must be positive");
  const auto n = static_cast<double>(points);
  double acc = 0.0;
  for (std::size_t k = 0; k < points; ++k) {
    const double u = (static_cast<double>(k) + 0.5) / n;
    const double d = a.quantile(u) - b.quantile(u);
    acc += d * d;
  }
  return std::sqrt(acc / n);
}

GradMoments grad_moment_check(const Potential& v, const ParticleArray& samples) {
  const std::size_t m = samples.rows();
  const std::size_t k_count = samples.cols();
  if (m != v.dimension()) throw UsageError("grad_moment_check: dimension mismatch");
  std::vector<double> grad_sum(m, 0.0), g(m);
  double sq_sum = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    const std::vector<double> x = samples.column(k);
    v.gradient(x, g);
    for (std::size_t i = 0; i < m; ++i) {
      grad_sum[i] += g[i];
      sq_sum += g[i] * g[i];
    }
  }
  GradMoments out;
  const auto kd = static_cast<double>(k_count);
  double norm2 = 0.0;
  for (double s : grad_sum) norm2 += (s / kd) * (s / kd);
  out.mean_grad_norm = std::sqrt(norm2);
  out.mean_sq_grad = sq_sum / kd;
  out.coordinate_variances.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = samples.row(i);
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) / kd;
    double ss = 0.0;
    for (double val : r) ss += (val - mean) * (val - mean);
    out.coordinate_variances[i] = k_count > 1 ? ss / (kd - 1.0) : 0.0;
  }
  return out;
}

}  // namespace pavi
