#include "pavi/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>

#include "pavi/errors.hpp"
#include "pavi/rng.hpp"

namespace pavi {

using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double trapezoid_weight(std::size_t k, std::size_t size, double dx) {
  return (k == 0 || k + 1 == size) ? 0.5 * dx : dx;
}

struct WeightedNodes {
  std::vector<double> x;
  std::vector<double> w;
};

// Quadrature nodes of one marginal, dropping weights that cannot matter.
WeightedNodes quadrature_nodes(const GridDensity& q) {
  WeightedNodes out;
  double wmax = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k)
    wmax = std::max(wmax, trapezoid_weight(k, q.size(), q.spacing()) * q.density()[k]);
  for (std::size_t k = 0; k < q.size(); ++k) {
    const double w = trapezoid_weight(k, q.size(), q.spacing()) * q.density()[k];
    if (w > 1e-18 * wmax) {
      out.x.push_back(q.node(k));
      out.w.push_back(w);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// GridDensity

GridDensity::GridDensity(double lo, double hi, std::vector<double> log_density)
    : lo_(lo), hi_(hi), log_density_(std::move(log_density)) {
  const std::size_t g = log_density_.size();
  if (g < 3) throw UsageError("grid density needs at least 3 nodes");
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw UsageError("grid density needs finite lo < hi");
  }
  dx_ = (hi - lo) / static_cast<double>(g - 1);

  double top = kNegInf;
  for (double l : log_density_) {
    if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) {
      throw DegenerateGridError("grid log density contains NaN or +inf");
    }
    top = std::max(top, l);
  }
  if (top == kNegInf) throw DegenerateGridError("grid log density is -inf everywhere");

  // Log-sum-exp stabilized trapezoid normalization.
  double z = 0.0;
  for (std::size_t k = 0; k < g; ++k)
    z += trapezoid_weight(k, g, dx_) * std::exp(log_density_[k] - top);
  const double log_norm = top + std::log(z);
  density_.resize(g);
  for (std::size_t k = 0; k < g; ++k) {
    log_density_[k] -= log_norm;
    density_[k] = std::exp(log_density_[k]);
  }

  slope_.resize(g);
  slope_[0] = (-3.0 * density_[0] + 4.0 * density_[1] - density_[2]) / (2.0 * dx_);
  slope_[g - 1] = (3.0 * density_[g - 1] - 4.0 * density_[g - 2] + density_[g - 3]) / (2.0 * dx_);
  for (std::size_t k = 1; k + 1 < g; ++k)
    slope_[k] = (density_[k + 1] - density_[k - 1]) / (2.0 * dx_);

  // Nodal CDF by the end-corrected trapezoid rule, kept monotone.
  cdf_.assign(g, 0.0);
  for (std::size_t k = 0; k + 1 < g; ++k) {
    const double inc = 0.5 * dx_ * (density_[k] + density_[k + 1]) -
                       dx_ * dx_ / 12.0 * (slope_[k + 1] - slope_[k]);
    cdf_[k + 1] = cdf_[k] + std::max(inc, 0.0);
  }
  const double total = cdf_[g - 1];
  for (double& c : cdf_) c /= total;
  // Rescale derivatives consistently with the rescaled CDF.
  for (double& s : slope_) s /= total;

  double m1 = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < g; ++k) {
    const double w = trapezoid_weight(k, g, dx_) * density_[k];
    m1 += w * node(k);
  }
  for (std::size_t k = 0; k < g; ++k) {
    const double w = trapezoid_weight(k, g, dx_) * density_[k];
    const double d = node(k) - m1;
    m2 += w * d * d;
  }
  mean_ = m1;
  variance_ = m2;
  cdf_total_ = total;
}

std::vector<double> GridDensity::nodes() const {
  std::vector<double> out(size());
  for (std::size_t k = 0; k < size(); ++k) out[k] = node(k);
  return out;
}

double GridDensity::normalization_error() const {
  double z = 0.0;
  for (std::size_t k = 0; k < size(); ++k) z += trapezoid_weight(k, size(), dx_) * density_[k];
  return z - 1.0;
}

double GridDensity::boundary_density() const {
  return std::max(density_.front(), density_.back());
}

double GridDensity::quantile(double u) const {
  if (!(u > 0.0 && u < 1.0)) {
    throw ReferenceError("quantile level " + std::to_string(u) + " outside (0, 1)");
  }
  const std::size_t g = size();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  std::size_t k = it == cdf_.begin() ? 0 : static_cast<std::size_t>(it - cdf_.begin()) - 1;
  k = std::min(k, g - 2);
  const double f0 = cdf_[k];
  const double f1 = cdf_[k + 1];
  if (!(f1 > f0)) return node(k);
  // Cubic Hermite CDF on the cell, parameter t in [0, 1].
  const double d0 = dx_ * density_[k] / cdf_total_;
  const double d1 = dx_ * density_[k + 1] / cdf_total_;
  auto cell_cdf = [&](double t) {
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + t) * d0 + (-2 * t3 + 3 * t2) * f1 +
           (t3 - t2) * d1;
  };
  auto cell_pdf = [&](double t) {
    const double t2 = t * t;
    return (6 * t2 - 6 * t) * f0 + (3 * t2 - 4 * t + 1) * d0 + (-6 * t2 + 6 * t) * f1 +
           (3 * t2 - 2 * t) * d1;
  };
  double a = 0.0, b = 1.0;
  double t = (u - f0) / (f1 - f0);
  for (int iter = 0; iter < 100; ++iter) {
    const double r = cell_cdf(t) - u;
    if (r > 0) b = t; else a = t;
    const double dp = cell_pdf(t);
    double next = dp > 0 ? t - r / dp : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - t) < 1e-15 || b - a < 1e-15) {
      t = next;
      break;
    }
    t = next;
  }
  return node(k) + t * dx_;
}

// ---------------------------------------------------------------------------
// Transform

std::vector<double> vbar_on_grid(const Potential& v, std::size_t i, const GridProduct& q,
                                 QuadratureMode mode) {
  const std::size_t m = v.dimension();
  if (q.size() != m) throw UsageError("vbar_on_grid: grid product dimension mismatch");
  if (i >= m) throw UsageError("vbar_on_grid: coordinate index out of range");
  const GridDensity& own = q[i];
  std::vector<double> out(own.size());

  if (m == 1) {
    std::vector<double> point(1);
    for (std::size_t g = 0; g < own.size(); ++g) {
      point[0] = own.node(g);
      out[g] = v.value(point);
    }
    return out;
  }

  if (mode == QuadratureMode::kAuto) {
    if (m == 2) mode = QuadratureMode::kTensor;
    else if (v.has_conditional_mean()) mode = QuadratureMode::kSeparable;
    else if (m == 3) mode = QuadratureMode::kTensor;
    else {
      throw ScaleError("grid oracle: m = " + std::to_string(m) +
                       " exceeds the tensor-quadrature limit of 3 and the potential is not "
                       "separable");
    }
  }

  if (mode == QuadratureMode::kSeparable) {
    if (!v.has_conditional_mean()) {
      throw ScaleError("grid oracle: separable quadrature requested but the potential has no "
                       "conditional-mean capability");
    }
    std::vector<double> others;
    for (std::size_t k = 0; k < m; ++k)
      if (k != i) others.push_back(q[k].mean());
    for (std::size_t g = 0; g < own.size(); ++g)
      out[g] = v.conditional_mean_potential_unchecked(i, own.node(g), others);
    return out;
  }

  if (m > 3) {
    throw ScaleError("grid oracle: tensor quadrature supports m <= 3, got m = " +
                     std::to_string(m));
  }
  std::vector<std::size_t> other_idx;
  std::vector<WeightedNodes> others;
  for (std::size_t k = 0; k < m; ++k) {
    if (k == i) continue;
    other_idx.push_back(k);
    others.push_back(quadrature_nodes(q[k]));
  }
  std::vector<double> point(m);
  for (std::size_t g = 0; g < own.size(); ++g) {
    point[i] = own.node(g);
    double acc = 0.0;
    if (others.size() == 1) {
      const auto& a = others[0];
      for (std::size_t s = 0; s < a.x.size(); ++s) {
        point[other_idx[0]] = a.x[s];
        acc += a.w[s] * v.value(point);
      }
    } else {
      const auto& a = others[0];
      const auto& b = others[1];
      for (std::size_t s = 0; s < a.x.size(); ++s) {
        point[other_idx[0]] = a.x[s];
        double inner = 0.0;
        for (std::size_t r = 0; r < b.x.size(); ++r) {
          point[other_idx[1]] = b.x[r];
          inner += b.w[r] * v.value(point);
        }
        acc += a.w[s] * inner;
      }
    }
    out[g] = acc;
  }
  return out;
}

GridDensity apply_transform(const Potential& v, std::size_t i, const GridProduct& q,
                            QuadratureMode mode) {
  std::vector<double> vbar = vbar_on_grid(v, i, q, mode);
  for (double& val : vbar) val = -val;
  return GridDensity(q[i].lo(), q[i].hi(), std::move(vbar));
}

GridProduct default_grid(const Potential& v, std::size_t points, GridInit init) {
  if (points < 3) throw UsageError("grid needs at least 3 points");
  const std::vector<double> center = v.minimizer();
  const double half = 8.0 / std::sqrt(v.alpha());
  GridProduct q;
  for (std::size_t i = 0; i < v.dimension(); ++i) {
    const double lo = center[i] - half;
    const double hi = center[i] + half;
    std::vector<double> logd(points, 0.0);
    if (init == GridInit::kPointMass) {
      std::ranges::fill(logd, kNegInf);
      logd[points / 2] = 0.0;
    }
    q.emplace_back(lo, hi, std::move(logd));
  }
  return q;
}

// ---------------------------------------------------------------------------
// Fixed point

FixedPointResult fixed_point_solve(const Potential& v, GridProduct init,
                                   const FixedPointOptions& options) {
  const std::size_t m = v.dimension();
  if (init.size() != m) throw UsageError("fixed_point_solve: initial product has wrong dimension");
  if (!(options.tol > 0.0)) throw UsageError("fixed_point_solve: tol must be positive");
  if (!(options.damping > 0.0 && options.damping <= 1.0)) {
    throw UsageError("fixed_point_solve: damping must lie in (0, 1]");
  }

  FixedPointResult result;
  GridProduct q = std::move(init);

  auto check_boundary = [&](const GridDensity& d, std::size_t i) {
    if (d.boundary_density() > options.boundary_limit) {
      throw GridTooNarrowError("grid oracle: density at the edge of coordinate " +
                               std::to_string(i) + "'s grid is " +
                               std::to_string(d.boundary_density()) + " > " +
                               std::to_string(options.boundary_limit) + "; widen the grid");
    }
  };

  for (std::size_t it = 1; it <= options.max_iter; ++it) {
    double residual = 0.0;
    double sup_change = 0.0;
    result.final_w2_residuals.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      GridDensity next = apply_transform(v, i, q, options.mode);
      if (options.damping < 1.0) {
        std::vector<double> mixed = next.log_density();
        const auto& old = q[i].log_density();
        for (std::size_t k = 0; k < mixed.size(); ++k) {
          if (std::isfinite(old[k]))
            mixed[k] = (1.0 - options.damping) * old[k] + options.damping * mixed[k];
        }
        next = GridDensity(next.lo(), next.hi(), std::move(mixed));
      }
      check_boundary(next, i);
      const double w2 = w2_between_marginals(q[i], next, options.w2_points);
      const auto& old = q[i].log_density();
      for (std::size_t k = 0; k < old.size(); ++k) {
        if (std::isfinite(old[k])) {
          sup_change = std::max(sup_change, std::abs(old[k] - next.log_density()[k]));
        }
      }
      result.final_w2_residuals[i] = w2;
      residual = std::max(residual, w2);
      q[i] = std::move(next);
    }
    result.residual_trace.push_back(residual);
    result.iterations = it;
    result.log_density_sup_change = sup_change;
    // With one coordinate T does not depend on the iterate: one sweep is exact.
    if (residual < options.tol || m == 1) {
      result.fixed_point_residuals.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        const GridDensity again = apply_transform(v, i, q, options.mode);
        result.fixed_point_residuals[i] = w2_between_marginals(q[i], again, options.w2_points);
      }
      result.solution = std::move(q);
      return result;
    }
  }
  throw NonConvergenceError("grid oracle did not converge in " +
                                std::to_string(options.max_iter) + " sweeps (last residual " +
                                std::to_string(result.residual_trace.back()) + ")",
                            result.residual_trace);
}

ReferenceProduct to_reference(const GridProduct& q) {
  ReferenceProduct ref;
  ref.provenance = ReferenceProduct::Provenance::kGridOracle;
  for (const auto& d : q) ref.marginals.push_back(std::make_shared<GridDensity>(d));
  return ref;
}

ReferenceProduct gaussian_mfvi_solution(const QuadraticPotential& v) {
  ReferenceProduct ref;
  ref.provenance = ReferenceProduct::Provenance::kAnalyticGaussian;
  for (std::size_t i = 0; i < v.dimension(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    ref.marginals.push_back(
        std::make_shared<GaussianMarginal>(v.mean()(k), 1.0 / v.precision()(k, k)));
  }
  return ref;
}

ParticleArray sample_reference(const ReferenceProduct& ref, std::size_t count,
                               std::uint64_t seed) {
  if (count == 0) throw UsageError("sample_reference: count must be positive");
  ParticleArray out(ref.dimension(), count);
  for (std::size_t i = 0; i < ref.dimension(); ++i) {
    RngStream rng(seed, 0, StreamRole::kReference, i);
    for (double& x : out.row(i)) x = ref.marginals[i]->quantile(rng.uniform());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Documents

json oracle_document(const ReferenceProduct& ref) {
  json doc;
  doc["kind"] = to_string(ref.provenance);
  json marginals = json::array();
  for (const auto& mp : ref.marginals) {
    if (const auto* g = dynamic_cast<const GaussianMarginal*>(mp.get())) {
      marginals.push_back({{"mean", g->mean()}, {"variance", g->variance()}});
    } else if (const auto* d = dynamic_cast<const GridDensity*>(mp.get())) {
      json logd = json::array();
      for (double l : d->log_density()) logd.push_back(std::isfinite(l) ? json(l) : json(nullptr));
      marginals.push_back({{"lo", d->lo()}, {"hi", d->hi()}, {"log_density", logd}});
    } else if (const auto* p = dynamic_cast<const PointMassMarginal*>(mp.get())) {
      marginals.push_back({{"point_mass", p->mean()}});
    } else {
      throw UsageError("oracle_document: unsupported marginal type");
    }
  }
  doc["marginals"] = marginals;
  return doc;
}

json oracle_document(const FixedPointResult& result) {
  json doc = oracle_document(to_reference(result.solution));
  doc["residual"] = {{"iterations", result.iterations},
                     {"residual_trace", result.residual_trace},
                     {"final_w2_residuals", result.final_w2_residuals},
                     {"log_density_sup_change", result.log_density_sup_change},
                     {"fixed_point_residuals", result.fixed_point_residuals}};
  return doc;
}

namespace {

ReferenceProduct parse_reference(const json& doc) {
  ReferenceProduct ref;
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "analytic-gaussian") ref.provenance = ReferenceProduct::Provenance::kAnalyticGaussian;
  else if (kind == "grid-oracle") ref.provenance = ReferenceProduct::Provenance::kGridOracle;
  else ref.provenance = ReferenceProduct::Provenance::kOther;
  for (const auto& mj : doc.at("marginals")) {
    if (mj.contains("variance")) {
      ref.marginals.push_back(std::make_shared<GaussianMarginal>(mj.at("mean").get<double>(),
                                                                 mj.at("variance").get<double>()));
    } else if (mj.contains("log_density")) {
      std::vector<double> logd;
      for (const auto& l : mj.at("log_density")) logd.push_back(l.is_null() ? kNegInf : l.get<double>());
      ref.marginals.push_back(std::make_shared<GridDensity>(
          mj.at("lo").get<double>(), mj.at("hi").get<double>(), std::move(logd)));
    } else if (mj.contains("point_mass")) {
      ref.marginals.push_back(std::make_shared<PointMassMarginal>(mj.at("point_mass").get<double>()));
    } else {
      throw ConfigError("oracle document: unrecognized marginal entry");
    }
  }
  if (ref.marginals.empty()) throw ConfigError("oracle document has no marginals");
  return ref;
}

}  // namespace

ReferenceProduct reference_from_document(const json& doc) {
  try {
    return parse_reference(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("oracle document: ") + e.what());
  }
}

ReferenceProduct load_reference(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open oracle document " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("oracle document " + path.string() + ": " + e.what());
  }
  return reference_from_document(doc);
}

}  // namespace pavi
