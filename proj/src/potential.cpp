#include "pavi/potential.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pavi/errors.hpp"

namespace pavi {

namespace {

void require_finite(std::span<const double> x, const char* what) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!std::isfinite(x[k])) {
      throw EvaluationError(std::string(what) + ": coordinate " + std::to_string(k) +
                            " is not finite");
    }
  }
}

void require_dimension(const Potential& v, std::span<const double> x) {
  if (x.size() != v.dimension()) {
    throw UsageError("point has length " + std::to_string(x.size()) +
                     ", potential has dimension " + std::to_string(v.dimension()));
  }
}

void require_index(const Potential& v, std::size_t i) {
  if (i >= v.dimension()) {
    throw UsageError("coordinate index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(v.dimension()) + ")");
  }
}

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? "," : "") << v[k];
  return os.str();
}

}  // namespace

double logcosh(double t) {
  const double a = std::abs(t);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

void Potential::gradient(std::span<const double> x, std::span<double> out) const {
  for (std::size_t i = 0; i < dimension(); ++i) out[i] = partial(i, x);
}

double Potential::conditional_mean_gradient_unchecked(std::size_t, double,
                                                      std::span<const double>) const {
  throw UnsupportedCapabilityError(
      "potential " + fingerprint() +
      " has no closed-form conditional mean gradient; use the exhaustive mean-field "
      "gradient or stochastic estimation");
}

double Potential::conditional_mean_potential_unchecked(std::size_t, double,
                                                       std::span<const double>) const {
  throw UnsupportedCapabilityError("potential " + fingerprint() +
                                   " has no closed-form conditional mean potential");
}

std::vector<double> Potential::minimizer() const {
  const std::size_t m = dimension();
  std::vector<double> x(m, 0.0), g(m);
  const double step = 1.0 / lip();
  for (int it = 0; it < 100000; ++it) {
    gradient(x, g);
    double norm2 = 0.0;
    for (double gi : g) norm2 += gi * gi;
    if (std::sqrt(norm2) < 1e-10) return x;
    for (std::size_t i = 0; i < m; ++i) x[i] -= step * g[i];
  }
  throw EvaluationError("gradient descent for the minimizer did not reach |grad V| < 1e-10");
}

Eigen::VectorXd checked_spectrum(const Eigen::MatrixXd& precision) {
  if (precision.rows() == 0 || precision.rows() != precision.cols()) {
    throw ConfigError("precision matrix must be square and non-empty");
  }
  if (!precision.allFinite()) throw ConfigError("precision matrix has non-finite entries");
  const double asym = (precision - precision.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) {
    throw ConfigError("precision matrix is not symmetric (max |A - A^T| = " +
                      std::to_string(asym) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(precision, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw ConfigError("eigen-decomposition failed");
  const Eigen::VectorXd ev = solver.eigenvalues();
  if (!(ev(0) > 0.0)) {
    throw ConfigError("precision matrix is not positive definite (smallest eigenvalue " +
                      std::to_string(ev(0)) + ")");
  }
  return ev;
}

// ---------------------------------------------------------------------------
// QuadraticPotential

QuadraticPotential::QuadraticPotential(Eigen::MatrixXd precision, Eigen::VectorXd mean,
                                       ConstantOverrides overrides)
    : precision_(std::move(precision)), mean_(std::move(mean)) {
  const Eigen::VectorXd ev = checked_spectrum(precision_);
  if (mean_.size() != precision_.rows()) {
    throw ConfigError("mean has length " + std::to_string(mean_.size()) +
                      ", precision matrix is " + std::to_string(precision_.rows()) + "x" +
                      std::to_string(precision_.cols()));
  }
  if (!mean_.allFinite()) throw ConfigError("mean has non-finite entries");
  const auto m = static_cast<std::size_t>(mean_.size());
  a_.resize(m * m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < m; ++c) a_[r * m + c] = precision_(r, c);
  mu_.assign(mean_.data(), mean_.data() + m);

  alpha_ = overrides.alpha.value_or(ev(0));
  lip_ = overrides.lip.value_or(ev(ev.size() - 1));
  third_bound_ = overrides.third_bound.value_or(0.0);
  if (!(alpha_ > 0.0) || !(alpha_ <= lip_)) {
    throw ConfigError("constants must satisfy 0 < alpha <= L (alpha = " +
                      std::to_string(alpha_) + ", L = " + std::to_string(lip_) + ")");
  }
  if (!(third_bound_ >= 0.0)) throw ConfigError("third-derivative bound must be >= 0");
}

double QuadraticPotential::value(std::span<const double> x) const {
  const std::size_t m = mu_.size();
  double acc = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < m; ++c) row += a_[r * m + c] * (x[c] - mu_[c]);
    acc += (x[r] - mu_[r]) * row;
  }
  return 0.5 * acc;
}

double QuadraticPotential::quadratic_partial(std::size_t i, std::span<const double> x) const {
  const std::size_t m = mu_.size();
  const double* row = a_.data() + i * m;
  double acc = 0.0;
  for (std::size_t c = 0; c < m; ++c) acc += row[c] * (x[c] - mu_[c]);
  return acc;
}

double QuadraticPotential::partial(std::size_t i, std::span<const double> x) const {
  return quadratic_partial(i, x);
}

void QuadraticPotential::gradient(std::span<const double> x, std::span<double> out) const {
  for (std::size_t i = 0; i < mu_.size(); ++i) out[i] = quadratic_partial(i, x);
}

double QuadraticPotential::coupling_term(std::size_t i,
                                         std::span<const double> other_means) const {
  const std::size_t m = mu_.size();
  double acc = 0.0;
  for (std::size_t c = 0, k = 0; c < m; ++c) {
    if (c == i) continue;
    acc += a_[i * m + c] * (other_means[k++] - mu_[c]);
  }
  return acc;
}

double QuadraticPotential::conditional_mean_gradient_unchecked(
    std::size_t i, double xi, std::span<const double> other_means) const {
  const std::size_t m = mu_.size();
  return a_[i * m + i] * (xi - mu_[i]) + coupling_term(i, other_means);
}

double QuadraticPotential::conditional_mean_potential_unchecked(
    std::size_t i, double xi, std::span<const double> other_means) const {
  const std::size_t m = mu_.size();
  const double d = xi - mu_[i];
  return 0.5 * a_[i * m + i] * d * d + d * coupling_term(i, other_means);
}

std::vector<double> QuadraticPotential::minimizer() const { return mu_; }

std::string QuadraticPotential::fingerprint() const {
  return "quadratic(A=[" + join(a_) + "],mu=[" + join(mu_) + "])";
}

// ---------------------------------------------------------------------------
// PerturbedQuadraticPotential

namespace {

ConstantOverrides perturbed_constants(const Eigen::MatrixXd& precision,
                                      const Eigen::VectorXd& weights,
                                      ConstantOverrides overrides) {
  const Eigen::VectorXd ev = checked_spectrum(precision);
  if (weights.size() != precision.rows()) {
    throw ConfigError("weights have length " + std::to_string(weights.size()) +
                      ", expected " + std::to_string(precision.rows()));
  }
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    if (!std::isfinite(weights(k)) || weights(k) < 0.0) {
      throw ConfigError("weight c_" + std::to_string(k) + " must be finite and >= 0");
    }
  }
  const double cmax = weights.maxCoeff();
  ConstantOverrides out;
  out.alpha = overrides.alpha.value_or(ev(0));
  // 0 < logcosh'' <= 1
  out.lip = overrides.lip.value_or(ev(ev.size() - 1) + cmax);
  out.third_bound = overrides.third_bound.value_or(
      cmax * PerturbedQuadraticPotential::kLogcoshThirdDerivativeSup);
  return out;
}

}  // namespace

PerturbedQuadraticPotential::PerturbedQuadraticPotential(Eigen::MatrixXd precision,
                                                         Eigen::VectorXd mean,
                                                         Eigen::VectorXd weights,
                                                         ConstantOverrides overrides)
    : QuadraticPotential(precision, std::move(mean),
                         perturbed_constants(precision, weights, overrides)),
      weights_(std::move(weights)) {
  c_.assign(weights_.data(), weights_.data() + weights_.size());
}

double PerturbedQuadraticPotential::value(std::span<const double> x) const {
  double acc = QuadraticPotential::value(x);
  for (std::size_t i = 0; i < c_.size(); ++i) acc += c_[i] * logcosh(x[i]);
  return acc;
}

double PerturbedQuadraticPotential::partial(std::size_t i, std::span<const double> x) const {
  return quadratic_partial(i, x) + c_[i] * std::tanh(x[i]);
}

void PerturbedQuadraticPotential::gradient(std::span<const double> x,
                                           std::span<double> out) const {
  for (std::size_t i = 0; i < c_.size(); ++i)
    out[i] = quadratic_partial(i, x) + c_[i] * std::tanh(x[i]);
}

double PerturbedQuadraticPotential::conditional_mean_gradient_unchecked(
    std::size_t i, double xi, std::span<const double> other_means) const {
  return QuadraticPotential::conditional_mean_gradient_unchecked(i, xi, other_means) +
         c_[i] * std::tanh(xi);
}

double PerturbedQuadraticPotential::conditional_mean_potential_unchecked(
    std::size_t i, double xi, std::span<const double> other_means) const {
  return QuadraticPotential::conditional_mean_potential_unchecked(i, xi, other_means) +
         c_[i] * logcosh(xi);
}

std::vector<double> PerturbedQuadraticPotential::minimizer() const {
  return Potential::minimizer();
}

std::string PerturbedQuadraticPotential::fingerprint() const {
  return "perturbed_" + QuadraticPotential::fingerprint() + "+c=[" + join(c_) + "]";
}

// ---------------------------------------------------------------------------
// Checked entry points

double eval_potential(const Potential& v, std::span<const double> x) {
  require_dimension(v, x);
  require_finite(x, "eval_potential input");
  const double out = v.value(x);
  if (!std::isfinite(out)) throw EvaluationError("eval_potential produced a non-finite value");
  return out;
}

double partial_derivative(const Potential& v, std::size_t i, std::span<const double> x) {
  require_index(v, i);
  require_dimension(v, x);
  require_finite(x, "partial_derivative input");
  const double out = v.partial(i, x);
  if (!std::isfinite(out)) {
    throw EvaluationError("partial derivative along coordinate " + std::to_string(i) +
                          " is not finite");
  }
  return out;
}

std::vector<double> gradient(const Potential& v, std::span<const double> x) {
  require_dimension(v, x);
  require_finite(x, "gradient input");
  std::vector<double> g(v.dimension());
  v.gradient(x, g);
  require_finite(g, "gradient output");
  return g;
}

double conditional_mean_gradient(const Potential& v, std::size_t i, double xi,
                                 std::span<const double> other_means) {
  require_index(v, i);
  if (other_means.size() + 1 != v.dimension()) {
    throw UsageError("other_means must have length m-1 = " +
                     std::to_string(v.dimension() - 1));
  }
  if (!v.has_conditional_mean()) {
    // Raises UnsupportedCapabilityError with the fallback advice.
    return v.conditional_mean_gradient_unchecked(i, xi, other_means);
  }
  if (!std::isfinite(xi)) throw EvaluationError("x_i is not finite");
  require_finite(other_means, "conditional_mean_gradient means");
  const double out = v.conditional_mean_gradient_unchecked(i, xi, other_means);
  if (!std::isfinite(out)) throw EvaluationError("conditional mean gradient is not finite");
  return out;
}

}  // namespace pavi
