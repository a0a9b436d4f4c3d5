#pragma once

// Target potentials V for densities p ∝ exp(-V) on R^m, with the
// strong-convexity / smoothness constants the dynamics rely on.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pavi {

class Potential {
 public:
  virtual ~Potential() = default;

  virtual std::size_t dimension() const = 0;

  // Unchecked evaluation hooks; callers normally go through the free
  // functions below, which validate inputs and outputs.
  virtual double value(std::span<const double> x) const = 0;
  virtual double partial(std::size_t i, std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> out) const;

  virtual double alpha() const = 0;
  virtual double lip() const = 0;
  virtual double third_bound() const = 0;

  // True when ∂_i V is affine in x_{-i}, so that the expectation of ∂_i V
  // over a product measure depends on that measure only through its
  // coordinate means.
  virtual bool has_conditional_mean() const { return false; }

  // E_{x_{-i}} ∂_i V(.., x_i, ..) where x_{-i} has the given means.
  virtual double conditional_mean_gradient_unchecked(
      std::size_t i, double xi, std::span<const double> other_means) const;

  // E_{x_{-i}} V(.., x_i, ..) up to a term that does not depend on x_i.
  virtual double conditional_mean_potential_unchecked(
      std::size_t i, double xi, std::span<const double> other_means) const;

  // Minimizer of V, by damped gradient descent unless overridden.
  virtual std::vector<double> minimizer() const;

  // Short stable identifier of the family and its parameters.
  virtual std::string fingerprint() const = 0;
};

using PotentialPtr = std::shared_ptr<const Potential>;

// Optional user-supplied constants that replace the analytic ones.
struct ConstantOverrides {
  std::optional<double> alpha;
  std::optional<double> lip;
  std::optional<double> third_bound;
};

// V(x) = ½ (x-μ)ᵀ A (x-μ).
class QuadraticPotential : public Potential {
 public:
  QuadraticPotential(Eigen::MatrixXd precision, Eigen::VectorXd mean,
                     ConstantOverrides overrides = {});

  std::size_t dimension() const override { return mean_.size(); }
  double value(std::span<const double> x) const override;
  double partial(std::size_t i, std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;

  double alpha() const override { return alpha_; }
  double lip() const override { return lip_; }
  double third_bound() const override { return third_bound_; }

  bool has_conditional_mean() const override { return true; }
  double conditional_mean_gradient_unchecked(
      std::size_t i, double xi, std::span<const double> other_means) const override;
  double conditional_mean_potential_unchecked(
      std::size_t i, double xi, std::span<const double> other_means) const override;
  std::vector<double> minimizer() const override;
  std::string fingerprint() const override;

  const Eigen::MatrixXd& precision() const { return precision_; }
  const Eigen::VectorXd& mean() const { return mean_; }

 protected:
  // Quadratic part of ∂_i V; shared with the perturbed family.
  double quadratic_partial(std::size_t i, std::span<const double> x) const;
  double coupling_term(std::size_t i, std::span<const double> other_means) const;

  Eigen::MatrixXd precision_;
  Eigen::VectorXd mean_;
  std::vector<double> a_;   // row-major copy of precision_ for the hot loop
  std::vector<double> mu_;
  double alpha_ = 0.0;
  double lip_ = 0.0;
  double third_bound_ = 0.0;
};

// V(x) = ½ (x-μ)ᵀ A (x-μ) + Σ_i c_i logcosh(x_i). Its mean-field solution is
// not Gaussian, but the coupling between coordinates is still quadratic.
class PerturbedQuadraticPotential : public QuadraticPotential {
 public:
  // sup_t |d³/dt³ logcosh(t)| = 4/(3√3), rounded as published.
  static constexpr double kLogcoshThirdDerivativeSup = 0.7699;

  PerturbedQuadraticPotential(Eigen::MatrixXd precision, Eigen::VectorXd mean,
                              Eigen::VectorXd weights,
                              ConstantOverrides overrides = {});

  double value(std::span<const double> x) const override;
  double partial(std::size_t i, std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;

  double conditional_mean_gradient_unchecked(
      std::size_t i, double xi, std::span<const double> other_means) const override;
  double conditional_mean_potential_unchecked(
      std::size_t i, double xi, std::span<const double> other_means) const override;
  std::vector<double> minimizer() const override;
  std::string fingerprint() const override;

  const Eigen::VectorXd& weights() const { return weights_; }

 private:
  Eigen::VectorXd weights_;
  std::vector<double> c_;
};

// Forwards everything to `inner` but hides the conditional-mean capability.
// Used to force the exhaustive and tensor-quadrature paths.
class OpaquePotential : public Potential {
 public:
  explicit OpaquePotential(PotentialPtr inner) : inner_(std::move(inner)) {}

  std::size_t dimension() const override { return inner_->dimension(); }
  double value(std::span<const double> x) const override { return inner_->value(x); }
  double partial(std::size_t i, std::span<const double> x) const override {
    return inner_->partial(i, x);
  }
  void gradient(std::span<const double> x, std::span<double> out) const override {
    inner_->gradient(x, out);
  }
  double alpha() const override { return inner_->alpha(); }
  double lip() const override { return inner_->lip(); }
  double third_bound() const override { return inner_->third_bound(); }
  std::vector<double> minimizer() const override { return inner_->minimizer(); }
  std::string fingerprint() const override { return "opaque:" + inner_->fingerprint(); }

 private:
  PotentialPtr inner_;
};

double logcosh(double t);

// Checked evaluation. Non-finite inputs or outputs raise EvaluationError
// naming the coordinate; bad indices raise UsageError.
double eval_potential(const Potential& v, std::span<const double> x);
double partial_derivative(const Potential& v, std::size_t i, std::span<const double> x);
std::vector<double> gradient(const Potential& v, std::span<const double> x);
double conditional_mean_gradient(const Potential& v, std::size_t i, double xi,
                                 std::span<const double> other_means);

// Validates symmetry (1e-12) and positive definiteness; returns the
// eigenvalues in ascending order.
Eigen::VectorXd checked_spectrum(const Eigen::MatrixXd& precision);

}  // namespace pavi
