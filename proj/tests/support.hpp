#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pavi/potential.hpp"

namespace pavi::test {

inline std::shared_ptr<QuadraticPotential> quadratic(std::vector<std::vector<double>> rows,
                                                     std::vector<double> mean) {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd a(m, m);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < m; ++c) a(r, c) = rows[r][c];
  return std::make_shared<QuadraticPotential>(
      a, Eigen::Map<Eigen::VectorXd>(mean.data(), m));
}

inline std::shared_ptr<PerturbedQuadraticPotential> perturbed(
    std::vector<std::vector<double>> rows, std::vector<double> mean, std::vector<double> c) {
  const auto q = quadratic(rows, mean);
  return std::make_shared<PerturbedQuadraticPotential>(
      q->precision(), q->mean(), Eigen::Map<Eigen::VectorXd>(c.data(), q->dimension()));
}

// ½ a |x|² + β Σ_{i<k} logcosh(x_i - x_k). The partials are nonlinear in the
// other coordinates, so there is no conditional-mean shortcut.
class PairwiseLogcosh : public Potential {
 public:
  PairwiseLogcosh(std::size_t m, double a, double beta) : m_(m), a_(a), beta_(beta) {}
  std::size_t dimension() const override { return m_; }
  double value(std::span<const double> x) const override {
    double v = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      v += 0.5 * a_ * x[i] * x[i];
      for (std::size_t k = i + 1; k < m_; ++k) v += beta_ * logcosh(x[i] - x[k]);
    }
    return v;
  }
  double partial(std::size_t i, std::span<const double> x) const override {
    double g = a_ * x[i];
    for (std::size_t k = 0; k < m_; ++k)
      if (k != i) g += beta_ * std::tanh(x[i] - x[k]);
    return g;
  }
  double alpha() const override { return a_; }
  double lip() const override { return a_ + beta_ * static_cast<double>(m_); }
  double third_bound() const override { return beta_ * static_cast<double>(m_ - 1) * 0.7699; }
  std::string fingerprint() const override { return "pairwise-logcosh"; }

 private:
  std::size_t m_;
  double a_;
  double beta_;
};

// Removes the directory on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("pavi-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace pavi::test
