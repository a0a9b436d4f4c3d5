#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pavi {

// Base of every error thrown by the library. The harness maps subclasses
// to process exit codes (see harness.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments from the caller: index out of range, shape mismatch.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid run or potential configuration (step-size guard, N < 2, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite input or output while evaluating a potential.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// A capability the potential does not declare was requested.
class UnsupportedCapabilityError : public Error {
 public:
  using Error::Error;
};

// Problem too large for an exhaustive or quadrature path.
class ScaleError : public Error {
 public:
  using Error::Error;
};

// Failure evaluating a reference quantile function.
class ReferenceError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t iteration, std::size_t row, std::size_t column)
      : Error("non-finite particle at iteration " + std::to_string(iteration) +
              ", row " + std::to_string(row) + ", column " +
              std::to_string(column)),
        iteration_(iteration),
        row_(row),
        column_(column) {}

  std::size_t iteration() const { return iteration_; }
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t iteration_;
  std::size_t row_;
  std::size_t column_;
};

// Grid fixed-point iteration ran out of iterations.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> residuals)
      : Error(what), residuals_(std::move(residuals)) {}
  const std::vector<double>& residuals() const { return residuals_; }

 private:
  std::vector<double> residuals_;
};

// Probability mass reached the edge of an oracle grid.
class GridTooNarrowError : public Error {
 public:
  using Error::Error;
};

// A grid density whose log values are all -inf.
class DegenerateGridError : public Error {
 public:
  using Error::Error;
};

}  // namespace pavi
