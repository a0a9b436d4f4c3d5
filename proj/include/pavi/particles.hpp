#pragma once

// The m×N particle state. Entry (i, j) is coordinate i of particle j; row i
// holds the atoms of the i-th empirical marginal, and the product of the row
// marginals is the product empirical measure of the array.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pavi {

class ParticleArray {
 public:
  ParticleArray() = default;
  ParticleArray(std::size_t rows, std::size_t cols, double fill = 0.0);
  ParticleArray(std::size_t rows, std::size_t cols, std::vector<double> row_major);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * cols_, cols_};
  }
  std::vector<double> column(std::size_t j) const;

  const std::vector<double>& values() const { return values_; }

  bool all_finite() const;

  friend bool operator==(const ParticleArray&, const ParticleArray&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct InitSpec {
  enum class Kind { kStandardNormal, kPointMass, kExplicit };
  Kind kind = Kind::kStandardNormal;
  std::vector<double> point;      // kPointMass
  ParticleArray explicit_values;  // kExplicit
};

// Throws ConfigError when N < 2.
ParticleArray init_particles(std::size_t m, std::size_t n, const InitSpec& init,
                             std::uint64_t seed);

// Draws B columns from the product empirical measure of X: for every
// coordinate i and column b an independent uniform atom index. Row i of the
// result uses stream (seed, iteration, kContext, i).
ParticleArray sample_product(const ParticleArray& x, std::size_t batch, std::uint64_t seed,
                             std::uint64_t iteration);

// Ascending order statistics of row i (stable).
std::vector<double> sorted_marginal(const ParticleArray& x, std::size_t i);

std::vector<double> coordinate_means(const ParticleArray& x);

// Checkpoint / interchange layouts. Both carry (m, N, seed, iteration)
// followed by row-major doubles.
struct ParticleFileHeader {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
};

struct ParticleFile {
  ParticleFileHeader header;
  ParticleArray particles;
};

void write_particles_binary(const std::filesystem::path& path, const ParticleArray& x,
                            std::uint64_t seed, std::uint64_t iteration);
ParticleFile read_particles_binary(const std::filesystem::path& path);
void write_particles_csv(const std::filesystem::path& path, const ParticleArray& x,
                         std::uint64_t seed, std::uint64_t iteration);
ParticleFile read_particles_csv(const std::filesystem::path& path);

}  // namespace pavi
