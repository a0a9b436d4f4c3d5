#include "pavi/particles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "pavi/errors.hpp"
#include "pavi/rng.hpp"

namespace pavi {

namespace {

constexpr char kBinaryMagic[8] = {'P', 'A', 'V', 'I', 'P', 'A', '0', '1'};

}  // namespace

ParticleArray::ParticleArray(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw UsageError("particle array needs m >= 1 and N >= 1");
}

ParticleArray::ParticleArray(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), values_(std::move(row_major)) {
  if (rows == 0 || cols == 0) throw UsageError("particle array needs m >= 1 and N >= 1");
  if (values_.size() != rows * cols) {
    throw UsageError("expected " + std::to_string(rows * cols) + " values, got " +
                     std::to_string(values_.size()));
  }
}

std::vector<double> ParticleArray::column(std::size_t j) const {
  std::vector<double> out(rows_);
  for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

bool ParticleArray::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ParticleArray init_particles(std::size_t m, std::size_t n, const InitSpec& init,
                             std::uint64_t seed) {
  if (n < 2) throw ConfigError("N >= 2 required (particle count " + std::to_string(n) + ")");
  if (m < 1) throw ConfigError("dimension m >= 1 required");
  switch (init.kind) {
    case InitSpec::Kind::kStandardNormal: {
      ParticleArray x(m, n);
      for (std::size_t i = 0; i < m; ++i) {
        RngStream rng(seed, 0, StreamRole::kInit, i);
        for (double& v : x.row(i)) v = rng.normal();
      }
      return x;
    }
    case InitSpec::Kind::kPointMass: {
      if (init.point.size() != m) {
        throw ConfigError("point-mass init has length " + std::to_string(init.point.size()) +
                          ", expected " + std::to_string(m));
      }
      ParticleArray x(m, n);
      for (std::size_t i = 0; i < m; ++i) std::ranges::fill(x.row(i), init.point[i]);
      return x;
    }
    case InitSpec::Kind::kExplicit: {
      const ParticleArray& x = init.explicit_values;
      if (x.rows() != m || x.cols() != n) {
        throw ConfigError("explicit init has shape " + std::to_string(x.rows()) + "x" +
                          std::to_string(x.cols()) + ", expected " + std::to_string(m) + "x" +
                          std::to_string(n));
      }
      if (!x.all_finite()) throw ConfigError("explicit init has non-finite entries");
      return x;
    }
  }
  throw ConfigError("unknown init kind");
}

ParticleArray sample_product(const ParticleArray& x, std::size_t batch, std::uint64_t seed,
                             std::uint64_t iteration) {
  if (batch < 1) throw UsageError("batch size B must be >= 1");
  ParticleArray z(x.rows(), batch);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    RngStream rng(seed, iteration, StreamRole::kContext, i);
    const auto atoms = x.row(i);
    for (double& v : z.row(i)) v = atoms[rng.index(atoms.size())];
  }
  return z;
}

std::vector<double> sorted_marginal(const ParticleArray& x, std::size_t i) {
  if (i >= x.rows()) {
    throw UsageError("row index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(x.rows()) + ")");
  }
  std::vector<double> out(x.row(i).begin(), x.row(i).end());
  std::stable_sort(out.begin(), out.end());
  return out;
}

std::vector<double> coordinate_means(const ParticleArray& x) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    out[i] = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  }
  return out;
}

void write_particles_binary(const std::filesystem::path& path, const ParticleArray& x,
                            std::uint64_t seed, std::uint64_t iteration) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const ParticleFileHeader h{x.rows(), x.cols(), seed, iteration};
  out.write(kBinaryMagic, sizeof kBinaryMagic);
  out.write(reinterpret_cast<const char*>(&h), sizeof h);
  out.write(reinterpret_cast<const char*>(x.values().data()),
            static_cast<std::streamsize>(x.values().size() * sizeof(double)));
  if (!out) throw Error("failed writing " + path.string());
}

ParticleFile read_particles_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[sizeof kBinaryMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kBinaryMagic, sizeof magic) != 0) {
    throw Error(path.string() + " is not a particle checkpoint");
  }
  ParticleFile f;
  in.read(reinterpret_cast<char*>(&f.header), sizeof f.header);
  if (!in || f.header.rows == 0 || f.header.cols == 0) throw Error("truncated header in " + path.string());
  std::vector<double> values(f.header.rows * f.header.cols);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw Error("truncated body in " + path.string());
  f.particles = ParticleArray(f.header.rows, f.header.cols, std::move(values));
  return f;
}

void write_particles_csv(const std::filesystem::path& path, const ParticleArray& x,
                         std::uint64_t seed, std::uint64_t iteration) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "m,N,seed,iteration\n"
      << x.rows() << ',' << x.cols() << ',' << seed << ',' << iteration << '\n';
  char buf[32];
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

ParticleFile read_particles_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "m,N,seed,iteration") throw Error(path.string() + ": bad CSV header");
  ParticleFile f;
  char sep = 0;
  std::getline(in, line);
  std::istringstream hs(line);
  hs >> f.header.rows >> sep >> f.header.cols >> sep >> f.header.seed >> sep >> f.header.iteration;
  if (!hs || f.header.rows == 0 || f.header.cols == 0) throw Error(path.string() + ": bad CSV header values");
  std::vector<double> values;
  values.reserve(f.header.rows * f.header.cols);
  for (std::size_t i = 0; i < f.header.rows; ++i) {
    if (!std::getline(in, line)) throw Error(path.string() + ": missing row " + std::to_string(i));
    std::istringstream rs(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(rs, cell, ',')) {
      values.push_back(std::stod(cell));
      ++count;
    }
    if (count != f.header.cols) throw Error(path.string() + ": row " + std::to_string(i) + " has wrong length");
  }
  f.particles = ParticleArray(f.header.rows, f.header.cols, std::move(values));
  return f;
}

}  // namespace pavi
