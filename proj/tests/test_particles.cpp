#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "pavi/errors.hpp"
#include "pavi/particles.hpp"
#include "pavi/rng.hpp"
#include "support.hpp"

using namespace pavi;

TEST_CASE("philox known-answer vectors") {
  using W = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == W{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                   {0xffffffff, 0xffffffff}) ==
        W{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                   {0xa4093822, 0x299f31d0}) ==
        W{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are addressed by their coordinates") {
  auto draw = [](std::uint64_t seed, std::uint64_t n, StreamRole role, std::uint64_t row) {
    RngStream s(seed, n, role, row);
    std::vector<std::uint64_t> out;
    for (int k = 0; k < 8; ++k) out.push_back(s.next_u64());
    return out;
  };
  const auto base = draw(1, 2, StreamRole::kNoise, 3);
  CHECK(draw(1, 2, StreamRole::kNoise, 3) == base);
  CHECK(draw(2, 2, StreamRole::kNoise, 3) != base);
  CHECK(draw(1, 3, StreamRole::kNoise, 3) != base);
  CHECK(draw(1, 2, StreamRole::kContext, 3) != base);
  CHECK(draw(1, 2, StreamRole::kNoise, 4) != base);
  // Row/iteration swaps must not alias.
  CHECK(draw(1, 3, StreamRole::kNoise, 2) != draw(1, 2, StreamRole::kNoise, 3));
}

TEST_CASE("uniform, normal and index draws") {
  RngStream s(42, 0, StreamRole::kTest, 0);
  constexpr int kDraws = 200000;
  double sum = 0, sum2 = 0, nsum = 0, nsum2 = 0, nsum4 = 0;
  for (int k = 0; k < kDraws; ++k) {
    const double u = s.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  for (int k = 0; k < kDraws; ++k) {
    const double z = s.normal();
    nsum += z;
    nsum2 += z * z;
    nsum4 += z * z * z * z;
  }
  const double n = kDraws;
  CHECK(std::abs(sum / n - 0.5) < 4 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sum2 / n - 1.0 / 3.0) < 0.005);
  CHECK(std::abs(nsum / n) < 4 / std::sqrt(n));
  CHECK(std::abs(nsum2 / n - 1.0) < 4 * std::sqrt(2.0 / n));
  CHECK(std::abs(nsum4 / n - 3.0) < 4 * std::sqrt(96.0 / n));

  std::vector<double> counts(7, 0.0);
  for (int k = 0; k < 70000; ++k) {
    const auto j = s.index(7);
    REQUIRE(j < 7);
    counts[j] += 1;
  }
  double chi2 = 0;
  for (double c : counts) chi2 += (c - 10000) * (c - 10000) / 10000;
  const boost::math::chi_squared dist(6);
  CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 1e-3);
}

TEST_CASE("init_particles") {
  InitSpec point;
  point.kind = InitSpec::Kind::kPointMass;
  point.point = {0, 0};
  const auto z = init_particles(2, 3, point, 7);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  for (double v : z.values()) CHECK(v == 0.0);

  const InitSpec normal;
  const auto a = init_particles(1, 4, normal, 7);
  const auto b = init_particles(1, 4, normal, 7);
  CHECK(a == b);
  CHECK(init_particles(1, 4, normal, 8) != a);

  try {
    init_particles(2, 1, normal, 0);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("N >= 2 required") != std::string::npos);
  }

  InitSpec explicit_init;
  explicit_init.kind = InitSpec::Kind::kExplicit;
  explicit_init.explicit_values = ParticleArray(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(init_particles(2, 3, explicit_init, 0) == explicit_init.explicit_values);
  CHECK_THROWS_AS(init_particles(2, 4, explicit_init, 0), ConfigError);
  point.point = {0, 0, 0};
  CHECK_THROWS_AS(init_particles(2, 3, point, 0), ConfigError);
}

TEST_CASE("sample_product from a degenerate support") {
  ParticleArray x(3, 1);
  x(0, 0) = 1.5;
  x(1, 0) = -2;
  x(2, 0) = 0.25;
  const auto z = sample_product(x, 50, 1, 0);
  CHECK(z.rows() == 3);
  CHECK(z.cols() == 50);
  for (std::size_t b = 0; b < 50; ++b) CHECK(z.column(b) == x.column(0));
  CHECK_THROWS_AS(sample_product(x, 0, 1, 0), UsageError);
}

TEST_CASE("sample_product draws from the product measure") {
  const ParticleArray x(2, 2, {0, 1, 0, 1});
  constexpr std::size_t kDraws = 100000;
  const auto z = sample_product(x, kDraws, 3, 9);
  std::size_t joint = 0;
  for (std::size_t b = 0; b < kDraws; ++b)
    if (z(0, b) == 0.0 && z(1, b) == 1.0) ++joint;
  CHECK(std::abs(static_cast<double>(joint) / kDraws - 0.25) < 0.01);
}

TEST_CASE("sample_product index law and coordinate independence") {
  constexpr std::size_t kN = 10, kDraws = 100000;
  std::vector<double> row(kN);
  std::iota(row.begin(), row.end(), 0.0);
  std::vector<double> values;
  for (int i = 0; i < 3; ++i) values.insert(values.end(), row.begin(), row.end());
  const ParticleArray x(3, kN, values);
  const auto z = sample_product(x, kDraws, 17, 4);

  const double expected = static_cast<double>(kDraws) / kN;
  const double p = 1.0 / kN;
  const double sigma = std::sqrt(kDraws * p * (1 - p));
  const boost::math::chi_squared dist(kN - 1);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> counts(kN, 0.0);
    for (std::size_t b = 0; b < kDraws; ++b) counts[static_cast<std::size_t>(z(i, b))] += 1;
    double chi2 = 0;
    for (double c : counts) {
      CHECK(std::abs(c - expected) <= 3 * sigma);
      chi2 += (c - expected) * (c - expected) / expected;
    }
    CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 1e-3);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = i + 1; k < 3; ++k) {
      double mi = 0, mk = 0;
      for (std::size_t b = 0; b < kDraws; ++b) {
        mi += z(i, b);
        mk += z(k, b);
      }
      mi /= kDraws;
      mk /= kDraws;
      double cov = 0, vi = 0, vk = 0;
      for (std::size_t b = 0; b < kDraws; ++b) {
        cov += (z(i, b) - mi) * (z(k, b) - mk);
        vi += (z(i, b) - mi) * (z(i, b) - mi);
        vk += (z(k, b) - mk) * (z(k, b) - mk);
      }
      CHECK(std::abs(cov / std::sqrt(vi * vk)) <= 4 / std::sqrt(static_cast<double>(kDraws)));
    }
  }
}

TEST_CASE("sample_product columns are independent across b") {
  // Lag-1 correlation of successive columns in one row.
  const ParticleArray x(1, 5, {0, 1, 2, 3, 4});
  constexpr std::size_t kDraws = 100000;
  const auto z = sample_product(x, kDraws, 5, 0);
  double m = 0;
  for (std::size_t b = 0; b < kDraws; ++b) m += z(0, b);
  m /= kDraws;
  double cov = 0, var = 0;
  for (std::size_t b = 0; b + 1 < kDraws; ++b) cov += (z(0, b) - m) * (z(0, b + 1) - m);
  for (std::size_t b = 0; b < kDraws; ++b) var += (z(0, b) - m) * (z(0, b) - m);
  CHECK(std::abs(cov / var) <= 4 / std::sqrt(static_cast<double>(kDraws)));
}

TEST_CASE("sorted_marginal") {
  const ParticleArray x(3, 3, {3, 1, 2, 1, 1, 0, 1, 2, 3});
  CHECK(sorted_marginal(x, 0) == std::vector<double>{1, 2, 3});
  CHECK(sorted_marginal(x, 1) == std::vector<double>{0, 1, 1});
  CHECK(sorted_marginal(x, 2) == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(sorted_marginal(x, 3), UsageError);
}

TEST_CASE("coordinate_means") {
  const ParticleArray x(2, 2, {0, 2, -1, 1});
  CHECK(coordinate_means(x) == std::vector<double>{1, 0});

  InitSpec point;
  point.kind = InitSpec::Kind::kPointMass;
  point.point = {0.5, -3, 7};
  CHECK(coordinate_means(init_particles(3, 5, point, 0)) == point.point);

  const auto y = init_particles(3, 6, InitSpec{}, 2);
  ParticleArray permuted(3, 6);
  const std::vector<std::size_t> perm{4, 0, 5, 2, 1, 3};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 6; ++j) permuted(i, j) = y(i, perm[j]);
  const auto a = coordinate_means(y), b = coordinate_means(permuted);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));
}

TEST_CASE("particle array basics") {
  CHECK_THROWS_AS(ParticleArray(0, 3), UsageError);
  CHECK_THROWS_AS(ParticleArray(2, 2, {1, 2, 3}), UsageError);
  ParticleArray x(2, 3, 1.0);
  CHECK(x.all_finite());
  x(1, 2) = std::nan("");
  CHECK_FALSE(x.all_finite());
  const ParticleArray y(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(y.column(1) == std::vector<double>{2, 5});
  CHECK(std::vector<double>(y.row(1).begin(), y.row(1).end()) == std::vector<double>{4, 5, 6});
}

TEST_CASE("binary and CSV round trips") {
  test::TempDir dir("particles");
  const auto x = init_particles(3, 17, InitSpec{}, 99);

  write_particles_binary(dir.path() / "x.bin", x, 99, 1234);
  const auto b = read_particles_binary(dir.path() / "x.bin");
  CHECK(b.particles == x);
  CHECK(b.header.rows == 3);
  CHECK(b.header.cols == 17);
  CHECK(b.header.seed == 99);
  CHECK(b.header.iteration == 1234);

  write_particles_csv(dir.path() / "x.csv", x, 99, 1234);
  const auto c = read_particles_csv(dir.path() / "x.csv");
  CHECK(c.particles == x);
  CHECK(c.header.iteration == 1234);

  {
    std::ofstream junk(dir.path() / "junk.bin", std::ios::binary);
    junk << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(read_particles_binary(dir.path() / "junk.bin"), Error);
  CHECK_THROWS_AS(read_particles_binary(dir.path() / "missing.bin"), Error);
}
