#pragma once

// Counter-based random streams (Philox4x32-10). A stream is addressed by
// (seed, iteration, role, row) so that every draw of a run is a pure function
// of its coordinates, independent of thread scheduling.

#include <array>
#include <cstddef>
#include <cstdint>

namespace pavi {

enum class StreamRole : std::uint32_t {
  kInit = 1,
  kContext = 2,
  kNoise = 3,
  kReference = 4,
  kCheck = 5,
  kTest = 6,
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t iteration, StreamRole role, std::uint64_t row);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Uniform on {0, ..., n-1}; n > 0.
  std::size_t index(std::size_t n);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;  // 32-bit words consumed from block_
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pavi
