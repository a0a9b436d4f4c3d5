#pragma once

// Experiment configuration document (JSON).
//
//   {
//     "potential": {"family": "quadratic" | "perturbed_quadratic",
//                   "A": [[2, 1], [1, 2]]  (or a row-major flat list),
//                   "mean": [1, -1], "weights": [1, 1],
//                   "alpha": .., "lip": .., "third_bound": ..,   (optional overrides)
//                   "conditional_mean": true},                   (optional)
//     "algorithm": "pavi" | "exact",
//     "schedule": "corollary" | {"mode": "explicit", "h": 0.02, "B": 1},
//     "N": 2048, "T": 4000, "seed": 1, "seeds": [..],
//     "metrics_every": 5, "checkpoint_every": 100,
//     "init": "standard_normal" | {"kind": "point_mass", "point": [..]}
//             | {"kind": "file", "path": "particles.bin"},
//     "reference": "analytic" | "oracle" | "none" | {"kind": "oracle", "path": ".."},
//     "oracle": {"grid_points": 1025, "tol": 1e-8, "max_iter": 500, "damping": 1.0},
//     "sweep": {"N": [64, 256, 1024, 4096], "replications": 16, "T": 2000},
//     "output": {"dir": "out"}
//   }

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pavi/dynamics.hpp"
#include "pavi/oracle.hpp"
#include "pavi/particles.hpp"
#include "pavi/potential.hpp"

namespace pavi {

enum class ReferenceKind { kNone, kAnalytic, kOracle };

struct ReferenceSpec {
  ReferenceKind kind = ReferenceKind::kNone;
  std::filesystem::path path;  // oracle document; empty = compute on the fly
};

struct SweepSpec {
  std::vector<std::size_t> particle_counts;
  std::size_t replications = 16;
  std::optional<std::size_t> iterations;
};

struct ExperimentConfig {
  nlohmann::json raw;
  std::string family;
  PotentialPtr potential;
  RunConfig run;
  std::vector<std::uint64_t> seeds;
  InitSpec init;
  ReferenceSpec reference;
  FixedPointOptions oracle;
  std::size_t grid_points = kDefaultGridPoints;
  SweepSpec sweep;
  std::filesystem::path output_dir = "pavi_out";
};

// Throws ConfigError describing the first problem found.
PotentialPtr parse_potential(const nlohmann::json& j, std::string* family = nullptr);
ExperimentConfig parse_config(const nlohmann::json& j,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace pavi
