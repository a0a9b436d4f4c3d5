#include "pavi/config.hpp"

#include <cmath>
#include <fstream>

#include "pavi/errors.hpp"

namespace pavi {

using nlohmann::json;

namespace {

std::vector<double> number_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be a list of numbers");
  std::vector<double> out;
  for (const auto& e : j) {
    if (!e.is_number()) throw ConfigError(what + " must contain only numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

Eigen::MatrixXd parse_matrix(const json& j, std::size_t dim_hint) {
  if (!j.is_array() || j.empty()) throw ConfigError("potential.A must be a non-empty list");
  if (j.front().is_array()) {
    const auto rows = j.size();
    Eigen::MatrixXd a(rows, rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = number_list(j[r], "potential.A row");
      if (row.size() != rows) throw ConfigError("potential.A must be square");
      for (std::size_t c = 0; c < rows; ++c) a(r, c) = row[c];
    }
    return a;
  }
  const auto flat = number_list(j, "potential.A");
  std::size_t dim = dim_hint;
  if (dim == 0) dim = static_cast<std::size_t>(std::llround(std::sqrt(flat.size())));
  if (dim * dim != flat.size()) {
    throw ConfigError("potential.A has " + std::to_string(flat.size()) +
                      " entries, which is not a square row-major matrix");
  }
  Eigen::MatrixXd a(dim, dim);
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) a(r, c) = flat[r * dim + c];
  return a;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

std::size_t positive_count(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

PotentialPtr parse_potential(const json& j, std::string* family_out) {
  if (!j.is_object()) throw ConfigError("config needs a 'potential' object");
  const std::string family = get_or<std::string>(j, "family", "");
  if (family_out) *family_out = family;
  std::size_t dim = positive_count(j, "dimension", 0);
  if (!j.contains("A")) throw ConfigError("potential.A is required");
  const Eigen::MatrixXd a = parse_matrix(j.at("A"), dim);
  dim = static_cast<std::size_t>(a.rows());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  if (j.contains("mean")) mean = to_vector(number_list(j.at("mean"), "potential.mean"));

  ConstantOverrides ov;
  if (j.contains("alpha")) ov.alpha = get_or<double>(j, "alpha", 0.0);
  if (j.contains("lip")) ov.lip = get_or<double>(j, "lip", 0.0);
  if (j.contains("L")) ov.lip = get_or<double>(j, "L", 0.0);
  if (j.contains("third_bound")) ov.third_bound = get_or<double>(j, "third_bound", 0.0);

  PotentialPtr out;
  if (family == "quadratic") {
    out = std::make_shared<QuadraticPotential>(a, mean, ov);
  } else if (family == "perturbed_quadratic") {
    if (!j.contains("weights")) throw ConfigError("perturbed_quadratic needs 'weights'");
    out = std::make_shared<PerturbedQuadraticPotential>(
        a, mean, to_vector(number_list(j.at("weights"), "potential.weights")), ov);
  } else {
    throw ConfigError("unknown potential family '" + family +
                      "' (expected quadratic or perturbed_quadratic)");
  }
  if (!get_or<bool>(j, "conditional_mean", true)) out = std::make_shared<OpaquePotential>(out);
  return out;
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  ExperimentConfig cfg;
  cfg.raw = j;
  if (!j.contains("potential")) throw ConfigError("config needs a 'potential' object");
  cfg.potential = parse_potential(j.at("potential"), &cfg.family);
  const std::size_t m = cfg.potential->dimension();

  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  const std::string algorithm = get_or<std::string>(j, "algorithm", "pavi");
  if (algorithm == "pavi") cfg.run.algorithm = Algorithm::kPavi;
  else if (algorithm == "exact") cfg.run.algorithm = Algorithm::kExact;
  else throw ConfigError("algorithm must be 'pavi' or 'exact', got '" + algorithm + "'");

  cfg.run.particles = positive_count(j, "N", 0);
  cfg.run.iterations = positive_count(j, "T", 0);
  cfg.run.seed = get_or<std::uint64_t>(j, "seed", 0);
  cfg.run.metrics_every = positive_count(j, "metrics_every", 0);
  cfg.run.checkpoint_every = positive_count(j, "checkpoint_every", 0);

  const json schedule = j.contains("schedule") ? j.at("schedule") : json("corollary");
  std::string mode = schedule.is_string() ? schedule.get<std::string>()
                                          : get_or<std::string>(schedule, "mode", "explicit");
  if (mode == "corollary") {
    cfg.run.schedule = Schedule::kCorollary;
  } else if (mode == "explicit") {
    cfg.run.schedule = Schedule::kExplicit;
    const json& src = schedule.is_object() ? schedule : j;
    if (!src.contains("h")) throw ConfigError("explicit schedule needs a step size 'h'");
    cfg.run.h = get_or<double>(src, "h", 0.0);
    cfg.run.batch = positive_count(src, "B", cfg.run.algorithm == Algorithm::kExact ? 1 : 0);
    if (cfg.run.algorithm == Algorithm::kPavi && !src.contains("B")) {
      throw ConfigError("explicit schedule needs a batch size 'B'");
    }
  } else {
    throw ConfigError("schedule must be 'corollary' or 'explicit', got '" + mode + "'");
  }

  if (j.contains("seeds")) {
    cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {});
    if (cfg.seeds.empty()) throw ConfigError("'seeds' must not be empty");
  }

  if (j.contains("init")) {
    const json& init = j.at("init");
    const std::string kind = init.is_string() ? init.get<std::string>()
                                              : get_or<std::string>(init, "kind", "");
    if (kind == "standard_normal") {
      cfg.init.kind = InitSpec::Kind::kStandardNormal;
    } else if (kind == "point_mass") {
      cfg.init.kind = InitSpec::Kind::kPointMass;
      cfg.init.point = init.is_object() && init.contains("point")
                           ? number_list(init.at("point"), "init.point")
                           : std::vector<double>(m, 0.0);
    } else if (kind == "file") {
      cfg.init.kind = InitSpec::Kind::kExplicit;
      const auto path = resolve(get_or<std::string>(init, "path", ""));
      cfg.init.explicit_values = path.extension() == ".csv"
                                     ? read_particles_csv(path).particles
                                     : read_particles_binary(path).particles;
    } else {
      throw ConfigError("init must be standard_normal, point_mass or file, got '" + kind + "'");
    }
  }

  if (j.contains("reference")) {
    const json& ref = j.at("reference");
    const std::string kind = ref.is_string() ? ref.get<std::string>()
                                             : get_or<std::string>(ref, "kind", "none");
    if (kind == "none") cfg.reference.kind = ReferenceKind::kNone;
    else if (kind == "analytic") cfg.reference.kind = ReferenceKind::kAnalytic;
    else if (kind == "oracle") cfg.reference.kind = ReferenceKind::kOracle;
    else throw ConfigError("reference must be analytic, oracle or none, got '" + kind + "'");
    if (ref.is_object() && ref.contains("path")) {
      cfg.reference.path = resolve(ref.at("path").get<std::string>());
    }
    if (cfg.reference.kind == ReferenceKind::kAnalytic && cfg.family != "quadratic") {
      throw ConfigError("analytic reference is only available for the quadratic family");
    }
  }

  if (j.contains("oracle")) {
    const json& o = j.at("oracle");
    cfg.grid_points = positive_count(o, "grid_points", kDefaultGridPoints);
    cfg.oracle.tol = get_or<double>(o, "tol", cfg.oracle.tol);
    cfg.oracle.max_iter = positive_count(o, "max_iter", cfg.oracle.max_iter);
    cfg.oracle.damping = get_or<double>(o, "damping", cfg.oracle.damping);
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    cfg.sweep.particle_counts = get_or<std::vector<std::size_t>>(s, "N", {});
    cfg.sweep.replications = positive_count(s, "replications", cfg.sweep.replications);
    if (s.contains("T")) cfg.sweep.iterations = positive_count(s, "T", 0);
  }

  if (j.contains("output")) {
    const json& o = j.at("output");
    const std::string dir = o.is_string() ? o.get<std::string>() : get_or<std::string>(o, "dir", "");
    if (!dir.empty()) cfg.output_dir = dir;
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace pavi
