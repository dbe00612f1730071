#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "hmem/binding.hpp"

namespace hmem::capacity {

using binding::Matrix;

struct CapacityConfig {
  std::size_t n_entities = 100;
  int d_e = 100;
  std::size_t n_relations = 20;
  int d_r = 20;
  std::vector<std::size_t> n_bindings = {1, 2, 5, 10, 20, 50, 100, 200};
  std::size_t trials = 1000;
  std::uint64_t seed = 0;

  // ConfigError unless all counts and dims are positive.
  void validate() const;
};

// Keys as in the struct; missing keys keep defaults, unknown keys are a
// ConfigError.
CapacityConfig capacity_config_from_json(const nlohmann::json& j);

struct CapacityPoint {
  std::size_t n_bindings = 0;
  double hits_at_1 = 0.0;
  std::size_t trials = 0;
};

// Monte Carlo retrieval accuracy of a TPR memory holding n random bindings.
// Each trial draws fresh N(0, 1/d) pools (relations then scaled to unit
// norm), binds n (relation, entity) pairs chosen uniformly with replacement,
// probes with a relation chosen uniformly among those stored, and counts a
// hit when the nearest pool entity (lowest id on ties) is one of the
// entities stored with that relation. Trial t of grid point p draws from
// seed_seq{seed, p, t}, so results do not depend on `threads`.
std::vector<CapacityPoint> simulate_tpr_capacity(const CapacityConfig& cfg, int threads = 1);

void write_capacity_csv(std::span<const CapacityPoint> points, const std::filesystem::path& path);

struct OptimalMemoryReport {
  Matrix least_squares;   // d_r x d_e minimizer of sum_p p ||e - M^T r||^2
  Matrix superposition;   // sum_p p r (x) e
  double fitted_scale = 0.0;     // <M*, S> / <S, S>
  double predicted_scale = 0.0;  // d_r: the inverse second moment of the relations
  double max_abs_error = 0.0;    // ||M* - predicted * S||_inf
  bool passed(double tol = 1e-8) const { return max_abs_error < tol; }
};

// Pairs (r_i, e_i), i < n_pairs, with relations cycling through an
// orthonormal basis of R^d_r (so every relation is used n_pairs / d_r times
// and the relation second moment is I / d_r) and Gaussian entities, under a
// uniform distribution. ConfigError when n_pairs is not a positive multiple
// of d_r, since the relation second moment is then rank deficient or not
// isotropic.
OptimalMemoryReport optimal_memory_check(std::size_t n_pairs, int d_e, int d_r, std::uint64_t seed);

}  // namespace hmem::capacity
