#pragma once

#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hmem/binding.hpp"
#include "hmem/types.hpp"

namespace hmem::memory {

using binding::Matrix;
using binding::MemoryState;
using binding::Vector;

inline constexpr double kInfiniteLambda = std::numeric_limits<double>::infinity();
inline constexpr std::size_t kDefaultTopK = 200;

// Candidate-neighbor scoring parameters. `w_score` holds one shared
// (d_e + d_r)^2 matrix, or one per (relation, direction) slot when scoring is
// per-relation. `b_score` has one row per slot (2|R| rows).
struct WeightingParams {
  std::vector<Matrix> w_score;
  Matrix b_score;

  bool per_slot_matrix() const { return w_score.size() > 1; }
  const Matrix& matrix_for(std::size_t slot) const { return per_slot_matrix() ? w_score.at(slot) : w_score.at(0); }
};

struct HarmonyParams {
  Matrix w_global;  // m x m, symmetric
  Vector bias;      // m
  Matrix w_map;     // m x m
  Vector b_map;     // m
  double lambda = kInfiniteLambda;
};

// How the completed memory is obtained from the stationary-point system.
// Stationary solves (lambda I - W) x = lambda M + b/2, the maximizer of the
// quadratic Harmony objective. PrintedFormula solves
// x = (W - lambda I)^(-1) (2 lambda M + b) instead.
enum class HarmonySolve { Stationary, PrintedFormula };

// Logit of the candidate weight:
// (e_i + r_q)^T W (e_c + r_c) + b[slot]^T (e_c + r_c), with + meaning concatenation.
double candidate_logit(const Vector& e_i, const Vector& r_q, const Vector& e_c, const Vector& r_c,
                       const WeightingParams& params, std::size_t query_slot);

double sigmoid(double z);

double candidate_weight(const Vector& e_i, const Vector& r_q, const Vector& e_c, const Vector& r_c,
                        const WeightingParams& params, std::size_t query_slot);

struct Candidate {
  Vector relation;  // r_c
  Vector entity;    // e_c
  MemoryState bound;
  // Sort key for tie-breaking: (relation id, direction, entity id).
  RelationId relation_id = 0;
  Direction direction = Direction::Left;
  EntityId entity_id = 0;
};

struct AssembledMemory {
  MemoryState state;
  std::vector<double> weights;          // one per candidate, input order
  std::vector<std::size_t> selected;    // indices into the candidate list, by descending weight
};

// Weights every candidate, keeps the k heaviest (ties by ascending
// (relation, direction, entity)) and sums weight * binding. No candidates
// gives a zero memory of `empty_shape`.
AssembledMemory assemble_memory(const Vector& e_i, const Vector& r_q, const std::vector<Candidate>& candidates,
                                const WeightingParams& params, std::size_t query_slot, std::size_t k,
                                const MemoryState& empty_shape);

// Indices of the top-k weights, ties broken by position (callers pass
// candidates already sorted by id).
std::vector<std::size_t> top_k_by_weight(const std::vector<double>& weights, std::size_t k);

// M' = W_map * flat(M) + b_map
Vector filter_vector(const Vector& memory_flat, const HarmonyParams& params);

// W_i = (M' M'^T) elementwise-times W_global
Matrix local_weight_matrix(const MemoryState& memory, const HarmonyParams& params);
Matrix local_weight_matrix(const Vector& filter, const Matrix& w_global);

// Completed memory. lambda = +inf returns the input unchanged. Otherwise
// requires lambda > ||W_i||_2 (StabilityError if not).
MemoryState harmony_complete(const MemoryState& memory, const Matrix& w_local, const Vector& bias, double lambda,
                             HarmonySolve solve = HarmonySolve::Stationary);

// Coefficients (a, b) such that the right-hand side is a * flat(M) + b * bias
// and the system matrix is lambda I - W_i.
struct HarmonyRhs {
  double memory_coef;
  double bias_coef;
};
HarmonyRhs harmony_rhs(double lambda, HarmonySolve solve);

// The quadratic Harmony objective, with the bias term read as b^T m:
// 0.5 (m^T W m + b^T m) - lambda/2 ||M - m||^2
double harmony_value(const Vector& memory_flat, const Vector& m, const Matrix& w, const Vector& bias, double lambda);

// Largest |eigenvalue| estimate of a symmetric matrix by power iteration.
double spectral_norm_estimate(const Matrix& w, int iterations = 50);

// Exact check that all eigenvalues of symmetric `w` lie in (-lambda, lambda).
bool spectrally_bounded(const Matrix& w, double lambda);

}  // namespace hmem::memory
