#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hmem/binding.hpp"
#include "hmem/kg_store.hpp"
#include "hmem/memory.hpp"
#include "hmem/types.hpp"

namespace hmem::model {

using binding::Matrix;
using binding::MemoryState;
using binding::Vector;

struct TrainConfig {
  BindingKind binding = BindingKind::Tpr;
  bool implicit = false;
  bool ablate_local_w = false;
  // Unset means "on for CConv, off for TPR".
  std::optional<bool> whiten;
  double whiten_alpha = binding::kDefaultWhiteningAlpha;
  bool whiten_per_step = false;
  double lambda = memory::kInfiniteLambda;
  bool eq8_verbatim = false;
  bool per_relation_w_score = false;
  int d_e = 20;
  int d_r = 5;
  std::size_t k = memory::kDefaultTopK;
  std::size_t n_negatives = 512;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  // 0 disables validation; the final parameters are then returned.
  std::size_t eval_every = 10;

  bool whitening_enabled() const { return whiten.value_or(binding == BindingKind::CConv); }
  bool harmony_enabled() const { return !std::isinf(lambda); }
  memory::HarmonySolve harmony_solve() const {
    return eq8_verbatim ? memory::HarmonySolve::PrintedFormula : memory::HarmonySolve::Stationary;
  }
  Eigen::Index memory_size() const { return binding::memory_size(binding, d_r, d_e); }

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct EmbeddingTable {
  Matrix entities;         // |E| x d_e
  Matrix relations_left;   // |R| x d_r
  Matrix relations_right;  // |R| x d_r

  const Matrix& relations(Direction d) const { return d == Direction::Right ? relations_right : relations_left; }
  Matrix& relations(Direction d) { return d == Direction::Right ? relations_right : relations_left; }
};

// Named view of one contiguous parameter array (column-major as stored by
// Eigen).
template <typename T>
struct BlockView {
  std::string name;
  T* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

struct ModelParams {
  EmbeddingTable embeddings;
  memory::WeightingParams weighting;
  memory::HarmonyParams harmony;
  Matrix implicit_memories;  // |E| x m in implicit mode, else empty

  // Every trainable array in a fixed declared order. Used by the optimizer,
  // checkpoints and gradient checks.
  std::vector<BlockView<double>> blocks();
  std::vector<BlockView<const double>> blocks() const;

  bool all_finite() const;
  // Name of the first block containing a non-finite value, if any.
  std::optional<std::string> first_non_finite_block() const;

  // Zero-valued parameters of identical shape.
  ModelParams zeros_like() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

// Initial parameters: embeddings iid N(0, 1/d); W_score, W_map and W_global iid
// normal with standard deviation 0.1/n for an n x n matrix (W_global then
// symmetrized); biases zero; implicit memories iid N(0, 1/m).
ModelParams init_params(const TrainConfig& cfg, std::size_t n_entities, std::size_t n_relations, std::uint64_t seed);

struct Query {
  EntityId known = 0;
  RelationId relation = 0;
  QuerySide side = QuerySide::Right;

  friend bool operator==(const Query&, const Query&) = default;
};

// The query posed by a training/test triplet from one side, and its answer.
Query query_for(const Triplet& t, QuerySide side);
EntityId answer_for(const Triplet& t, QuerySide side);

class Model {
 public:
  Model() = default;
  Model(TrainConfig config, ModelParams params);

  const TrainConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  std::size_t n_entities() const { return static_cast<std::size_t>(params_.embeddings.entities.rows()); }
  std::size_t n_relations() const { return static_cast<std::size_t>(params_.embeddings.relations_left.rows()); }

  const std::optional<binding::WhiteningStats>& whitening() const { return whitening_; }
  void set_whitening(std::optional<binding::WhiteningStats> stats) { whitening_ = std::move(stats); }
  // Refits whitening statistics from the current embeddings when enabled.
  void refresh_whitening();

  // Embeddings as seen by binding, weighting and scoring: whitened when
  // enabled; TPR relation vectors additionally scaled to unit norm.
  Vector entity_vector(EntityId e) const;
  Vector relation_vector(RelationId r, Direction d) const;
  // Relation vector after whitening but before normalization.
  Vector relation_vector_unnormalized(RelationId r, Direction d) const;

  MemoryState empty_memory() const;

 private:
  TrainConfig config_;
  ModelParams params_;
  std::optional<binding::WhiteningStats> whitening_;
};

// Memory for the known entity of `q`: the implicit row, or the weighted top-k
// superposition of its neighborhood, skipping entries contributed by
// `withhold`.
MemoryState query_memory(const Query& q, const Model& model, const kg::NeighborIndex& index,
                         const Triplet* withhold = nullptr);

// Harmony completion followed by unbinding with the query relation.
Vector probe_memory(const MemoryState& memory, RelationId relation, QuerySide side, const Model& model);

// Spectral guard: the factor s <= 1 such that s * ||W_global||_2 (power
// iteration) * max ||M'||_inf^2 over `memories` is at most 0.9 lambda, which
// bounds every local weight matrix built from those memories below lambda.
// The filter term is 1 when local weights are ablated; s = 1 for lambda = inf.
double spectral_guard_scale(const Model& model, std::span<const MemoryState> memories);

// A copy of `model` with W_global scaled by spectral_guard_scale over the
// memories of `queries` (no withholding); the scale applied is stored in
// `scale` when given.
Model guarded_for(const Model& model, std::span<const Query> queries, const kg::NeighborIndex& index,
                  double* scale = nullptr);

// e_o for a query.
Vector query_output(const Query& q, const Model& model, const kg::NeighborIndex& index,
                    const Triplet* withhold = nullptr);

// Squared Euclidean distance; lower ranks better.
double score(const Vector& e_o, const Vector& e_c);

// Softmax cross-entropy with logits -||e_o - e_c||^2 over {true} + negatives.
double loss(const Vector& e_o, const Vector& true_e, std::span<const Vector> negatives);

// n distinct ids drawn uniformly from [0, n_entities) minus `exclude`.
std::vector<EntityId> sample_negatives(std::size_t n, std::span<const EntityId> exclude, std::size_t n_entities,
                                       std::mt19937_64& rng);

}  // namespace hmem::model
