#pragma once

#include <map>
#include <span>
#include <vector>

#include "hmem/kg_store.hpp"
#include "hmem/model.hpp"

namespace hmem::model {

// One training example: a triplet queried from one side, with its negative
// sample.
struct TrainingInstance {
  Triplet triplet;
  QuerySide side = QuerySide::Right;
  std::vector<EntityId> negatives;
};

// Sparse rows for the embedding-like tables, dense arrays for the rest.
struct Gradients {
  using Rows = std::map<Eigen::Index, Vector>;

  Rows entities;
  Rows relations_left;
  Rows relations_right;
  Rows implicit_memories;
  std::vector<Matrix> w_score;
  Matrix b_score;
  Matrix w_global;
  Vector harmony_bias;
  Matrix w_map;
  Vector b_map;

  static Gradients zeros_like(const ModelParams& params);

  Rows& relations(Direction d) { return d == Direction::Right ? relations_right : relations_left; }

  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);

  // Dense gradient with the same block layout as `like`. The W_global block is
  // symmetrized: (G + G^T) / 2.
  ModelParams to_dense(const ModelParams& like) const;
};

struct BatchGradients {
  double mean_loss = 0.0;
  Gradients grads;
};

// Mean loss over the batch and its exact gradient with respect to every
// parameter block. Whitening statistics, when present, are held constant.
// Work is split into fixed-size shards whose results are summed in shard
// order, so the output does not depend on `threads`.
BatchGradients compute_gradients(std::span<const TrainingInstance> batch, const Model& model,
                                 const kg::NeighborIndex& index, int threads = 1);

// Mean loss only (no backward pass); same withholding rules.
double batch_loss(std::span<const TrainingInstance> batch, const Model& model, const kg::NeighborIndex& index);

}  // namespace hmem::model
