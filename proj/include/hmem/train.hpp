#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hmem/gradients.hpp"
#include "hmem/kg_store.hpp"
#include "hmem/model.hpp"

namespace hmem::model {

// Adam with bias correction over every parameter block.
class Adam {
 public:
  Adam(const ModelParams& like, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ModelParams& params, const ModelParams& grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ModelParams m_;
  ModelParams v_;
};

// Rescales W_global so that its spectral norm estimate times the largest
// squared filter entry among `batch` memories is at most 0.9 lambda. With the
// local weights ablated the factor is 1. No-op for lambda = inf. Returns the
// scale applied (1 when untouched).
double enforce_spectral_guard(Model& model, std::span<const TrainingInstance> batch, const kg::NeighborIndex& index);

// Both query sides of every triplet, in order.
std::vector<TrainingInstance> training_instances(std::span<const Triplet> triplets);

struct CurvePoint {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> valid_mrr;
};

struct TrainResult {
  Model model;  // best-validation parameters, or the final ones without validation
  std::vector<CurvePoint> curve;
  std::optional<double> best_valid_mrr;
  std::size_t best_epoch = 0;
  // Set when training stopped on a non-finite loss, gradient or parameter;
  // `model` then holds the last good parameters.
  std::optional<std::string> divergence;
};

// Validation MRR of a model; called every `eval_every` epochs.
using Validator = std::function<double(const Model&)>;
using ProgressFn = std::function<void(const CurvePoint&)>;

// Trains from fresh parameters on `train`, whose neighborhoods come from
// `index`. Deterministic given cfg.seed; independent of `threads`.
TrainResult train(const TrainConfig& cfg, std::size_t n_entities, std::size_t n_relations,
                  std::span<const Triplet> train, const kg::NeighborIndex& index, const Validator& validate = {},
                  int threads = 1, const ProgressFn& progress = {});

// Same, continuing from given initial parameters.
TrainResult train_from(Model initial, std::span<const Triplet> train, const kg::NeighborIndex& index,
                       const Validator& validate = {}, int threads = 1, const ProgressFn& progress = {});

}  // namespace hmem::model
