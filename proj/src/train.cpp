#include "hmem/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hmem/errors.hpp"
#include "hmem/memory.hpp"

namespace hmem::model {

Adam::Adam(const ModelParams& like, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ModelParams& params, const ModelParams& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.blocks();
  const auto g = grad.blocks();
  auto m = m_.blocks();
  auto v = v_.blocks();
  if (p.size() != g.size() || p.size() != m.size()) throw ShapeError("Adam: parameter layout changed");
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p[b].size() != g[b].size()) throw ShapeError("Adam: block " + p[b].name + " changed size");
    for (Eigen::Index i = 0; i < p[b].size(); ++i) {
      const double gi = g[b].data[i];
      m[b].data[i] = beta1_ * m[b].data[i] + (1.0 - beta1_) * gi;
      v[b].data[i] = beta2_ * v[b].data[i] + (1.0 - beta2_) * gi * gi;
      p[b].data[i] -= lr_ * (m[b].data[i] / c1) / (std::sqrt(v[b].data[i] / c2) + eps_);
    }
  }
}

double enforce_spectral_guard(Model& model, std::span<const TrainingInstance> batch, const kg::NeighborIndex& index) {
  if (!model.config().harmony_enabled()) return 1.0;
  std::vector<MemoryState> memories;
  memories.reserve(batch.size());
  for (const auto& inst : batch) {
    memories.push_back(query_memory(query_for(inst.triplet, inst.side), model, index, &inst.triplet));
  }
  const double scale = spectral_guard_scale(model, memories);
  if (scale < 1.0) model.mutable_params().harmony.w_global *= scale;
  return scale;
}

std::vector<TrainingInstance> training_instances(std::span<const Triplet> triplets) {
  std::vector<TrainingInstance> out;
  out.reserve(2 * triplets.size());
  for (const auto& t : triplets) {
    out.push_back({t, QuerySide::Left, {}});
    out.push_back({t, QuerySide::Right, {}});
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, std::size_t n_entities, std::size_t n_relations,
                  std::span<const Triplet> train, const kg::NeighborIndex& index, const Validator& validate,
                  int threads, const ProgressFn& progress) {
  cfg.validate();
  return train_from(Model(cfg, init_params(cfg, n_entities, n_relations, cfg.seed)), train, index, validate, threads,
                    progress);
}

TrainResult train_from(Model initial, std::span<const Triplet> train, const kg::NeighborIndex& index,
                       const Validator& validate, int threads, const ProgressFn& progress) {
  const TrainConfig cfg = initial.config();
  if (train.empty()) throw ArgumentError("train: no training triplets");
  if (cfg.n_negatives + 1 > initial.n_entities()) {
    throw ConfigError("n_negatives must be at most the number of entities minus one");
  }

  Model model = std::move(initial);
  Adam adam(model.params(), cfg.learning_rate);
  // Shuffling and negatives use a stream separate from initialization.
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x7472u};
  std::mt19937_64 rng(seq);

  auto instances = training_instances(train);
  TrainResult result;
  result.model = model;
  ModelParams last_good = model.params();
  std::optional<binding::WhiteningStats> last_good_whitening = model.whitening();

  auto diverge = [&](std::string message) {
    result.divergence = std::move(message);
    if (!result.best_valid_mrr) {
      Model fallback(cfg, last_good);
      fallback.set_whitening(last_good_whitening);
      result.model = std::move(fallback);
    }
    return result;
  };

  // Epoch boundaries refresh whitening and apply the spectral guard over every
  // training query, so the saved and validated parameters are stable on the
  // whole training set, not only on the last batch.
  auto settle = [&] {
    model.refresh_whitening();
    enforce_spectral_guard(model, instances, index);
  };
  settle();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(instances.begin(), instances.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < instances.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(instances.size(), start + cfg.batch_size);
      std::span<TrainingInstance> batch(instances.data() + start, end - start);
      for (auto& inst : batch) {
        const EntityId answer = answer_for(inst.triplet, inst.side);
        inst.negatives = sample_negatives(cfg.n_negatives, std::span<const EntityId>(&answer, 1),
                                          model.n_entities(), rng);
      }
      if (cfg.whiten_per_step) model.refresh_whitening();
      try {
        enforce_spectral_guard(model, batch, index);
        const auto bg = compute_gradients(batch, model, index, threads);
        if (!std::isfinite(bg.mean_loss)) return diverge("non-finite training loss at epoch " + std::to_string(epoch));
        last_good = model.params();
        last_good_whitening = model.whitening();
        adam.step(model.mutable_params(), bg.grads.to_dense(model.params()));
        loss_sum += bg.mean_loss * static_cast<double>(batch.size());
      } catch (const NumericError& e) {
        return diverge(e.what());
      }
      if (auto bad = model.params().first_non_finite_block()) {
        return diverge("non-finite parameters in block " + *bad + " at epoch " + std::to_string(epoch));
      }
      for (auto& inst : batch) inst.negatives.clear();
    }

    settle();
    CurvePoint point{epoch, loss_sum / static_cast<double>(instances.size()), std::nullopt};
    if (validate && cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      double mrr = 0.0;
      try {
        mrr = validate(model);
      } catch (const NumericError& e) {
        return diverge(e.what());
      }
      point.valid_mrr = mrr;
      if (!result.best_valid_mrr || mrr > *result.best_valid_mrr) {
        result.best_valid_mrr = mrr;
        result.best_epoch = epoch;
        result.model = model;
      }
    }
    result.curve.push_back(point);
    if (progress) progress(point);
  }

  if (!result.best_valid_mrr) {
    result.model = model;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

}  // namespace hmem::model
