#include "hmem/gradients.hpp"

#include <algorithm>
#include <cmath>

#include "forward.hpp"
#include "hmem/errors.hpp"
#include "hmem/parallel.hpp"

namespace hmem::model {

namespace {

constexpr std::size_t kShardSize = 16;

void add_row(Gradients::Rows& rows, Eigen::Index row, const Vector& g) {
  auto [it, inserted] = rows.try_emplace(row, g);
  if (!inserted) it->second += g;
}

void add_rows(Gradients::Rows& into, const Gradients::Rows& from) {
  for (const auto& [row, g] : from) add_row(into, row, g);
}

// Adjoint of v -> v / ||v||.
Vector normalize_backward(const Vector& v, const Vector& grad) {
  const double n = v.norm();
  if (n == 0.0) return grad;
  const Vector u = v / n;
  return (grad - u * u.dot(grad)) / n;
}

class Backprop {
 public:
  Backprop(const Model& model, Gradients& grads) : model_(model), cfg_(model.config()), grads_(grads) {}

  void entity(EntityId e, const Vector& grad_effective) {
    Vector g = model_.whitening() ? binding::whiten_backward(grad_effective, *model_.whitening()) : grad_effective;
    add_row(grads_.entities, e, g);
  }

  void relation(RelationId r, Direction d, const Vector& unnormalized, const Vector& grad_effective) {
    Vector g = cfg_.binding == BindingKind::Tpr ? normalize_backward(unnormalized, grad_effective) : grad_effective;
    if (model_.whitening()) g = binding::whiten_backward(g, *model_.whitening());
    add_row(grads_.relations(d), r, g);
  }

  // d(loss)/d(e_o) -> all parameters touched by the query.
  void query(const detail::QueryTrace& t, const Vector& grad_eo) {
    const auto& params = model_.params();
    const Direction probe_dir = probe_direction(t.query.side);

    // Unbinding.
    Vector grad_x;
    Vector grad_rq;
    if (cfg_.binding == BindingKind::Tpr) {
      binding::RowMajorMatrix gx = t.r_q * grad_eo.transpose();
      grad_x = Eigen::Map<const Vector>(gx.data(), gx.size());
      grad_rq = t.completed.matrix() * grad_eo;
    } else {
      grad_x = binding::circular_convolve(grad_eo, t.r_q);
      grad_rq = binding::circular_correlate(grad_eo, t.completed.flat());
    }

    // Harmony completion: x = A^-1 (a M + b bias), A = lambda I - W_i.
    Vector grad_m;
    if (cfg_.harmony_enabled()) {
      const auto& h = params.harmony;
      const auto m = t.memory.size();
      Eigen::LLT<Matrix> system(cfg_.lambda * Matrix::Identity(m, m) - t.w_local);
      const Vector grad_c = system.solve(grad_x);
      const auto rhs = memory::harmony_rhs(cfg_.lambda, cfg_.harmony_solve());
      grad_m = rhs.memory_coef * grad_c;
      grads_.harmony_bias += rhs.bias_coef * grad_c;
      const Matrix grad_w_local = grad_c * t.completed.flat().transpose();
      if (cfg_.ablate_local_w) {
        grads_.w_global += grad_w_local;
      } else {
        const Vector& f = t.filter;
        grads_.w_global += grad_w_local.cwiseProduct(f * f.transpose());
        const Matrix masked = grad_w_local.cwiseProduct(h.w_global);
        const Vector grad_f = masked * f + masked.transpose() * f;
        grads_.w_map += grad_f * t.memory.flat().transpose();
        grads_.b_map += grad_f;
        grad_m += h.w_map.transpose() * grad_f;
      }
    } else {
      grad_m = grad_x;
    }

    if (cfg_.implicit) {
      add_row(grads_.implicit_memories, t.query.known, grad_m);
      relation(t.query.relation, probe_dir, t.r_q_unnormalized, grad_rq);
      return;
    }

    // Weighted superposition and candidate weights.
    const auto de = cfg_.d_e;
    const auto dr = cfg_.d_r;
    const auto slot = static_cast<Eigen::Index>(t.query_slot);
    const Matrix& w_score = params.weighting.matrix_for(t.query_slot);
    Matrix& grad_w_score = grads_.w_score.size() > 1 ? grads_.w_score[t.query_slot] : grads_.w_score[0];
    Vector u(de + dr);
    u << t.e_i, t.r_q;
    Vector grad_u = Vector::Zero(de + dr);

    for (auto idx : t.assembled.selected) {
      const auto& c = t.candidates[idx];
      const auto& entry = t.entries[idx];
      const double w = t.assembled.weights[idx];

      Vector grad_ec;
      Vector grad_rc;
      if (cfg_.binding == BindingKind::Tpr) {
        Eigen::Map<const binding::RowMajorMatrix> gb(grad_m.data(), dr, de);
        grad_rc = w * (gb * c.entity);
        grad_ec = w * (gb.transpose() * c.relation);
      } else {
        grad_rc = w * binding::circular_correlate(c.entity, grad_m);
        grad_ec = w * binding::circular_correlate(c.relation, grad_m);
      }

      const double grad_weight = grad_m.dot(c.bound.flat());
      const double grad_logit = grad_weight * w * (1.0 - w);
      if (grad_logit != 0.0) {
        Vector v(de + dr);
        v << c.entity, c.relation;
        grad_w_score += grad_logit * u * v.transpose();
        grads_.b_score.row(slot) += grad_logit * v.transpose();
        grad_u += grad_logit * (w_score * v);
        const Vector grad_v = grad_logit * (w_score.transpose() * u + params.weighting.b_score.row(slot).transpose());
        grad_ec += grad_v.head(de);
        grad_rc += grad_v.tail(dr);
      }

      entity(entry.neighbor, grad_ec);
      relation(entry.relation, entry.direction, t.candidate_rel_unnormalized[idx], grad_rc);
    }

    entity(t.query.known, grad_u.head(de));
    grad_rq += grad_u.tail(dr);
    relation(t.query.relation, probe_dir, t.r_q_unnormalized, grad_rq);
  }

 private:
  const Model& model_;
  const TrainConfig& cfg_;
  Gradients& grads_;
};

struct InstanceOutcome {
  double loss;
  Vector grad_eo;
  std::vector<Vector> grad_candidates;  // true first, then negatives
};

// Softmax cross-entropy with logits -||e_o - e_c||^2 and its gradients.
InstanceOutcome loss_and_grad(const Vector& e_o, const std::vector<Vector>& candidates) {
  const std::size_t n = candidates.size();
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) logits[i] = -score(e_o, candidates[i]);
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += (p[i] = std::exp(logits[i] - top));
  for (auto& x : p) x /= sum;

  InstanceOutcome out;
  out.loss = -(logits[0] - top) + std::log(sum);
  out.grad_eo = Vector::Zero(e_o.size());
  out.grad_candidates.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dl = p[i] - (i == 0 ? 1.0 : 0.0);  // d loss / d logit_i
    const Vector diff = e_o - candidates[i];
    out.grad_eo += -2.0 * dl * diff;
    out.grad_candidates[i] = 2.0 * dl * diff;
  }
  return out;
}

std::vector<Vector> candidate_vectors(const TrainingInstance& inst, const Model& model) {
  std::vector<Vector> out;
  out.reserve(inst.negatives.size() + 1);
  out.push_back(model.entity_vector(answer_for(inst.triplet, inst.side)));
  for (auto n : inst.negatives) out.push_back(model.entity_vector(n));
  return out;
}

void check_finite(const Gradients& g) {
  auto rows_ok = [](const Gradients::Rows& rows) {
    return std::all_of(rows.begin(), rows.end(), [](const auto& kv) { return kv.second.allFinite(); });
  };
  auto fail = [](const char* block) { throw NumericError(std::string("non-finite gradient in block ") + block); };
  if (!rows_ok(g.entities)) fail("entities");
  if (!rows_ok(g.relations_left)) fail("relations_left");
  if (!rows_ok(g.relations_right)) fail("relations_right");
  if (!rows_ok(g.implicit_memories)) fail("implicit_memories");
  for (const auto& w : g.w_score)
    if (!w.allFinite()) fail("w_score");
  if (!g.b_score.allFinite()) fail("b_score");
  if (!g.w_global.allFinite()) fail("w_global");
  if (!g.harmony_bias.allFinite()) fail("harmony_bias");
  if (!g.w_map.allFinite()) fail("w_map");
  if (!g.b_map.allFinite()) fail("b_map");
}

}  // namespace

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  for (const auto& w : params.weighting.w_score) g.w_score.push_back(Matrix::Zero(w.rows(), w.cols()));
  g.b_score = Matrix::Zero(params.weighting.b_score.rows(), params.weighting.b_score.cols());
  g.w_global = Matrix::Zero(params.harmony.w_global.rows(), params.harmony.w_global.cols());
  g.harmony_bias = Vector::Zero(params.harmony.bias.size());
  g.w_map = Matrix::Zero(params.harmony.w_map.rows(), params.harmony.w_map.cols());
  g.b_map = Vector::Zero(params.harmony.b_map.size());
  return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  add_rows(entities, other.entities);
  add_rows(relations_left, other.relations_left);
  add_rows(relations_right, other.relations_right);
  add_rows(implicit_memories, other.implicit_memories);
  for (std::size_t i = 0; i < w_score.size(); ++i) w_score[i] += other.w_score[i];
  b_score += other.b_score;
  w_global += other.w_global;
  harmony_bias += other.harmony_bias;
  w_map += other.w_map;
  b_map += other.b_map;
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto* rows : {&entities, &relations_left, &relations_right, &implicit_memories})
    for (auto& [row, g] : *rows) g *= s;
  for (auto& w : w_score) w *= s;
  b_score *= s;
  w_global *= s;
  harmony_bias *= s;
  w_map *= s;
  b_map *= s;
  return *this;
}

ModelParams Gradients::to_dense(const ModelParams& like) const {
  ModelParams d = like.zeros_like();
  auto scatter = [](Matrix& dense, const Rows& rows) {
    for (const auto& [row, g] : rows) dense.row(row) += g.transpose();
  };
  scatter(d.embeddings.entities, entities);
  scatter(d.embeddings.relations_left, relations_left);
  scatter(d.embeddings.relations_right, relations_right);
  if (d.implicit_memories.size() > 0) scatter(d.implicit_memories, implicit_memories);
  d.weighting.w_score = w_score;
  d.weighting.b_score = b_score;
  d.harmony.w_global = 0.5 * (w_global + w_global.transpose());
  d.harmony.bias = harmony_bias;
  d.harmony.w_map = w_map;
  d.harmony.b_map = b_map;
  return d;
}

BatchGradients compute_gradients(std::span<const TrainingInstance> batch, const Model& model,
                                 const kg::NeighborIndex& index, int threads) {
  if (batch.empty()) throw ArgumentError("compute_gradients: empty batch");
  const std::size_t n_shards = (batch.size() + kShardSize - 1) / kShardSize;
  std::vector<Gradients> shard_grads(n_shards, Gradients::zeros_like(model.params()));
  std::vector<double> shard_loss(n_shards, 0.0);

  parallel_for(n_shards, threads, [&](std::size_t s) {
    Backprop bp(model, shard_grads[s]);
    const std::size_t end = std::min(batch.size(), (s + 1) * kShardSize);
    for (std::size_t i = s * kShardSize; i < end; ++i) {
      const auto& inst = batch[i];
      if (inst.negatives.empty()) throw ArgumentError("training instance without negatives");
      const auto trace = detail::trace_query(query_for(inst.triplet, inst.side), model, index, &inst.triplet);
      const auto candidates = candidate_vectors(inst, model);
      const auto outcome = loss_and_grad(trace.e_o, candidates);
      shard_loss[s] += outcome.loss;
      bp.entity(answer_for(inst.triplet, inst.side), outcome.grad_candidates[0]);
      for (std::size_t j = 0; j < inst.negatives.size(); ++j) bp.entity(inst.negatives[j], outcome.grad_candidates[j + 1]);
      bp.query(trace, outcome.grad_eo);
    }
  });

  BatchGradients out;
  out.grads = Gradients::zeros_like(model.params());
  double total = 0.0;
  for (std::size_t s = 0; s < n_shards; ++s) {
    out.grads += shard_grads[s];
    total += shard_loss[s];
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  out.grads *= scale;
  out.mean_loss = total * scale;
  check_finite(out.grads);
  return out;
}

double batch_loss(std::span<const TrainingInstance> batch, const Model& model, const kg::NeighborIndex& index) {
  if (batch.empty()) throw ArgumentError("batch_loss: empty batch");
  double total = 0.0;
  for (const auto& inst : batch) {
    const auto e_o = query_output(query_for(inst.triplet, inst.side), model, index, &inst.triplet);
    const auto candidates = candidate_vectors(inst, model);
    total += loss(e_o, candidates[0], std::span<const Vector>(candidates).subspan(1));
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace hmem::model
