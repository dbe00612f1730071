#include "hmem/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "forward.hpp"
#include "hmem/errors.hpp"

namespace hmem::model {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d_e <= 0 || d_r <= 0) fail("d_e and d_r must be positive");
  if (binding == BindingKind::CConv && d_e != d_r) fail("CConv binding requires d_e == d_r");
  if (whitening_enabled() && d_e != d_r) fail("whitening requires d_e == d_r");
  if (!(whiten_alpha >= 0.0 && whiten_alpha <= 1.0)) fail("whiten_alpha must lie in [0, 1]");
  if (!(lambda > 0.0)) fail("lambda must be positive or inf");
  if (k == 0) fail("k must be positive");
  if (n_negatives == 0) fail("n_negatives must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
}

namespace {

template <typename Params, typename T>
std::vector<BlockView<T>> collect_blocks(Params& p) {
  std::vector<BlockView<T>> out;
  auto add = [&out](std::string name, auto& m) { out.push_back({std::move(name), m.data(), m.rows(), m.cols()}); };
  add("entities", p.embeddings.entities);
  add("relations_left", p.embeddings.relations_left);
  add("relations_right", p.embeddings.relations_right);
  for (std::size_t i = 0; i < p.weighting.w_score.size(); ++i) {
    add("w_score[" + std::to_string(i) + "]", p.weighting.w_score[i]);
  }
  add("b_score", p.weighting.b_score);
  add("w_global", p.harmony.w_global);
  add("harmony_bias", p.harmony.bias);
  add("w_map", p.harmony.w_map);
  add("b_map", p.harmony.b_map);
  if (p.implicit_memories.size() > 0) add("implicit_memories", p.implicit_memories);
  return out;
}

}  // namespace

std::vector<BlockView<double>> ModelParams::blocks() { return collect_blocks<ModelParams, double>(*this); }

std::vector<BlockView<const double>> ModelParams::blocks() const {
  return collect_blocks<const ModelParams, const double>(*this);
}

std::optional<std::string> ModelParams::first_non_finite_block() const {
  for (const auto& b : blocks()) {
    if (!Eigen::Map<const Eigen::ArrayXd>(b.data, b.size()).allFinite()) return b.name;
  }
  return std::nullopt;
}

bool ModelParams::all_finite() const { return !first_non_finite_block().has_value(); }

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& b : z.blocks()) Eigen::Map<Eigen::ArrayXd>(b.data, b.size()).setZero();
  z.harmony.lambda = harmony.lambda;
  return z;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  const auto ba = a.blocks();
  const auto bb = b.blocks();
  if (ba.size() != bb.size()) return false;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (ba[i].name != bb[i].name || ba[i].rows != bb[i].rows || ba[i].cols != bb[i].cols) return false;
    if (!std::equal(ba[i].data, ba[i].data + ba[i].size(), bb[i].data)) return false;
  }
  return a.harmony.lambda == b.harmony.lambda ||
         (std::isinf(a.harmony.lambda) && std::isinf(b.harmony.lambda));
}

ModelParams init_params(const TrainConfig& cfg, std::size_t n_entities, std::size_t n_relations, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto gaussian = [&rng](Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
  };

  const auto ne = static_cast<Eigen::Index>(n_entities);
  const auto nr = static_cast<Eigen::Index>(n_relations);
  const Eigen::Index de = cfg.d_e;
  const Eigen::Index dr = cfg.d_r;
  const Eigen::Index joint = de + dr;
  const Eigen::Index m = cfg.memory_size();

  ModelParams p;
  p.embeddings.entities = gaussian(ne, de, 1.0 / std::sqrt(static_cast<double>(de)));
  p.embeddings.relations_left = gaussian(nr, dr, 1.0 / std::sqrt(static_cast<double>(dr)));
  p.embeddings.relations_right = gaussian(nr, dr, 1.0 / std::sqrt(static_cast<double>(dr)));

  const std::size_t n_w = cfg.per_relation_w_score ? 2 * n_relations : 1;
  for (std::size_t i = 0; i < std::max<std::size_t>(n_w, 1); ++i) {
    p.weighting.w_score.push_back(gaussian(joint, joint, 0.1 / static_cast<double>(joint)));
  }
  p.weighting.b_score = Matrix::Zero(2 * nr, joint);

  Matrix g = gaussian(m, m, 0.1 / static_cast<double>(m));
  p.harmony.w_global = 0.5 * (g + g.transpose());
  p.harmony.bias = Vector::Zero(m);
  p.harmony.w_map = gaussian(m, m, 0.1 / static_cast<double>(m));
  p.harmony.b_map = Vector::Zero(m);
  p.harmony.lambda = cfg.lambda;

  if (cfg.implicit) p.implicit_memories = gaussian(ne, m, 1.0 / std::sqrt(static_cast<double>(m)));
  return p;
}

Query query_for(const Triplet& t, QuerySide side) {
  return side == QuerySide::Right ? Query{t.head, t.relation, side} : Query{t.tail, t.relation, side};
}

EntityId answer_for(const Triplet& t, QuerySide side) { return side == QuerySide::Right ? t.tail : t.head; }

Model::Model(TrainConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  params_.harmony.lambda = config_.lambda;
  if (params_.embeddings.entities.cols() != config_.d_e || params_.embeddings.relations_left.cols() != config_.d_r) {
    throw ShapeError("model parameters do not match configured dimensions");
  }
  refresh_whitening();
}

void Model::refresh_whitening() {
  if (!config_.whitening_enabled()) {
    whitening_.reset();
    return;
  }
  const auto& emb = params_.embeddings;
  Matrix stacked(emb.entities.rows() + emb.relations_left.rows() + emb.relations_right.rows(), config_.d_e);
  stacked << emb.entities, emb.relations_left, emb.relations_right;
  whitening_ = binding::fit_whitening(stacked, config_.whiten_alpha);
}

Vector Model::entity_vector(EntityId e) const {
  Vector v = params_.embeddings.entities.row(e).transpose();
  return whitening_ ? binding::whiten(v, *whitening_) : v;
}

Vector Model::relation_vector_unnormalized(RelationId r, Direction d) const {
  Vector v = params_.embeddings.relations(d).row(r).transpose();
  return whitening_ ? binding::whiten(v, *whitening_) : v;
}

Vector Model::relation_vector(RelationId r, Direction d) const {
  Vector v = relation_vector_unnormalized(r, d);
  if (config_.binding == BindingKind::Tpr) {
    const double n = v.norm();
    if (n > 0) v /= n;
  }
  return v;
}

MemoryState Model::empty_memory() const { return MemoryState::zeros(config_.binding, config_.d_r, config_.d_e); }

namespace detail {

std::vector<kg::NeighborEntry> visible_neighbors(EntityId owner, const kg::NeighborIndex& index,
                                                 const Triplet* withhold) {
  auto all = index.neighbors(owner);
  std::vector<kg::NeighborEntry> out(all.begin(), all.end());
  if (withhold) {
    for (const auto& skip : kg::entries_of(*withhold, owner)) {
      out.erase(std::remove(out.begin(), out.end(), skip), out.end());
    }
  }
  return out;
}

void trace_completion(QueryTrace& trace, const Model& model) {
  const auto& cfg = model.config();
  const auto& harmony = model.params().harmony;
  if (cfg.harmony_enabled()) {
    if (cfg.ablate_local_w) {
      trace.w_local = harmony.w_global;
    } else {
      trace.filter = memory::filter_vector(trace.memory.flat(), harmony);
      trace.w_local = memory::local_weight_matrix(trace.filter, harmony.w_global);
    }
    trace.completed = memory::harmony_complete(trace.memory, trace.w_local, harmony.bias, cfg.lambda,
                                               cfg.harmony_solve());
  } else {
    trace.completed = trace.memory;
  }
  trace.e_o = binding::unbind(cfg.binding, trace.r_q, trace.completed);
}

QueryTrace trace_memory(const Query& q, const Model& model, const kg::NeighborIndex& index, const Triplet* withhold) {
  const auto& cfg = model.config();
  if (q.known < 0 || static_cast<std::size_t>(q.known) >= model.n_entities() || q.relation < 0 ||
      static_cast<std::size_t>(q.relation) >= model.n_relations()) {
    throw IndexError("query ids out of range");
  }

  QueryTrace t;
  t.query = q;
  const Direction probe_dir = probe_direction(q.side);
  t.query_slot = slot_index(q.relation, probe_dir);
  t.r_q_unnormalized = model.relation_vector_unnormalized(q.relation, probe_dir);
  t.r_q = model.relation_vector(q.relation, probe_dir);

  if (cfg.implicit) {
    t.memory = MemoryState::from_flat(cfg.binding, cfg.d_r, cfg.d_e,
                                      model.params().implicit_memories.row(q.known).transpose());
  } else {
    if (static_cast<std::size_t>(q.known) >= index.n_entities()) throw IndexError("known entity not in index");
    t.e_i = model.entity_vector(q.known);
    t.entries = visible_neighbors(q.known, index, withhold);
    t.candidates.reserve(t.entries.size());
    t.candidate_rel_unnormalized.reserve(t.entries.size());
    for (const auto& entry : t.entries) {
      memory::Candidate c;
      c.relation = model.relation_vector(entry.relation, entry.direction);
      c.entity = model.entity_vector(entry.neighbor);
      c.bound = binding::bind(cfg.binding, c.relation, c.entity);
      c.relation_id = entry.relation;
      c.direction = entry.direction;
      c.entity_id = entry.neighbor;
      t.candidates.push_back(std::move(c));
      t.candidate_rel_unnormalized.push_back(model.relation_vector_unnormalized(entry.relation, entry.direction));
    }
    t.assembled = memory::assemble_memory(t.e_i, t.r_q, t.candidates, model.params().weighting, t.query_slot, cfg.k,
                                          model.empty_memory());
    t.memory = t.assembled.state;
  }
  return t;
}

QueryTrace trace_query(const Query& q, const Model& model, const kg::NeighborIndex& index, const Triplet* withhold) {
  auto t = trace_memory(q, model, index, withhold);
  trace_completion(t, model);
  return t;
}

}  // namespace detail

MemoryState query_memory(const Query& q, const Model& model, const kg::NeighborIndex& index, const Triplet* withhold) {
  const auto& cfg = model.config();
  if (cfg.implicit) {
    return MemoryState::from_flat(cfg.binding, cfg.d_r, cfg.d_e,
                                  model.params().implicit_memories.row(q.known).transpose());
  }
  return detail::trace_memory(q, model, index, withhold).memory;
}

Vector probe_memory(const MemoryState& memory, RelationId relation, QuerySide side, const Model& model) {
  detail::QueryTrace t;
  const Direction dir = probe_direction(side);
  t.r_q = model.relation_vector(relation, dir);
  t.memory = memory;
  detail::trace_completion(t, model);
  return t.e_o;
}

Vector query_output(const Query& q, const Model& model, const kg::NeighborIndex& index, const Triplet* withhold) {
  return detail::trace_query(q, model, index, withhold).e_o;
}

double spectral_guard_scale(const Model& model, std::span<const MemoryState> memories) {
  const auto& cfg = model.config();
  if (!cfg.harmony_enabled()) return 1.0;
  const auto& harmony = model.params().harmony;
  double filter_sq = 1.0;
  if (!cfg.ablate_local_w) {
    filter_sq = 0.0;
    for (const auto& m : memories) {
      const double f = memory::filter_vector(m.flat(), harmony).cwiseAbs().maxCoeff();
      filter_sq = std::max(filter_sq, f * f);
    }
  }
  const double bound = memory::spectral_norm_estimate(harmony.w_global) * filter_sq;
  const double limit = 0.9 * cfg.lambda;
  return bound > limit ? limit / bound : 1.0;
}

Model guarded_for(const Model& model, std::span<const Query> queries, const kg::NeighborIndex& index, double* scale) {
  Model out = model;
  double s = 1.0;
  if (model.config().harmony_enabled()) {
    std::vector<MemoryState> memories;
    memories.reserve(queries.size());
    for (const auto& q : queries) memories.push_back(query_memory(q, model, index));
    s = spectral_guard_scale(model, memories);
    if (s < 1.0) out.mutable_params().harmony.w_global *= s;
  }
  if (scale) *scale = s;
  return out;
}

double score(const Vector& e_o, const Vector& e_c) { return (e_o - e_c).squaredNorm(); }

double loss(const Vector& e_o, const Vector& true_e, std::span<const Vector> negatives) {
  if (negatives.empty()) throw ArgumentError("loss: negative sample is empty");
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(-score(e_o, true_e));
  for (const auto& n : negatives) logits.push_back(-score(e_o, n));
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  return -(logits[0] - top) + std::log(sum);
}

std::vector<EntityId> sample_negatives(std::size_t n, std::span<const EntityId> exclude, std::size_t n_entities,
                                       std::mt19937_64& rng) {
  std::set<EntityId> excluded;
  for (auto e : exclude) {
    if (e >= 0 && static_cast<std::size_t>(e) < n_entities) excluded.insert(e);
  }
  const std::size_t pool = n_entities - excluded.size();
  if (n > pool) {
    throw ArgumentError("cannot draw " + std::to_string(n) + " negatives from " + std::to_string(pool) +
                        " eligible entities");
  }

  // Floyd's algorithm over ranks 0..pool-1, then map ranks to ids by skipping
  // excluded ids.
  std::set<std::size_t> chosen;
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t j = pool - n; j < pool; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    const std::size_t pick = chosen.insert(t).second ? t : (chosen.insert(j), j);
    order.push_back(pick);
  }

  std::vector<EntityId> out;
  out.reserve(n);
  for (auto rank : order) {
    auto id = static_cast<EntityId>(rank);
    for (auto x : excluded) {
      if (x <= id) {
        ++id;
      } else {
        break;
      }
    }
    out.push_back(id);
  }
  return out;
}

}  // namespace hmem::model
