#include "hmem/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "hmem/errors.hpp"
#include "hmem/parallel.hpp"

namespace hmem::eval {

namespace {

const std::unordered_set<EntityId> kNoAnswers;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

}  // namespace

std::uint64_t FilterSet::key(const Query& q) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(q.known)) << 32) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(q.relation)) << 1) |
         (q.side == QuerySide::Right ? 1u : 0u);
}

void FilterSet::insert(std::span<const Triplet> triplets) {
  for (const auto& t : triplets) {
    if (!triplets_.insert(t).second) continue;
    answers_[key(model::query_for(t, QuerySide::Right))].insert(t.tail);
    answers_[key(model::query_for(t, QuerySide::Left))].insert(t.head);
  }
}

const std::unordered_set<EntityId>& FilterSet::answers(const Query& q) const {
  auto it = answers_.find(key(q));
  return it == answers_.end() ? kNoAnswers : it->second;
}

RankedResult rank_output(const Vector& e_o, const Query& q, EntityId true_e, const Model& model,
                         const FilterSet& filter, std::span<const EntityId> candidates) {
  if (std::find(candidates.begin(), candidates.end(), true_e) == candidates.end()) {
    throw ProtocolError("true entity " + std::to_string(true_e) + " is not among the candidates");
  }
  const double true_score = model::score(e_o, model.entity_vector(true_e));
  const auto& attested = filter.answers(q);
  std::size_t better = 0, ties = 0, raw_better = 0, raw_ties = 0, kept = 1;
  for (auto c : candidates) {
    if (c == true_e) continue;
    const double s = model::score(e_o, model.entity_vector(c));
    const bool is_better = s < true_score;
    const bool is_tie = s == true_score;
    raw_better += is_better;
    raw_ties += is_tie;
    if (attested.contains(c)) continue;
    ++kept;
    better += is_better;
    ties += is_tie;
  }
  RankedResult r;
  r.query = q;
  r.true_entity = true_e;
  r.rank = 1.0 + static_cast<double>(better) + 0.5 * static_cast<double>(ties);
  r.raw_rank = 1.0 + static_cast<double>(raw_better) + 0.5 * static_cast<double>(raw_ties);
  r.n_candidates = kept;
  return r;
}

RankedResult rank_query(const Query& q, EntityId true_e, const Model& model, const kg::NeighborIndex& index,
                        const FilterSet& filter, std::span<const EntityId> candidates) {
  return rank_output(model::query_output(q, model, index), q, true_e, model, filter, candidates);
}

Metrics compute_metrics(std::span<const RankedResult> results) {
  if (results.empty()) throw ArgumentError("no ranked queries to aggregate");
  Metrics m;
  m.n_queries = results.size();
  for (const auto& r : results) {
    m.mr += r.rank;
    m.mrr += 1.0 / r.rank;
    m.hits_at_1 += r.rank <= 1.0;
    m.hits_at_3 += r.rank <= 3.0;
    m.hits_at_10 += r.rank <= 10.0;
  }
  const double n = static_cast<double>(results.size());
  m.mr /= n;
  m.mrr /= n;
  m.hits_at_1 /= n;
  m.hits_at_3 /= n;
  m.hits_at_10 /= n;
  return m;
}

Evaluation evaluate(std::span<const Triplet> test, const Model& model, const kg::NeighborIndex& index,
                    const FilterSet& filter, int threads) {
  if (test.empty()) throw ArgumentError("evaluate: empty test set");
  std::vector<EntityId> all(model.n_entities());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<EntityId>(i);
  std::vector<Query> queries;
  queries.reserve(2 * test.size());
  for (const auto& t : test) {
    queries.push_back(model::query_for(t, QuerySide::Left));
    queries.push_back(model::query_for(t, QuerySide::Right));
  }
  Evaluation ev;
  const Model guarded = model::guarded_for(model, queries, index, &ev.w_global_scale);
  ev.results.resize(queries.size());
  parallel_for(ev.results.size(), threads, [&](std::size_t i) {
    const auto& t = test[i / 2];
    const auto side = i % 2 == 0 ? QuerySide::Left : QuerySide::Right;
    ev.results[i] = rank_query(queries[i], model::answer_for(t, side), guarded, index, filter, all);
  });
  ev.metrics = compute_metrics(ev.results);
  return ev;
}

std::vector<Triplet> inference_pool(std::span<const Triplet> triplets, std::uint64_t seed) {
  std::vector<Triplet> pool(triplets.begin(), triplets.end());
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  return pool;
}

MemoryState heldout_memory(EntityId entity, std::span<const Triplet> pool, const Model& model) {
  std::vector<kg::NeighborEntry> entries;
  for (const auto& t : pool) {
    for (const auto& e : kg::entries_of(t, entity)) entries.push_back(e);
  }
  const auto& cfg = model.config();
  const std::size_t skip = entries.size() > cfg.k ? entries.size() - cfg.k : 0;
  MemoryState m = model.empty_memory();
  for (std::size_t i = skip; i < entries.size(); ++i) {
    const auto& e = entries[i];
    m += binding::bind(cfg.binding, model.relation_vector(e.relation, e.direction), model.entity_vector(e.neighbor));
  }
  return m;
}

std::vector<GenFractionResult> evaluate_gen(std::span<const EntityId> heldout, std::span<const Triplet> pool,
                                            std::span<const Triplet> test, const Model& model,
                                            const FilterSet& filter, std::span<const double> fractions,
                                            int threads) {
  if (test.empty()) throw ArgumentError("evaluate_gen: empty test set");
  std::vector<bool> is_heldout(model.n_entities(), false);
  for (auto h : heldout) {
    if (h < 0 || static_cast<std::size_t>(h) >= model.n_entities()) throw IndexError("held-out entity out of range");
    is_heldout[static_cast<std::size_t>(h)] = true;
  }
  std::vector<EntityId> held_in;
  for (std::size_t e = 0; e < model.n_entities(); ++e)
    if (!is_heldout[e]) held_in.push_back(static_cast<EntityId>(e));

  // Query from the held-out side; the answer is held-in.
  std::vector<std::pair<Query, EntityId>> queries;
  queries.reserve(test.size());
  for (const auto& t : test) {
    const bool head_out = is_heldout.at(static_cast<std::size_t>(t.head));
    const bool tail_out = is_heldout.at(static_cast<std::size_t>(t.tail));
    if (head_out == tail_out) throw ArgumentError("test triplet must touch exactly one held-out entity");
    const auto side = head_out ? QuerySide::Right : QuerySide::Left;
    queries.emplace_back(model::query_for(t, side), model::answer_for(t, side));
  }

  std::vector<GenFractionResult> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ArgumentError("fractions must lie in (0, 1]");
    GenFractionResult r;
    r.fraction = f;
    r.pool_size = static_cast<std::size_t>(std::llround(f * static_cast<double>(pool.size())));
    const auto prefix = pool.first(r.pool_size);

    r.pool_degree.assign(model.n_entities(), 0);
    for (const auto& t : prefix) {
      for (auto e : {t.head, t.tail}) {
        if (is_heldout[static_cast<std::size_t>(e)]) ++r.pool_degree[static_cast<std::size_t>(e)];
      }
    }
    std::vector<EntityId> queried;
    for (const auto& [q, answer] : queries) queried.push_back(q.known);
    std::sort(queried.begin(), queried.end());
    queried.erase(std::unique(queried.begin(), queried.end()), queried.end());
    for (auto e : queried) r.isolated_heldout += r.pool_degree[static_cast<std::size_t>(e)] == 0;

    std::map<EntityId, MemoryState> memories;
    std::vector<MemoryState> memory_list;
    for (auto e : queried) {
      memories.emplace(e, heldout_memory(e, prefix, model));
      memory_list.push_back(memories.at(e));
    }
    Model guarded = model;
    r.evaluation.w_global_scale = model::spectral_guard_scale(model, memory_list);
    if (r.evaluation.w_global_scale < 1.0) guarded.mutable_params().harmony.w_global *= r.evaluation.w_global_scale;

    r.evaluation.results.resize(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t i) {
      const auto& [q, answer] = queries[i];
      const Vector e_o = model::probe_memory(memories.at(q.known), q.relation, q.side, guarded);
      r.evaluation.results[i] = rank_output(e_o, q, answer, guarded, filter, held_in);
    });
    r.evaluation.metrics = compute_metrics(r.evaluation.results);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DegreeBin> degree_binned_mrr(std::span<const RankedResult> results, std::span<const std::size_t> degree,
                                         std::size_t width) {
  if (width == 0) throw ArgumentError("degree bin width must be positive");
  std::map<std::size_t, std::pair<std::size_t, double>> bins;
  for (const auto& r : results) {
    const auto& d = degree[static_cast<std::size_t>(r.query.known)];
    auto& [count, sum] = bins[d / width];
    ++count;
    sum += 1.0 / r.rank;
  }
  std::vector<DegreeBin> out;
  for (const auto& [bin, cs] : bins) out.push_back({bin * width, (bin + 1) * width, cs.first, cs.second / static_cast<double>(cs.first)});
  return out;
}

std::vector<std::size_t> index_degrees(const kg::NeighborIndex& index) {
  std::vector<std::size_t> d(index.n_entities());
  for (std::size_t e = 0; e < d.size(); ++e) d[e] = index.degree(static_cast<EntityId>(e));
  return d;
}

std::string format_number(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

void write_metrics_json(const Metrics& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["n_queries"] = m.n_queries;
  j["mr"] = m.mr;
  j["mrr"] = m.mrr;
  j["hits_at_1"] = m.hits_at_1;
  j["hits_at_3"] = m.hits_at_3;
  j["hits_at_10"] = m.hits_at_10;
  open_out(path) << j.dump(2) << '\n';
}

void write_metrics_csv(std::span<const std::pair<std::string, Metrics>> rows, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "split,n_queries,mr,mrr,hits_at_1,hits_at_3,hits_at_10\n";
  for (const auto& [name, m] : rows) {
    f << name << ',' << m.n_queries << ',' << format_number(m.mr) << ',' << format_number(m.mrr) << ','
      << format_number(m.hits_at_1) << ',' << format_number(m.hits_at_3) << ',' << format_number(m.hits_at_10) << '\n';
  }
}

void write_ranks_tsv(std::span<const RankedResult> results, const kg::Vocab& entities, const kg::Vocab& relations,
                     const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "known\trelation\tside\ttrue\trank\traw_rank\tn_candidates\n";
  for (const auto& r : results) {
    f << entities.symbol(r.query.known) << '\t' << relations.symbol(r.query.relation) << '\t'
      << (r.query.side == QuerySide::Left ? "left" : "right") << '\t' << entities.symbol(r.true_entity) << '\t'
      << format_number(r.rank) << '\t' << format_number(r.raw_rank) << '\t' << r.n_candidates << '\n';
  }
}

void write_degree_bins_csv(std::span<const DegreeBin> bins, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "degree_lo,degree_hi,count,mrr\n";
  for (const auto& b : bins) f << b.lo << ',' << b.hi << ',' << b.count << ',' << format_number(b.mrr) << '\n';
}

void write_fractions_csv(std::span<const GenFractionResult> rows, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "fraction,pool_size,isolated_heldout,n_queries,mr,mrr,hits_at_1,hits_at_3,hits_at_10\n";
  for (const auto& r : rows) {
    const auto& m = r.evaluation.metrics;
    f << format_number(r.fraction) << ',' << r.pool_size << ',' << r.isolated_heldout << ',' << m.n_queries << ','
      << format_number(m.mr) << ',' << format_number(m.mrr) << ',' << format_number(m.hits_at_1) << ','
      << format_number(m.hits_at_3) << ',' << format_number(m.hits_at_10) << '\n';
  }
}

}  // namespace hmem::eval
