#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hmem/kg_store.hpp"
#include "hmem/model.hpp"

namespace hmem::eval {

using model::Model;
using model::Query;
using binding::MemoryState;
using binding::Vector;

// Attested triplets, indexed by (known entity, relation, side) for filtering.
class FilterSet {
 public:
  FilterSet() = default;
  explicit FilterSet(std::span<const Triplet> triplets) { insert(triplets); }

  void insert(std::span<const Triplet> triplets);
  bool contains(const Triplet& t) const { return triplets_.contains(t); }
  // Entities c such that the query's triplet completed with c is attested.
  const std::unordered_set<EntityId>& answers(const Query& q) const;
  std::size_t size() const { return triplets_.size(); }

 private:
  static std::uint64_t key(const Query& q);
  std::unordered_set<Triplet, TripletHash> triplets_;
  std::unordered_map<std::uint64_t, std::unordered_set<EntityId>> answers_;
};

struct RankedResult {
  Query query;
  EntityId true_entity = 0;
  // 1 + #strictly better + #tied / 2, so ranks may be half-integers.
  double rank = 1.0;
  double raw_rank = 1.0;  // same, without filtering
  std::size_t n_candidates = 0;  // after filtering, true entity included
};

struct Metrics {
  std::size_t n_queries = 0;
  double mr = 0.0;
  double mrr = 0.0;
  double hits_at_1 = 0.0;
  double hits_at_3 = 0.0;
  double hits_at_10 = 0.0;
};

// Ranks `true_e` among `candidates` by distance to `e_o`. Candidates c != true
// whose completed triplet is in `filter` are skipped. ProtocolError when
// true_e is not a candidate.
RankedResult rank_output(const Vector& e_o, const Query& q, EntityId true_e, const Model& model,
                         const FilterSet& filter, std::span<const EntityId> candidates);

RankedResult rank_query(const Query& q, EntityId true_e, const Model& model, const kg::NeighborIndex& index,
                        const FilterSet& filter, std::span<const EntityId> candidates);

// ArgumentError on an empty list.
Metrics compute_metrics(std::span<const RankedResult> results);

struct Evaluation {
  Metrics metrics;
  std::vector<RankedResult> results;  // test order, left query then right query
  // Spectral-guard factor applied to W_global for these queries (1 = none).
  double w_global_scale = 1.0;
};

// Both sides of every test triplet, ranked over all entities. With finite
// lambda, W_global is first scaled by the spectral guard over the memories of
// all evaluated queries.
Evaluation evaluate(std::span<const Triplet> test, const Model& model, const kg::NeighborIndex& index,
                    const FilterSet& filter, int threads = 1);

struct GenFractionResult {
  double fraction = 1.0;
  std::size_t pool_size = 0;
  // Held-out entities queried with no pool neighbor (scored from a zero memory).
  std::size_t isolated_heldout = 0;
  Evaluation evaluation;
  std::vector<std::size_t> pool_degree;  // by entity id, held-out entities only
};

// The inference pool before truncation: the given triplets shuffled by seed.
std::vector<Triplet> inference_pool(std::span<const Triplet> triplets, std::uint64_t seed);

// Held-out entity memory: unweighted sum of the bindings of its entries among
// `pool`, keeping the last k by pool order when there are more.
MemoryState heldout_memory(EntityId entity, std::span<const Triplet> pool, const Model& model);

// For each fraction f, uses the first llround(f * |pool|) pool triplets to
// build held-out memories and ranks every test triplet from its held-out
// side over held-in candidates. Test triplets must touch exactly one held-out
// entity.
std::vector<GenFractionResult> evaluate_gen(std::span<const EntityId> heldout, std::span<const Triplet> pool,
                                            std::span<const Triplet> test, const Model& model,
                                            const FilterSet& filter, std::span<const double> fractions,
                                            int threads = 1);

struct DegreeBin {
  std::size_t lo = 0;  // inclusive
  std::size_t hi = 0;  // exclusive
  std::size_t count = 0;
  double mrr = 0.0;
};

// Groups results by floor(degree(known) / width); empty bins omitted.
std::vector<DegreeBin> degree_binned_mrr(std::span<const RankedResult> results, std::span<const std::size_t> degree,
                                         std::size_t width);

std::vector<std::size_t> index_degrees(const kg::NeighborIndex& index);

// Shortest decimal text that round-trips the double.
std::string format_number(double x);

void write_metrics_json(const Metrics& m, const std::filesystem::path& path);
void write_metrics_csv(std::span<const std::pair<std::string, Metrics>> rows, const std::filesystem::path& path);
void write_ranks_tsv(std::span<const RankedResult> results, const kg::Vocab& entities, const kg::Vocab& relations,
                     const std::filesystem::path& path);
void write_degree_bins_csv(std::span<const DegreeBin> bins, const std::filesystem::path& path);
void write_fractions_csv(std::span<const GenFractionResult> rows, const std::filesystem::path& path);

}  // namespace hmem::eval
