#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hmem/types.hpp"

namespace hmem::kg {

// Dense, bidirectional symbol <-> id map. Ids are assigned 0..n-1 in
// insertion order.
class Vocab {
 public:
  Vocab() = default;

  // One symbol per line; the (0-based) line number is the id.
  static Vocab from_file(const std::filesystem::path& path);

  std::int32_t add(std::string_view symbol);
  std::optional<std::int32_t> find(std::string_view symbol) const;
  const std::string& symbol(std::int32_t id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  // FNV-1a over the newline-joined symbols; identifies a vocabulary in
  // checkpoints.
  std::uint64_t digest() const;

  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct KnowledgeGraph {
  Vocab entities;
  Vocab relations;
  std::vector<Triplet> triplets;
  std::size_t duplicates_dropped = 0;
};

// Parses a head<TAB>relation<TAB>tail file. Without vocab files, symbols get
// ids in order of first appearance; with them, unknown symbols are a
// VocabError. Duplicate lines are dropped and counted.
KnowledgeGraph load_triplets(const std::filesystem::path& path,
                             const std::optional<std::filesystem::path>& entity_vocab = std::nullopt,
                             const std::optional<std::filesystem::path>& relation_vocab = std::nullopt);

struct TripletFile {
  std::vector<Triplet> triplets;
  std::size_t duplicates_dropped = 0;
};

// Lower-level reader used to load several files into shared vocabularies.
// When `frozen` is set, unknown symbols raise VocabError.
TripletFile read_triplets(const std::filesystem::path& path, Vocab& entities, Vocab& relations, bool frozen);

void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets, const Vocab& entities,
                    const Vocab& relations);

void check_ids(const Triplet& t, std::size_t n_entities, std::size_t n_relations);

struct NeighborEntry {
  RelationId relation = 0;
  Direction direction = Direction::Left;
  EntityId neighbor = 0;

  friend bool operator==(const NeighborEntry&, const NeighborEntry&) = default;
  friend auto operator<=>(const NeighborEntry&, const NeighborEntry&) = default;
};

// The (at most two) entries that triplet `t` contributes to `owner`'s list.
// A self-loop contributes both.
std::vector<NeighborEntry> entries_of(const Triplet& t, EntityId owner);

// Per-entity directional adjacency. Each list is sorted by
// (relation, direction, neighbor) and free of duplicates.
class NeighborIndex {
 public:
  NeighborIndex() = default;
  NeighborIndex(std::size_t n_entities, std::size_t n_relations);

  std::span<const NeighborEntry> neighbors(EntityId e) const { return lists_.at(static_cast<std::size_t>(e)); }
  std::size_t degree(EntityId e) const { return lists_.at(static_cast<std::size_t>(e)).size(); }
  std::size_t n_entities() const { return lists_.size(); }
  std::size_t n_relations() const { return n_relations_; }
  std::size_t total_entries() const;

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;

 private:
  friend NeighborIndex augment_index(const NeighborIndex& index, std::span<const Triplet> extra);

  std::vector<std::vector<NeighborEntry>> lists_;
  std::size_t n_relations_ = 0;
};

NeighborIndex build_neighbor_index(std::size_t n_entities, std::size_t n_relations, std::span<const Triplet> triplets);
NeighborIndex build_neighbor_index(const KnowledgeGraph& kg, std::span<const Triplet> triplets);

// Returns a new index holding the union of `index` and the entries of `extra`.
NeighborIndex augment_index(const NeighborIndex& index, std::span<const Triplet> extra);

// Held-out-entity generalization split.
struct GenSplit {
  std::vector<EntityId> heldout;  // sorted
  std::vector<Triplet> train;
  std::vector<Triplet> observed;
  std::vector<Triplet> valid;
  std::vector<Triplet> test;
  std::size_t discarded_both_heldout = 0;
  // Held-out entities that end up with no observed triplet.
  std::vector<EntityId> isolated_heldout;
  std::size_t n_heldout_requested = 0;
  std::uint64_t seed = 0;
};

// Samples `n_heldout` entities uniformly without replacement; triplets that
// touch none of them form `train`; those touching exactly one are shuffled and
// cut into observed / valid / test at 2/3 : 1/6 : 1/6. valid and test get
// round(n/6) each and observed takes the rest.
GenSplit generate_gen_split(const KnowledgeGraph& kg, std::size_t n_heldout, std::uint64_t seed);

// Writes heldout.txt, train.txt, observed.txt, valid.txt, test.txt and
// split.json into `dir`.
void write_gen_split(const GenSplit& split, const KnowledgeGraph& kg, const std::filesystem::path& dir);

// A data directory: train.txt plus optional valid.txt, test.txt and, for a
// generalization split, observed.txt and heldout.txt. Optional entities.txt /
// relations.txt pin the vocabularies.
struct Dataset {
  Vocab entities;
  Vocab relations;
  std::vector<Triplet> train;
  std::vector<Triplet> valid;
  std::vector<Triplet> test;
  std::vector<Triplet> observed;
  std::vector<EntityId> heldout;
  std::size_t duplicates_dropped = 0;

  bool is_gen_split() const { return !heldout.empty(); }
  std::vector<Triplet> all_triplets() const;
  KnowledgeGraph graph() const;  // all splits, in load order
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace hmem::kg
