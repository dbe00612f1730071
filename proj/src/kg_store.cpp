#include "hmem/kg_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "hmem/errors.hpp"

namespace hmem {

std::string_view to_string(Direction d) { return d == Direction::Right ? "right" : "left"; }
std::string_view to_string(QuerySide s) { return s == QuerySide::Right ? "right" : "left"; }
std::string_view to_string(BindingKind k) { return k == BindingKind::Tpr ? "tpr" : "cconv"; }

}  // namespace hmem

namespace hmem::kg {

namespace {

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t'; });
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  return in;
}

}  // namespace

Vocab Vocab::from_file(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto sym = trim_cr(line);
    if (sym.empty()) continue;
    if (vocab.find(sym)) throw ParseError(path.string(), line_no, "duplicate symbol '" + std::string(sym) + "'");
    vocab.add(sym);
  }
  return vocab;
}

std::int32_t Vocab::add(std::string_view symbol) {
  std::string key(symbol);
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  auto id = static_cast<std::int32_t>(symbols_.size());
  symbols_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

std::optional<std::int32_t> Vocab::find(std::string_view symbol) const {
  auto it = ids_.find(std::string(symbol));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocab::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& s : symbols_) {
    for (char c : s) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

void Vocab::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  for (const auto& s : symbols_) out << s << '\n';
}

namespace {

TripletFile read_impl(const std::filesystem::path& path, Vocab& entities, Vocab& relations, bool entities_frozen,
                      bool relations_frozen) {
  auto in = open_or_throw(path);
  TripletFile result;
  std::unordered_set<Triplet, TripletHash> seen;
  std::string line;
  std::size_t line_no = 0;

  auto lookup = [&](Vocab& vocab, bool frozen, std::string_view sym, const char* what) -> std::int32_t {
    if (!frozen) return vocab.add(sym);
    auto id = vocab.find(sym);
    if (!id) {
      throw VocabError(path.string() + ":" + std::to_string(line_no) + ": unknown " + what + " '" +
                       std::string(sym) + "'");
    }
    return *id;
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim_cr(line);
    if (view.empty() || is_blank(view)) continue;

    std::string_view fields[3];
    std::size_t n_fields = 0;
    std::size_t start = 0;
    while (true) {
      auto tab = view.find('\t', start);
      auto field = view.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start);
      if (n_fields < 3) fields[n_fields] = field;
      ++n_fields;
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (n_fields != 3) {
      throw ParseError(path.string(), line_no, "expected 3 tab-separated fields, got " + std::to_string(n_fields));
    }

    Triplet t;
    t.head = lookup(entities, entities_frozen, fields[0], "entity");
    t.relation = lookup(relations, relations_frozen, fields[1], "relation");
    t.tail = lookup(entities, entities_frozen, fields[2], "entity");
    if (seen.insert(t).second) {
      result.triplets.push_back(t);
    } else {
      ++result.duplicates_dropped;
    }
  }
  return result;
}

}  // namespace

TripletFile read_triplets(const std::filesystem::path& path, Vocab& entities, Vocab& relations, bool frozen) {
  return read_impl(path, entities, relations, frozen, frozen);
}

KnowledgeGraph load_triplets(const std::filesystem::path& path, const std::optional<std::filesystem::path>& entity_vocab,
                             const std::optional<std::filesystem::path>& relation_vocab) {
  KnowledgeGraph kg;
  if (entity_vocab) kg.entities = Vocab::from_file(*entity_vocab);
  if (relation_vocab) kg.relations = Vocab::from_file(*relation_vocab);
  auto file = read_impl(path, kg.entities, kg.relations, entity_vocab.has_value(), relation_vocab.has_value());
  kg.triplets = std::move(file.triplets);
  kg.duplicates_dropped = file.duplicates_dropped;
  return kg;
}

void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets, const Vocab& entities,
                    const Vocab& relations) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  for (const auto& t : triplets) {
    out << entities.symbol(t.head) << '\t' << relations.symbol(t.relation) << '\t' << entities.symbol(t.tail) << '\n';
  }
}

void check_ids(const Triplet& t, std::size_t n_entities, std::size_t n_relations) {
  auto bad_entity = [&](EntityId e) { return e < 0 || static_cast<std::size_t>(e) >= n_entities; };
  if (bad_entity(t.head) || bad_entity(t.tail) || t.relation < 0 ||
      static_cast<std::size_t>(t.relation) >= n_relations) {
    throw IndexError("triplet (" + std::to_string(t.head) + ", " + std::to_string(t.relation) + ", " +
                     std::to_string(t.tail) + ") out of range for " + std::to_string(n_entities) + " entities / " +
                     std::to_string(n_relations) + " relations");
  }
}

std::vector<NeighborEntry> entries_of(const Triplet& t, EntityId owner) {
  std::vector<NeighborEntry> out;
  if (t.head == owner) out.push_back({t.relation, Direction::Right, t.tail});
  if (t.tail == owner) out.push_back({t.relation, Direction::Left, t.head});
  return out;
}

NeighborIndex::NeighborIndex(std::size_t n_entities, std::size_t n_relations)
    : lists_(n_entities), n_relations_(n_relations) {}

std::size_t NeighborIndex::total_entries() const {
  std::size_t n = 0;
  for (const auto& l : lists_) n += l.size();
  return n;
}

NeighborIndex build_neighbor_index(std::size_t n_entities, std::size_t n_relations,
                                   std::span<const Triplet> triplets) {
  return augment_index(NeighborIndex(n_entities, n_relations), triplets);
}

NeighborIndex build_neighbor_index(const KnowledgeGraph& kg, std::span<const Triplet> triplets) {
  return build_neighbor_index(kg.entities.size(), kg.relations.size(), triplets);
}

NeighborIndex augment_index(const NeighborIndex& index, std::span<const Triplet> extra) {
  for (const auto& t : extra) check_ids(t, index.n_entities(), index.n_relations());

  NeighborIndex out = index;
  std::vector<bool> touched(out.lists_.size(), false);
  for (const auto& t : extra) {
    out.lists_[static_cast<std::size_t>(t.head)].push_back({t.relation, Direction::Right, t.tail});
    out.lists_[static_cast<std::size_t>(t.tail)].push_back({t.relation, Direction::Left, t.head});
    touched[static_cast<std::size_t>(t.head)] = true;
    touched[static_cast<std::size_t>(t.tail)] = true;
  }
  for (std::size_t e = 0; e < out.lists_.size(); ++e) {
    if (!touched[e]) continue;
    auto& list = out.lists_[e];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return out;
}

GenSplit generate_gen_split(const KnowledgeGraph& kg, std::size_t n_heldout, std::uint64_t seed) {
  const std::size_t n_entities = kg.entities.size();
  if (n_heldout >= n_entities) {
    throw ArgumentError("n_heldout (" + std::to_string(n_heldout) + ") must be below the entity count (" +
                        std::to_string(n_entities) + ")");
  }

  std::mt19937_64 rng(seed);
  std::vector<EntityId> ids(n_entities);
  for (std::size_t i = 0; i < n_entities; ++i) ids[i] = static_cast<EntityId>(i);
  std::shuffle(ids.begin(), ids.end(), rng);

  GenSplit split;
  split.seed = seed;
  split.n_heldout_requested = n_heldout;
  split.heldout.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_heldout));
  std::sort(split.heldout.begin(), split.heldout.end());

  std::vector<bool> is_heldout(n_entities, false);
  for (auto e : split.heldout) is_heldout[static_cast<std::size_t>(e)] = true;

  std::vector<Triplet> touching;
  for (const auto& t : kg.triplets) {
    const bool h = is_heldout[static_cast<std::size_t>(t.head)];
    const bool r = is_heldout[static_cast<std::size_t>(t.tail)];
    if (!h && !r) {
      split.train.push_back(t);
    } else if (h && r) {
      ++split.discarded_both_heldout;
    } else {
      touching.push_back(t);
    }
  }

  std::shuffle(touching.begin(), touching.end(), rng);
  const std::size_t n = touching.size();
  const auto sixth = static_cast<std::size_t>(std::floor(static_cast<double>(n) / 6.0 + 0.5));
  const std::size_t n_valid = sixth;
  const std::size_t n_test = sixth;
  const std::size_t n_observed = n - n_valid - n_test;

  auto first = touching.begin();
  split.observed.assign(first, first + static_cast<std::ptrdiff_t>(n_observed));
  split.valid.assign(first + static_cast<std::ptrdiff_t>(n_observed),
                     first + static_cast<std::ptrdiff_t>(n_observed + n_valid));
  split.test.assign(first + static_cast<std::ptrdiff_t>(n_observed + n_valid), touching.end());

  std::vector<bool> has_observed(n_entities, false);
  for (const auto& t : split.observed) {
    has_observed[static_cast<std::size_t>(t.head)] = true;
    has_observed[static_cast<std::size_t>(t.tail)] = true;
  }
  for (auto e : split.heldout) {
    if (!has_observed[static_cast<std::size_t>(e)]) split.isolated_heldout.push_back(e);
  }
  return split;
}

void write_gen_split(const GenSplit& split, const KnowledgeGraph& kg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "heldout.txt");
    for (auto e : split.heldout) out << kg.entities.symbol(e) << '\n';
  }
  write_triplets(dir / "train.txt", split.train, kg.entities, kg.relations);
  write_triplets(dir / "observed.txt", split.observed, kg.entities, kg.relations);
  write_triplets(dir / "valid.txt", split.valid, kg.entities, kg.relations);
  write_triplets(dir / "test.txt", split.test, kg.entities, kg.relations);

  nlohmann::ordered_json manifest;
  manifest["seed"] = split.seed;
  manifest["n_heldout"] = split.n_heldout_requested;
  manifest["counts"] = {
      {"heldout", split.heldout.size()},
      {"train", split.train.size()},
      {"observed", split.observed.size()},
      {"valid", split.valid.size()},
      {"test", split.test.size()},
      {"discarded_both_heldout", split.discarded_both_heldout},
      {"isolated_heldout", split.isolated_heldout.size()},
  };
  std::vector<std::string> isolated;
  for (auto e : split.isolated_heldout) isolated.push_back(kg.entities.symbol(e));
  manifest["isolated_heldout"] = isolated;
  std::ofstream out(dir / "split.json");
  out << manifest.dump(2) << '\n';
}

std::vector<Triplet> Dataset::all_triplets() const {
  std::vector<Triplet> all;
  all.reserve(train.size() + valid.size() + test.size() + observed.size());
  for (const auto* part : {&train, &valid, &test, &observed}) all.insert(all.end(), part->begin(), part->end());
  return all;
}

KnowledgeGraph Dataset::graph() const {
  KnowledgeGraph kg;
  kg.entities = entities;
  kg.relations = relations;
  kg.triplets = all_triplets();
  return kg;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ArgumentError("not a directory: " + dir.string());
  Dataset ds;
  const bool frozen = std::filesystem::exists(dir / "entities.txt") && std::filesystem::exists(dir / "relations.txt");
  if (frozen) {
    ds.entities = Vocab::from_file(dir / "entities.txt");
    ds.relations = Vocab::from_file(dir / "relations.txt");
  }

  auto read_part = [&](const char* stem, std::vector<Triplet>& into, bool required) {
    for (const char* ext : {".txt", ".tsv"}) {
      auto path = dir / (std::string(stem) + ext);
      if (std::filesystem::exists(path)) {
        auto file = read_triplets(path, ds.entities, ds.relations, frozen);
        into = std::move(file.triplets);
        ds.duplicates_dropped += file.duplicates_dropped;
        return;
      }
    }
    if (required) throw ArgumentError("missing " + std::string(stem) + ".txt in " + dir.string());
  };
  read_part("train", ds.train, true);
  read_part("valid", ds.valid, false);
  read_part("test", ds.test, false);
  read_part("observed", ds.observed, false);

  auto heldout_path = dir / "heldout.txt";
  if (std::filesystem::exists(heldout_path)) {
    std::ifstream in(heldout_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto sym = trim_cr(line);
      if (sym.empty()) continue;
      if (frozen && !ds.entities.find(sym)) {
        throw VocabError(heldout_path.string() + ":" + std::to_string(line_no) + ": unknown entity '" +
                         std::string(sym) + "'");
      }
      ds.heldout.push_back(ds.entities.add(sym));
    }
    std::sort(ds.heldout.begin(), ds.heldout.end());
  }
  return ds;
}

}  // namespace hmem::kg
