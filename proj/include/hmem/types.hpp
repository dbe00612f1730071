#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

namespace hmem {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

// Position of a neighbor relative to the entity that owns the memory.
// A right neighbor b of a (triplet (a, r, b)) is bound with the right
// relation embedding r^r; a left neighbor with r^l.
enum class Direction : std::uint8_t { Left = 0, Right = 1 };

// Which slot of a query is missing. QueryRight is (e, r, ?), probed with r^r;
// QueryLeft is (?, r, e), probed with r^l.
enum class QuerySide : std::uint8_t { Left = 0, Right = 1 };

enum class BindingKind : std::uint8_t { Tpr = 0, CConv = 1 };

inline Direction probe_direction(QuerySide side) {
  return side == QuerySide::Right ? Direction::Right : Direction::Left;
}

// Row of the per-(relation, direction) bias table.
inline std::size_t slot_index(RelationId relation, Direction direction) {
  return 2 * static_cast<std::size_t>(relation) + static_cast<std::size_t>(direction);
}

std::string_view to_string(Direction d);
std::string_view to_string(QuerySide s);
std::string_view to_string(BindingKind k);

struct Triplet {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

struct TripletHash {
  std::size_t operator()(const Triplet& t) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(t.head);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(t.relation);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(t.tail);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

}  // namespace hmem
