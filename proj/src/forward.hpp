#pragma once

// Forward pass with the intermediates needed for reverse-mode gradients.
// query_output() is this pass with the trace discarded, so inference and
// training share one code path.

#include <vector>

#include "hmem/kg_store.hpp"
#include "hmem/memory.hpp"
#include "hmem/model.hpp"

namespace hmem::model::detail {

struct QueryTrace {
  Query query;
  std::size_t query_slot = 0;

  Vector e_i;                 // effective known-entity vector (explicit mode)
  Vector r_q;                 // effective probe
  Vector r_q_unnormalized;    // before TPR normalization

  std::vector<kg::NeighborEntry> entries;      // neighborhood minus withheld
  std::vector<memory::Candidate> candidates;   // one per entry
  std::vector<Vector> candidate_rel_unnormalized;
  memory::AssembledMemory assembled;

  MemoryState memory;      // input to completion
  Vector filter;           // M' (local weight mode, finite lambda)
  Matrix w_local;          // W_i (finite lambda)
  MemoryState completed;   // after completion
  Vector e_o;
};

// Neighborhood entries of the known entity with `withhold`'s entries removed.
std::vector<kg::NeighborEntry> visible_neighbors(EntityId owner, const kg::NeighborIndex& index,
                                                 const Triplet* withhold);

// Fills everything up to and including `memory`.
QueryTrace trace_memory(const Query& q, const Model& model, const kg::NeighborIndex& index, const Triplet* withhold);

// trace_memory followed by trace_completion.
QueryTrace trace_query(const Query& q, const Model& model, const kg::NeighborIndex& index, const Triplet* withhold);

// Completion + unbinding part of the forward pass, filling the trailing
// fields of `trace` from `trace.memory` and `trace.r_q`.
void trace_completion(QueryTrace& trace, const Model& model);

}  // namespace hmem::model::detail
