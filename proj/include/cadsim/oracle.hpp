#pragma once

#include <vector>

#include "cadsim/comm.hpp"
#include "cadsim/types.hpp"

namespace cadsim {

/// Independent brute-force counterparts of the closed-form paths. These
/// enumerate rather than solve and must stay free of calls into the
/// implementations they check.

struct VOracleResult {
  bool feasible = false;
  Tokens n_q = 0;
  Tokens n_kv = 0;
  Bytes bytes = 0;
};

/// Exhaustive search over every tile-aligned query count (plus L_q) with
/// the smallest admissible kv extent that still delivers the requested
/// work; returns the cheapest feasible shard.
VOracleResult vcomm_grid_search(const CommQuery& query, Tokens tile_size);

/// Exact number of causal (query, key) pairs for a shard of n_q query
/// tokens ending at absolute position n_kv, counted one token at a time.
std::int64_t exact_causal_pairs(Tokens n_q, Tokens n_kv);

/// Exact minimum achievable max-load when every item may be cut at tile
/// granularity and each tile assigned to any server (branch and bound on
/// tile weights). Relaxes shard contiguity, so the result lower-bounds any
/// split-respecting schedule.
double min_makespan_tiles(const std::vector<Item>& items,
                          std::int64_t n_servers, Tokens tile_size,
                          double alpha_ca);

}  // namespace cadsim
