#pragma once

#include "cadsim/types.hpp"

namespace cadsim {

/// Result of the shard-count bound: the largest number of shards a document
/// can be split into while the dispatch traffic still fits under the
/// context-independent compute time.
struct ShardBoundReport {
  double linear_flops = 0;          // per token, one layer
  double ci_seconds_per_token = 0;  // t = linear_flops / (mfu * peak)
  std::int64_t bound = 0;           // s
  bool communication_bound = false;  // t*B <= size_q: zero even unsharded
};

/// s = floor(2*(t*B - size_q)/size_kv_bound - 1). size_kv_bound charges K
/// and V jointly (model.size_kv) when kv_counts_both is set, otherwise
/// kv_hidden * bytes_per_element only.
ShardBoundReport shard_count_upper_bound(const ModelConfig& model,
                                         const ClusterConfig& cluster);

/// Dispatch bytes of an item if it is served away from home:
/// contiguous: n_q*size_q + kv_extent*size_kv;
/// head_tail: n_q*size_q + (ht_mirror - (kv_extent - n_q))*size_kv (the KV
/// union of both halves). With double_query_head_tail the query term counts
/// both halves (2*n_q*size_q) instead of the head only.
Bytes item_comm_bytes(const Item& item, const ModelConfig& model,
                      bool double_query_head_tail = false);

/// Return-path bytes of the attention output, tracked separately from the
/// dispatch volume.
Bytes item_output_bytes(const Item& item, const ModelConfig& model);

/// Zero when the task is served on its source device, otherwise
/// item_comm_bytes.
Bytes task_comm_bytes(const CATask& task, const ModelConfig& model,
                      bool double_query_head_tail = false);

/// Inputs of the minimal-communication shard search for one item.
struct CommQuery {
  double delta_f_max = 0;  // FLOPs to move (same unit as f_item)
  double f_item = 0;       // the item's FLOPs
  Tokens L_q = 0;          // item query tokens (per half for head_tail)
  Tokens L_kv = 0;         // item kv extent (head half for head_tail)
  Bytes size_q = 0;
  Bytes size_kv = 0;
  Layout layout = Layout::contiguous;
  Tokens ht_mirror = 0;  // head_tail only: head start + tail end
};

/// A tile-aligned shard choice: n_q query tokens ending at absolute
/// position n_kv, its dispatch bytes, and the unit-alpha work it carries
/// (head-half term for head_tail, matching the search's own constraint).
struct ShardChoice {
  Tokens n_q = 0;
  Tokens n_kv = 0;
  Bytes bytes = 0;
  std::int64_t core = 0;
};

/// Minimal-communication shard delivering at least delta_f_max of the
/// item's FLOPs. Solves the continuous problem in closed form, then rounds
/// to the kernel tile and re-projects into the feasible box
/// 0 < n_q <= L_q, n_q + L_kv - L_q <= n_kv <= L_kv. Rounding never
/// under-delivers; the delivered fraction may exceed the request by up to
/// one tile's worth. Throws DomainError when delta_f_max > f_item.
ShardChoice v_min_comm(const CommQuery& query, Tokens tile_size);

/// Per-rank received KV volume of the context-parallel all-gather:
/// total_tokens * size_kv * (cp_degree - 1) / cp_degree.
Bytes allgather_volume_cp(const Chunk& chunk, std::int64_t cp_degree,
                          const ModelConfig& model);

}  // namespace cadsim
