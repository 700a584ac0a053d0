#pragma once

#include <string>
#include <vector>

#include "cadsim/cost.hpp"
#include "cadsim/types.hpp"

namespace cadsim {

enum class PackingStrategy : std::uint8_t {
  fixed_packing,
  varlen,
  per_doc_cp,
};

/// Outcome of a reference placement strategy: chunks, per-device cost
/// figures, and the items each device computes attention for.
struct BaselineAssignment {
  PackingStrategy strategy = PackingStrategy::fixed_packing;
  std::vector<Chunk> chunks;  // one per logical device
  std::vector<double> per_device_flops;
  std::vector<double> per_device_memory;          // bytes, incl. surcharges
  std::vector<Bytes> comm_bytes;                  // per device, per layer
  std::vector<std::vector<Item>> per_device_items;
};

/// Fixed-size packing: equal tokens per device, attention compute left
/// unequal. Requires sum(lengths) == devices * tokens_per_chunk.
BaselineAssignment assign_fixed(const std::vector<Document>& documents,
                                std::int64_t devices, Tokens tokens_per_chunk,
                                const ModelConfig& model,
                                const CostCoefficients& coeff);

/// Variable-length chunks: whole documents redistributed by
/// longest-processing-time on l^2 to equalize squared sums; token counts
/// (and so activation memory) then diverge.
BaselineAssignment assign_varlen(const std::vector<Document>& documents,
                                 std::int64_t devices, const ModelConfig& model,
                                 const CostCoefficients& coeff);

/// Per-document context parallelism: documents packed into devices/cp
/// groups of equal tokens, every document (or boundary segment) partitioned
/// into 2*cp head-tail shards so each rank carries an equal share. Charges
/// the all-gather volume per rank and the aggregated-KV copy on each
/// group's last rank.
BaselineAssignment assign_per_doc_cp(const std::vector<Document>& documents,
                                     std::int64_t devices, std::int64_t cp_degree,
                                     const ModelConfig& model,
                                     const CostCoefficients& coeff);

/// 2*cp head-tail shards of the query span [begin,end) with causal context
/// from position 0; rank k of the group gets the pair (k, 2*cp-1-k).
/// Shard boundaries are mirror-symmetric so paired work is exactly equal.
std::vector<Item> head_tail_partition(DocId doc, Tokens begin, Tokens end,
                                      std::int64_t cp_degree,
                                      DeviceId first_rank);

}  // namespace cadsim
