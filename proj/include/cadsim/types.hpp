#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadsim {

using Tokens = std::int64_t;
using Bytes = std::int64_t;
using DocId = std::int64_t;
using DeviceId = std::int32_t;

constexpr Tokens kDefaultTileSize = 128;

/// Invalid configuration file or constructor arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation arguments violate a documented precondition.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transformer architecture dimensions plus derived per-token byte sizes.
/// All types in this header are immutable value objects once constructed;
/// they may be shared across threads without synchronization.
struct ModelConfig {
  std::int64_t num_layers = 1;
  std::int64_t hidden = 0;            // per-token query/output width
  std::int64_t kv_hidden = 0;         // per-token key (= value) width
  std::int64_t ffn_intermediate = 0;
  std::int64_t head_dim = 0;
  std::int64_t num_heads = 0;
  std::int64_t gqa_groups = 1;
  std::int64_t bytes_per_element = 2;

  // Filled in by derive_sizes().
  Bytes size_q = 0;   // hidden * bytes_per_element
  Bytes size_kv = 0;  // 2 * kv_hidden * bytes_per_element (K and V)

  // When true the shard-count bound charges K and V jointly (size_kv);
  // when false it charges kv_hidden * bytes_per_element only.
  bool kv_counts_both = true;
};

void validate_model(const ModelConfig& config);

/// Recomputes size_q/size_kv from the dimensions. Throws ConfigError on
/// invalid dims or when stored sizes disagree with the recomputed ones.
ModelConfig derive_sizes(ModelConfig config);

/// Cluster shape and performance envelope. The TP group is collapsed into
/// one logical device (TP is compute- and memory-balanced), so device
/// counts below are in units of num_gpus / tp.
struct ClusterConfig {
  std::int64_t num_gpus = 1;
  std::int64_t tp = 1;
  std::int64_t pp = 1;
  std::int64_t dp = 1;
  std::int64_t cp = 1;                // used by the per-document CP baseline
  double interconnect_bandwidth = 0;  // bytes/second per device link
  double peak_flops = 0;              // FLOPs/second per logical device
  double mfu_linear = 0.5;            // achieved fraction of peak on GEMMs
  Tokens tile_size = kDefaultTileSize;
  Bytes memory_capacity = 0;          // bytes per logical device

  std::int64_t logical_devices() const { return tp > 0 ? num_gpus / tp : 0; }
};

void validate_cluster(const ClusterConfig& cluster);

struct Document {
  DocId id = 0;
  Tokens length = 0;
};

/// One [begin,end) slice of a document's tokens as placed into a chunk.
struct Segment {
  DocId doc = 0;
  Tokens begin = 0;
  Tokens end = 0;

  Tokens length() const { return end - begin; }
};

/// Concatenation of document segments assigned to one device's
/// context-independent computation.
struct Chunk {
  DeviceId device = 0;
  std::vector<Segment> segments;
  Tokens total_tokens = 0;
};

enum class Layout : std::uint8_t { contiguous, head_tail };

/// Scheduling unit: a whole document or a shard of one, resident on the
/// device that computes its context-independent layers.
///
/// contiguous: query tokens [q_begin,q_end) with causal context
/// [0,kv_extent); kv_extent == q_end.
///
/// head_tail: the item is the pair [q_begin,q_end) and
/// [ht_mirror-q_end, ht_mirror-q_begin); q_begin/q_end describe the head
/// half only and kv_extent == q_end. ht_mirror is the mirror constant
/// (head start + tail end), equal to the document length when a whole
/// document is partitioned.
struct Item {
  DocId doc = 0;
  Tokens q_begin = 0;
  Tokens q_end = 0;
  Tokens kv_extent = 0;
  Tokens ht_mirror = 0;  // head_tail only
  DeviceId home_device = 0;
  Layout layout = Layout::contiguous;

  Tokens query_tokens() const { return q_end - q_begin; }

  friend bool operator==(const Item&, const Item&) = default;
};

void validate_item(const Item& item);

/// The migratable unit of core-attention work: one Item plus where it is
/// served. comm_bytes covers the Q/KV dispatch; output_bytes the returned
/// attention output. Both are zero when served at home.
struct CATask {
  Item item;
  DeviceId source_device = 0;
  DeviceId assigned_server = 0;
  Bytes comm_bytes = 0;
  Bytes output_bytes = 0;
};

struct ChunkingViolation {
  enum class Kind : std::uint8_t { gap, overlap, out_of_range };
  DocId doc = 0;
  Tokens position = 0;
  Kind kind = Kind::gap;
};

/// Checks that the chunks tile every document's [0,length) exactly once.
/// Returns the list of violations (empty means ok).
std::vector<ChunkingViolation> validate_chunking(
    const std::vector<Document>& documents, const std::vector<Chunk>& chunks);

/// Expands chunks into contiguous Items homed on the chunk's device.
std::vector<Item> chunk_items(const std::vector<Chunk>& chunks);

inline Tokens tile_ceil(Tokens x, Tokens tile) {
  return tile <= 1 ? x : ((x + tile - 1) / tile) * tile;
}

inline Tokens tile_floor(Tokens x, Tokens tile) {
  return tile <= 1 ? x : (x / tile) * tile;
}

}  // namespace cadsim
