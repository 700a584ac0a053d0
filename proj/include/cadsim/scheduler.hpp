#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "cadsim/comm.hpp"
#include "cadsim/types.hpp"

namespace cadsim {

struct SchedulerConfig {
  double epsilon = 0.0;       // allowed per-server deviation, fraction of F-bar
  double e_threshold = 0.01;  // dimensionless floor on the priority score
  Tokens tile_size = kDefaultTileSize;
  double alpha_ca = 1.0;      // FLOPs per token-pair, reporting scale
  Bytes size_q = 2;
  Bytes size_kv = 2;
  bool double_query_head_tail = false;
  std::int64_t max_moves = 1 << 20;
};

struct ServerLoad {
  DeviceId device = 0;
  double assigned_flops = 0;      // alpha_ca * assigned_core
  std::int64_t assigned_core = 0;
  std::vector<Item> items;        // items currently served here
  Bytes sent_bytes = 0;
  Bytes received_bytes = 0;
};

struct SchedulePlan {
  std::vector<CATask> tasks;
  std::vector<ServerLoad> per_server;
  double target = 0;  // F-bar, FLOPs
  double max_load = 0;
  double min_load = 0;
  Bytes total_comm_bytes = 0;    // dispatch volume
  Bytes total_output_bytes = 0;  // return-path volume
  double epsilon_used = 0;
  bool tolerance_met = false;
  std::int64_t migrations = 0;
  std::int64_t splits = 0;
  std::int64_t rejected_small = 0;
};

/// Mean FLOPs per server over all items.
double target_load(const std::vector<Item>& items, std::int64_t n_servers,
                   double alpha_ca);

struct ServerClass {
  std::vector<std::pair<DeviceId, double>> surplus;  // desc by surplus
  std::vector<std::pair<DeviceId, double>> deficit;  // desc by deficit
};

/// Servers above/below target with their gap; servers exactly at target are
/// in neither set.
ServerClass classify_servers(const std::vector<double>& loads, double target);

struct MigrationProposal {
  double delta_f_max = 0;  // FLOPs
  Item shard;
  std::vector<Item> remainders;  // stay on the source (up to two)
  Bytes v_comm = 0;
  double priority = 0;  // E = delta_f_max / v_comm (raw, FLOPs/byte)
  bool whole_item = false;
};

/// One candidate move of `item` (resident on source) toward dest.
/// delta = min(item flops, source surplus, dest deficit); when delta is
/// below the item's flops the item is split at the minimal-communication
/// shard. Returns nullopt when the move cannot deliver at least one kernel
/// tile of work (and whole-item fallback does not apply).
std::optional<MigrationProposal> propose_migration(const ServerLoad& source,
                                                   const ServerLoad& dest,
                                                   const Item& item,
                                                   double target,
                                                   const SchedulerConfig& cfg);

/// Communication-aware greedy balancing across n_servers. Deterministic:
/// ties on the priority score break toward larger delta, then lower item
/// identity, then lower source index. Always returns a plan; an unmet
/// tolerance is flagged rather than raised.
SchedulePlan schedule(const std::vector<Item>& items, std::int64_t n_servers,
                      const SchedulerConfig& cfg);

/// One pipeline tick: stage-tagged items are pooled and balanced across all
/// n_servers; idle stages simply start with zero load.
SchedulePlan schedule_pp_tick(const std::vector<std::vector<Item>>& per_stage_items,
                              std::int64_t n_servers,
                              const SchedulerConfig& cfg);

/// Worst-case FLOPs of a single tile-query shard over the given items; the
/// documented slack on the tolerance check.
double one_tile_slack(const std::vector<Item>& items, const SchedulerConfig& cfg);

/// Text export, one record per task:
/// doc q_begin q_end layout source server flops bytes
/// This format is stable and used as the regression-fixture format.
void plan_to_stream(const SchedulePlan& plan, std::ostream& out);

}  // namespace cadsim
