#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cadsim/baselines.hpp"
#include "cadsim/cost.hpp"
#include "cadsim/scheduler.hpp"
#include "cadsim/types.hpp"

namespace cadsim {

enum class CommMode : std::uint8_t {
  pingpong,       // two nano-batches, each one's wire hidden under the other
  signal,         // every transfer reduced to one byte
  single_stream,  // wire serialized with compute, no overlap
};

struct SimConfig {
  CommMode mode = CommMode::pingpong;
  double backward_ratio = 2.0;    // backward time = ratio * forward
  double msg_latency_s = 5e-6;    // per-message constant
  bool record_events = false;
};

/// One attention task as a device sees it: the extents to run, the dispatch
/// bytes that must arrive first, the output bytes to return, and which
/// nano-batch half it executes in.
struct ServedTask {
  Item item;
  Bytes in_bytes = 0;
  Bytes out_bytes = 0;
  int half = 0;
};

/// Everything one device does per layer: its context-independent tokens,
/// the attention tasks it serves, the tasks it originates but are served
/// elsewhere, and any per-layer strategy traffic (e.g. the CP all-gather).
struct DevicePlan {
  DeviceId device = 0;
  Tokens ci_tokens = 0;
  double memory_bytes = 0;
  Bytes strategy_comm_bytes = 0;
  std::vector<ServedTask> served;
  std::vector<ServedTask> sent;
};

struct TimelineEvent {
  double t_begin = 0;
  double t_end = 0;
  int resource = 0;  // 0 compute, 1 wire
  std::string kind;
};

struct DeviceTimeline {
  DeviceId device = 0;
  double busy_compute_s = 0;
  double busy_comm_s = 0;
  double overlapped_s = 0;
  double idle_s = 0;
  double completion_s = 0;
  double peak_memory = 0;
  std::vector<TimelineEvent> events;
};

struct TimelineReport {
  double iteration_s = 0;
  std::vector<DeviceTimeline> per_device;
  double imbalance_idle_fraction = 0;  // avg idle / iteration
  Bytes total_wire_bytes = 0;          // forward dispatch+return volume
  double memory_divergence = 1.0;      // max/min per-device token memory
  bool oom = false;
  std::int64_t ticks = 0;  // pipeline simulations only
};

/// Builds per-device plans from a schedule: chunks give each device its
/// tokens and memory, plan tasks give the attention placement.
std::vector<DevicePlan> device_plans_from_schedule(const SchedulePlan& plan,
                                                   const std::vector<Chunk>& chunks,
                                                   const CostCoefficients& coeff);

std::vector<DevicePlan> device_plans_from_baseline(const BaselineAssignment& a);

/// Timeline of one transformer layer on one device under the ping-pong
/// pattern: four compute windows (CI ping, CI pong, CA ping, CA pong), each
/// overlapping the transfer that must land before the next window.
DeviceTimeline simulate_layer_pingpong(const DevicePlan& plan,
                                       const ModelConfig& model,
                                       const ClusterConfig& cluster,
                                       const ProfilerGrid& grid,
                                       const SimConfig& sim);

/// Full data-parallel iteration: every device runs all layers forward and
/// backward independently, then meets at the gradient barrier.
TimelineReport simulate_dp_iteration(const std::vector<DevicePlan>& plans,
                                     const ModelConfig& model,
                                     const ClusterConfig& cluster,
                                     const CostCoefficients& coeff,
                                     const ProfilerGrid& grid,
                                     const SimConfig& sim);

enum class PPSchedule : std::uint8_t { vanilla_1f1b, cad_phase_sync };

struct Microbatch {
  Tokens tokens = 0;
  std::vector<Item> items;
};

/// Pipeline iteration as a lockstep tick table. vanilla_1f1b interleaves
/// forward and backward per stage; cad_phase_sync keeps every stage in the
/// same phase per tick (backwards deferred into the tail bubbles, same tick
/// count) and pools the attention of each tick across all stages.
TimelineReport simulate_pp_iteration(const std::vector<Microbatch>& microbatches,
                                     std::int64_t stages, PPSchedule schedule_kind,
                                     const ModelConfig& model,
                                     const ClusterConfig& cluster,
                                     const CostCoefficients& coeff,
                                     const ProfilerGrid& grid,
                                     const SimConfig& sim,
                                     const SchedulerConfig& sched_cfg);

/// Chrome trace event format (one complete event per timeline entry).
void trace_to_chrome_json(const TimelineReport& report, std::ostream& out);

}  // namespace cadsim
