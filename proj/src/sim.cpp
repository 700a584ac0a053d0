#include "cadsim/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>

#include "cadsim/comm.hpp"

namespace cadsim {

namespace {

double ci_layer_seconds(Tokens tokens, const ModelConfig& model,
                        const ClusterConfig& cluster) {
  if (tokens <= 0) return 0.0;
  return static_cast<double>(tokens) * linear_flops_per_token(model) /
         (cluster.mfu_linear * cluster.peak_flops);
}

double task_layer_seconds(const Item& it, const ProfilerGrid& grid) {
  const Tokens n_q = it.query_tokens();
  if (it.layout == Layout::contiguous) {
    return profile_lookup(grid, n_q, it.kv_extent);
  }
  const Tokens tail_kv = it.ht_mirror - (it.kv_extent - n_q);
  return profile_lookup(grid, n_q, it.kv_extent) +
         profile_lookup(grid, n_q, tail_kv);
}

// Splits a device's served tasks into two nano-batch halves with balanced
// attention work (largest first onto the lighter half).
void assign_halves(std::vector<ServedTask>& served) {
  std::vector<std::size_t> order(served.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ca_flops_core(served[a].item) > ca_flops_core(served[b].item);
  });
  std::int64_t load[2] = {0, 0};
  for (std::size_t i : order) {
    const int h = load[1] < load[0] ? 1 : 0;
    served[i].half = h;
    load[h] += ca_flops_core(served[i].item);
  }
}

struct Window {
  double compute = 0;
  Bytes in_bytes = 0;
  Bytes out_bytes = 0;
  int messages = 0;
  const char* kind = "";
};

double wire_seconds(const Window& w, const ClusterConfig& cluster,
                    const SimConfig& sim) {
  Bytes in = w.in_bytes, out = w.out_bytes;
  if (sim.mode == CommMode::signal) {
    in = in > 0 ? w.messages : 0;
    out = out > 0 ? w.messages : 0;
  }
  if (in == 0 && out == 0) return 0.0;
  const double volume = static_cast<double>(std::max(in, out));
  return volume / cluster.interconnect_bandwidth +
         static_cast<double>(w.messages) * sim.msg_latency_s;
}

// The four per-layer windows of the ping-pong pattern. Transfers sit in the
// window that ends before their consumer: pong returns land under CI(ping),
// ping dispatch under CI(pong), pong dispatch under CA(ping), ping returns
// under CA(pong).
std::array<Window, 4> layer_windows(const DevicePlan& plan,
                                    const ModelConfig& model,
                                    const ClusterConfig& cluster,
                                    const ProfilerGrid& grid) {
  std::array<Window, 4> w;
  const Tokens ping_tokens = (plan.ci_tokens + 1) / 2;
  const Tokens pong_tokens = plan.ci_tokens / 2;
  w[0].kind = "ci_ping";
  w[0].compute = ci_layer_seconds(ping_tokens, model, cluster);
  w[1].kind = "ci_pong";
  w[1].compute = ci_layer_seconds(pong_tokens, model, cluster);
  w[2].kind = "ca_ping";
  w[3].kind = "ca_pong";
  for (const ServedTask& t : plan.served) {
    const double secs = task_layer_seconds(t.item, grid);
    w[t.half == 0 ? 2 : 3].compute += secs;
  }
  // dispatch(ping) hides under CI(pong); dispatch(pong) under CA(ping).
  auto add_dispatch = [&](int half, Window& win) {
    for (const ServedTask& t : plan.served) {
      if (t.half == half && t.in_bytes > 0) {
        win.in_bytes += t.in_bytes;
        ++win.messages;
      }
    }
    for (const ServedTask& t : plan.sent) {
      if (t.half == half && t.in_bytes > 0) {
        win.out_bytes += t.in_bytes;
        ++win.messages;
      }
    }
  };
  // return(pong) hides under CI(ping); return(ping) under CA(pong).
  auto add_return = [&](int half, Window& win) {
    for (const ServedTask& t : plan.served) {
      if (t.half == half && t.out_bytes > 0) {
        win.out_bytes += t.out_bytes;
        ++win.messages;
      }
    }
    for (const ServedTask& t : plan.sent) {
      if (t.half == half && t.out_bytes > 0) {
        win.in_bytes += t.out_bytes;
        ++win.messages;
      }
    }
  };
  add_return(1, w[0]);
  add_dispatch(0, w[1]);
  add_dispatch(1, w[2]);
  add_return(0, w[3]);
  return w;
}

}  // namespace

std::vector<DevicePlan> device_plans_from_schedule(const SchedulePlan& plan,
                                                   const std::vector<Chunk>& chunks,
                                                   const CostCoefficients& coeff) {
  std::vector<DevicePlan> out(plan.per_server.size());
  for (std::size_t d = 0; d < out.size(); ++d) {
    out[d].device = static_cast<DeviceId>(d);
  }
  for (const Chunk& ch : chunks) {
    auto& dp = out.at(static_cast<std::size_t>(ch.device));
    dp.ci_tokens = ch.total_tokens;
    dp.memory_bytes = activation_memory(ch, coeff);
  }
  for (const CATask& t : plan.tasks) {
    ServedTask st;
    st.item = t.item;
    st.in_bytes = t.comm_bytes;
    st.out_bytes = t.output_bytes;
    out.at(static_cast<std::size_t>(t.assigned_server)).served.push_back(st);
  }
  for (auto& dp : out) assign_halves(dp.served);
  for (const auto& dp : out) {
    for (const ServedTask& st : dp.served) {
      if (st.item.home_device != dp.device) {
        out.at(static_cast<std::size_t>(st.item.home_device)).sent.push_back(st);
      }
    }
  }
  return out;
}

std::vector<DevicePlan> device_plans_from_baseline(const BaselineAssignment& a) {
  std::vector<DevicePlan> out(a.chunks.size());
  for (std::size_t d = 0; d < out.size(); ++d) {
    out[d].device = static_cast<DeviceId>(d);
    out[d].ci_tokens = a.chunks[d].total_tokens;
    out[d].memory_bytes = a.per_device_memory[d];
    out[d].strategy_comm_bytes = a.comm_bytes.empty() ? 0 : a.comm_bytes[d];
    for (const Item& it : a.per_device_items[d]) {
      ServedTask st;
      st.item = it;
      out[d].served.push_back(st);
    }
    assign_halves(out[d].served);
  }
  return out;
}

DeviceTimeline simulate_layer_pingpong(const DevicePlan& plan,
                                       const ModelConfig& model,
                                       const ClusterConfig& cluster,
                                       const ProfilerGrid& grid,
                                       const SimConfig& sim) {
  DeviceTimeline tl;
  tl.device = plan.device;
  tl.peak_memory = plan.memory_bytes;
  double t = 0;
  // Collective strategy traffic (the CP all-gather) sits on the critical
  // path before attention and does not overlap compute.
  if (plan.strategy_comm_bytes > 0) {
    Window agw;
    agw.in_bytes = plan.strategy_comm_bytes;
    agw.out_bytes = plan.strategy_comm_bytes;
    agw.messages = 1;
    agw.kind = "allgather";
    const double wire = wire_seconds(agw, cluster, sim);
    if (sim.record_events) tl.events.push_back({t, t + wire, 1, agw.kind});
    tl.busy_comm_s += wire;
    t += wire;
  }
  for (const Window& w : layer_windows(plan, model, cluster, grid)) {
    const double wire = wire_seconds(w, cluster, sim);
    double span;
    if (sim.mode == CommMode::single_stream) {
      span = w.compute + wire;
    } else {
      span = std::max(w.compute, wire);
      tl.overlapped_s += std::min(w.compute, wire);
    }
    if (sim.record_events) {
      if (w.compute > 0) tl.events.push_back({t, t + w.compute, 0, w.kind});
      if (wire > 0) {
        const double w_begin =
            sim.mode == CommMode::single_stream ? t + w.compute : t;
        tl.events.push_back({w_begin, w_begin + wire, 1, std::string(w.kind) + "_wire"});
      }
    }
    tl.busy_compute_s += w.compute;
    tl.busy_comm_s += wire;
    t += span;
  }
  tl.completion_s = t;
  return tl;
}

TimelineReport simulate_dp_iteration(const std::vector<DevicePlan>& plans,
                                     const ModelConfig& model,
                                     const ClusterConfig& cluster,
                                     const CostCoefficients& coeff,
                                     const ProfilerGrid& grid,
                                     const SimConfig& sim) {
  TimelineReport rep;
  rep.per_device.reserve(plans.size());
  const double layers = static_cast<double>(model.num_layers);
  const double passes = 1.0 + sim.backward_ratio;
  double min_mem = std::numeric_limits<double>::infinity();
  double max_mem = 0;
  for (const DevicePlan& dp : plans) {
    DeviceTimeline layer = simulate_layer_pingpong(dp, model, cluster, grid, sim);
    DeviceTimeline tl;
    tl.device = layer.device;
    tl.peak_memory = layer.peak_memory;
    tl.busy_compute_s = layer.busy_compute_s * layers * passes;
    tl.busy_comm_s = layer.busy_comm_s * layers * passes;
    tl.overlapped_s = layer.overlapped_s * layers * passes;
    tl.completion_s = layer.completion_s * layers * passes;
    if (sim.record_events) {
      // Forward layers laid out explicitly; backward as one scaled block.
      for (std::int64_t l = 0; l < model.num_layers; ++l) {
        const double base = static_cast<double>(l) * layer.completion_s;
        for (const TimelineEvent& e : layer.events) {
          tl.events.push_back({base + e.t_begin, base + e.t_end, e.resource, e.kind});
        }
      }
      const double fwd = layer.completion_s * layers;
      tl.events.push_back({fwd, fwd * (1.0 + sim.backward_ratio), 0, "backward"});
    }
    const double tok_mem =
        coeff.gamma_mem * static_cast<double>(dp.ci_tokens);
    min_mem = std::min(min_mem, tok_mem);
    max_mem = std::max(max_mem, tok_mem);
    for (const ServedTask& st : dp.served) {
      rep.total_wire_bytes += (st.in_bytes + st.out_bytes) * model.num_layers;
    }
    rep.total_wire_bytes += dp.strategy_comm_bytes * model.num_layers;
    if (cluster.memory_capacity > 0 &&
        tl.peak_memory > static_cast<double>(cluster.memory_capacity)) {
      rep.oom = true;
    }
    rep.per_device.push_back(std::move(tl));
  }
  for (const DeviceTimeline& tl : rep.per_device) {
    rep.iteration_s = std::max(rep.iteration_s, tl.completion_s);
  }
  double idle_sum = 0;
  for (DeviceTimeline& tl : rep.per_device) {
    tl.idle_s = rep.iteration_s - tl.completion_s;
    idle_sum += tl.idle_s;
  }
  if (!rep.per_device.empty() && rep.iteration_s > 0) {
    rep.imbalance_idle_fraction =
        idle_sum / static_cast<double>(rep.per_device.size()) / rep.iteration_s;
  }
  rep.memory_divergence =
      min_mem > 0 ? max_mem / min_mem
                  : (max_mem > 0 ? std::numeric_limits<double>::infinity() : 1.0);
  return rep;
}

namespace {

struct TickWork {
  bool active = false;
  bool backward = false;
  std::size_t microbatch = 0;
};

}  // namespace

TimelineReport simulate_pp_iteration(const std::vector<Microbatch>& microbatches,
                                     std::int64_t stages, PPSchedule schedule_kind,
                                     const ModelConfig& model,
                                     const ClusterConfig& cluster,
                                     [[maybe_unused]] const CostCoefficients& coeff,
                                     const ProfilerGrid& grid,
                                     const SimConfig& sim,
                                     const SchedulerConfig& sched_cfg) {
  const std::int64_t M = static_cast<std::int64_t>(microbatches.size());
  const std::int64_t S = stages;
  if (S < 1) throw ConfigError("stages must be >= 1");
  if (M < S) throw ConfigError("1F1B needs at least as many microbatches as stages");
  const double layers_per_stage =
      static_cast<double>(model.num_layers) / static_cast<double>(S);

  // tick table: per tick, what every stage does.
  std::vector<std::vector<TickWork>> table;
  if (schedule_kind == PPSchedule::vanilla_1f1b) {
    const std::int64_t ticks = 2 * (M + S - 1);
    table.assign(static_cast<std::size_t>(ticks),
                 std::vector<TickWork>(static_cast<std::size_t>(S)));
    for (std::int64_t s = 0; s < S; ++s) {
      for (std::int64_t m = 0; m < M; ++m) {
        table[static_cast<std::size_t>(s + 2 * m)][static_cast<std::size_t>(s)] =
            {true, false, static_cast<std::size_t>(m)};
        table[static_cast<std::size_t>(2 * S - 1 - s + 2 * m)]
             [static_cast<std::size_t>(s)] = {true, true, static_cast<std::size_t>(m)};
      }
    }
  } else {
    // Phase-synchronized: F warmup, alternating F/B in steady state, B
    // drain. Backwards land later than in 1F1B (deferred into the tail
    // bubbles) without adding ticks.
    struct Phase {
      bool backward;
      std::int64_t index;
    };
    std::vector<Phase> phases;
    for (std::int64_t f = 0; f < S - 1; ++f) phases.push_back({false, f});
    for (std::int64_t k = 0; k < M; ++k) {
      phases.push_back({false, S - 1 + k});
      phases.push_back({true, k});
    }
    for (std::int64_t b = M; b < M + S - 1; ++b) phases.push_back({true, b});
    table.assign(phases.size(), std::vector<TickWork>(static_cast<std::size_t>(S)));
    for (std::size_t t = 0; t < phases.size(); ++t) {
      for (std::int64_t s = 0; s < S; ++s) {
        const std::int64_t m = phases[t].backward
                                   ? phases[t].index - (S - 1 - s)
                                   : phases[t].index - s;
        if (m >= 0 && m < M) {
          table[t][static_cast<std::size_t>(s)] = {true, phases[t].backward,
                                                   static_cast<std::size_t>(m)};
        }
      }
    }
  }

  TimelineReport rep;
  rep.ticks = static_cast<std::int64_t>(table.size());
  rep.per_device.assign(static_cast<std::size_t>(S), {});
  for (std::int64_t s = 0; s < S; ++s) {
    rep.per_device[static_cast<std::size_t>(s)].device = static_cast<DeviceId>(s);
  }

  if (schedule_kind == PPSchedule::vanilla_1f1b) {
    // Stages run asynchronously; only activation hand-offs order them. A
    // forward waits on the upstream forward, a backward on the downstream
    // backward; each stage executes its 1F1B sequence in tick order.
    std::vector<std::vector<double>> f_done(
        static_cast<std::size_t>(M), std::vector<double>(static_cast<std::size_t>(S), 0.0));
    std::vector<std::vector<double>> b_done = f_done;
    std::vector<double> stage_free(static_cast<std::size_t>(S), 0.0);
    for (std::size_t tick = 0; tick < table.size(); ++tick) {
      for (std::int64_t s = 0; s < S; ++s) {
        const TickWork& w = table[tick][static_cast<std::size_t>(s)];
        if (!w.active) continue;
        const Microbatch& mb = microbatches[w.microbatch];
        double ca = 0;
        for (const Item& it : mb.items) ca += task_layer_seconds(it, grid);
        const double cost = (ci_layer_seconds(mb.tokens, model, cluster) + ca) *
                            layers_per_stage *
                            (w.backward ? sim.backward_ratio : 1.0);
        double ready = stage_free[static_cast<std::size_t>(s)];
        if (w.backward) {
          ready = std::max(ready, f_done[w.microbatch][static_cast<std::size_t>(s)]);
          if (s + 1 < S) {
            ready = std::max(ready, b_done[w.microbatch][static_cast<std::size_t>(s + 1)]);
          }
        } else if (s > 0) {
          ready = std::max(ready, f_done[w.microbatch][static_cast<std::size_t>(s - 1)]);
        }
        const double end = ready + cost;
        stage_free[static_cast<std::size_t>(s)] = end;
        auto& done = w.backward ? b_done : f_done;
        done[w.microbatch][static_cast<std::size_t>(s)] = end;
        auto& tl = rep.per_device[static_cast<std::size_t>(s)];
        tl.busy_compute_s += cost;
        if (sim.record_events) {
          tl.events.push_back({ready, end, 0,
                               w.backward ? "backward" : "forward"});
        }
      }
    }
    for (double end : stage_free) rep.iteration_s = std::max(rep.iteration_s, end);
    double idle_sum = 0;
    for (auto& tl : rep.per_device) {
      tl.completion_s = tl.busy_compute_s;
      tl.idle_s = rep.iteration_s - tl.busy_compute_s;
      idle_sum += tl.idle_s;
    }
    if (S > 0 && rep.iteration_s > 0) {
      rep.imbalance_idle_fraction =
          idle_sum / static_cast<double>(S) / rep.iteration_s;
    }
    return rep;
  }

  double t_now = 0;
  for (std::size_t tick = 0; tick < table.size(); ++tick) {
    std::vector<double> compute(static_cast<std::size_t>(S), 0.0);
    std::vector<double> wire(static_cast<std::size_t>(S), 0.0);
    const bool backward_tick = [&] {
      for (const TickWork& w : table[tick])
        if (w.active) return w.backward;
      return false;
    }();
    const double pass_scale = backward_tick ? sim.backward_ratio : 1.0;

    // Pool the tick's attention across every stage, idle ones included; the
    // same-phase barrier per tick is what makes the pooling legal.
    std::vector<std::vector<Item>> per_stage(static_cast<std::size_t>(S));
    for (std::int64_t s = 0; s < S; ++s) {
      const TickWork& w = table[tick][static_cast<std::size_t>(s)];
      if (w.active) per_stage[static_cast<std::size_t>(s)] = microbatches[w.microbatch].items;
    }
    SchedulePlan tick_plan = schedule_pp_tick(per_stage, S, sched_cfg);
    for (std::int64_t s = 0; s < S; ++s) {
      const auto& sv = tick_plan.per_server[static_cast<std::size_t>(s)];
      double ca = 0;
      for (const Item& it : sv.items) ca += task_layer_seconds(it, grid);
      const TickWork& w = table[tick][static_cast<std::size_t>(s)];
      const double ci =
          w.active ? ci_layer_seconds(microbatches[w.microbatch].tokens, model,
                                      cluster)
                   : 0.0;
      compute[static_cast<std::size_t>(s)] = (ci + ca) * layers_per_stage * pass_scale;
      const double vol = static_cast<double>(
          std::max(sv.received_bytes, sv.sent_bytes));
      wire[static_cast<std::size_t>(s)] =
          (vol / cluster.interconnect_bandwidth +
           (sv.received_bytes + sv.sent_bytes > 0 ? sim.msg_latency_s : 0.0)) *
          layers_per_stage * pass_scale;
      rep.total_wire_bytes += static_cast<Bytes>(
          static_cast<double>(sv.received_bytes) * layers_per_stage);
    }

    double dur = 0;
    for (std::int64_t s = 0; s < S; ++s) {
      const double c = compute[static_cast<std::size_t>(s)];
      const double w = wire[static_cast<std::size_t>(s)];
      dur = std::max(dur, sim.mode == CommMode::single_stream ? c + w
                                                              : std::max(c, w));
    }
    for (std::int64_t s = 0; s < S; ++s) {
      auto& tl = rep.per_device[static_cast<std::size_t>(s)];
      const double c = compute[static_cast<std::size_t>(s)];
      tl.busy_compute_s += c;
      tl.busy_comm_s += wire[static_cast<std::size_t>(s)];
      tl.idle_s += dur - c;
      if (sim.record_events && c > 0) {
        tl.events.push_back({t_now, t_now + c, 0,
                             backward_tick ? "tick_backward" : "tick_forward"});
      }
    }
    t_now += dur;
  }
  rep.iteration_s = t_now;
  for (auto& tl : rep.per_device) {
    tl.completion_s = rep.iteration_s - tl.idle_s;
    tl.peak_memory = 0;
  }
  double idle_sum = 0;
  for (const auto& tl : rep.per_device) idle_sum += tl.idle_s;
  if (S > 0 && rep.iteration_s > 0) {
    rep.imbalance_idle_fraction =
        idle_sum / static_cast<double>(S) / rep.iteration_s;
  }
  return rep;
}

void trace_to_chrome_json(const TimelineReport& report, std::ostream& out) {
  out << "{\"traceEvents\":[";
  bool first = true;
  char buf[160];
  for (const DeviceTimeline& tl : report.per_device) {
    for (const TimelineEvent& e : tl.events) {
      if (!first) out << ',';
      first = false;
      std::snprintf(buf, sizeof(buf),
                    "{\"name\":\"%s\",\"ph\":\"X\",\"ts\":%.6f,\"dur\":%.6f,"
                    "\"pid\":%d,\"tid\":%d}",
                    e.kind.c_str(), e.t_begin * 1e6, (e.t_end - e.t_begin) * 1e6,
                    tl.device, e.resource);
      out << buf;
    }
  }
  out << "]}\n";
}

}  // namespace cadsim
