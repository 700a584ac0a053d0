// Acceptance suite: prints one pass/fail line per criterion and exits
// nonzero if any fail. Each criterion pins its thresholds in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cadsim/baselines.hpp"
#include "cadsim/comm.hpp"
#include "cadsim/config_io.hpp"
#include "cadsim/cost.hpp"
#include "cadsim/experiment.hpp"
#include "cadsim/oracle.hpp"
#include "cadsim/scheduler.hpp"
#include "cadsim/sim.hpp"
#include "cadsim/workload.hpp"

using namespace cadsim;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail) {
  std::printf("[%s] C%d %s%s%s\n", pass ? "PASS" : "FAIL", criterion,
              what.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ModelConfig llama34b() {
  ModelConfig m;
  m.num_layers = 48;
  m.hidden = 8192;
  m.kv_hidden = 2048;
  m.ffn_intermediate = 22016;
  m.head_dim = 128;
  m.num_heads = 64;
  m.gqa_groups = 16;
  return derive_sizes(m);
}

ClusterConfig reference_cluster(std::int64_t logical_devices) {
  ClusterConfig c;
  c.num_gpus = logical_devices;
  c.tp = 1;
  c.dp = logical_devices;
  c.interconnect_bandwidth = 50.0 * static_cast<double>(1ull << 30);
  c.peak_flops = 990e12;
  c.mfu_linear = 0.5;
  c.tile_size = 128;
  return c;
}

Item doc_item(DocId doc, Tokens len, DeviceId home) {
  Item it;
  it.doc = doc;
  it.q_begin = 0;
  it.q_end = len;
  it.kv_extent = len;
  it.home_device = home;
  return it;
}

// C1: per-token CI FLOPs, CI seconds per token, shard-count bound.
void criterion1() {
  const auto t0 = Clock::now();
  const ModelConfig m = llama34b();
  const ClusterConfig c = reference_cluster(8);
  const double lft = linear_flops_per_token(m);
  const auto bound = shard_count_upper_bound(m, c);
  const double elapsed = seconds_since(t0);
  const bool flops_ok = lft == static_cast<double>(1320LL << 20);
  const bool t_ok =
      std::abs(bound.ci_seconds_per_token - 2.796e-6) / 2.796e-6 <= 1e-3;
  const bool s_ok = bound.bound == 31;
  const bool time_ok = elapsed < 1e-3;
  std::ostringstream d;
  d << "lft=" << lft << " t=" << bound.ci_seconds_per_token
    << " s=" << bound.bound << " elapsed_s=" << elapsed;
  report(1, flops_ok && t_ok && s_ok && time_ok,
         "per-token CI flops, CI time, shard bound", d.str());
}

// C2: fixed packing of 1x4096 vs 4x1024: flops ratio 4.0, equal memory.
void criterion2() {
  const ModelConfig m = llama34b();
  const CostCoefficients unit{1.0, 0.0, 1.0};
  const std::vector<Document> docs{
      {0, 4096}, {1, 1024}, {2, 1024}, {3, 1024}, {4, 1024}};
  const auto a = assign_fixed(docs, 2, 4096, m, unit);
  const bool ratio_ok = a.per_device_flops[0] / a.per_device_flops[1] == 4.0;
  const bool mem_ok = a.per_device_memory[0] == a.per_device_memory[1];
  std::ostringstream d;
  d << "ratio=" << a.per_device_flops[0] / a.per_device_flops[1];
  report(2, ratio_ok && mem_ok, "packed-chunk flops ratio and memory", d.str());
}

// C3: closed-form minimal shard vs exhaustive tile-aligned search.
void criterion3() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240819);
  int runs = 0, byte_fail = 0, constraint_fail = 0;
  for (int i = 0; i < 120; ++i) {
    for (Layout layout : {Layout::contiguous, Layout::head_tail}) {
      CommQuery q;
      q.layout = layout;
      const Tokens L_kv = 512 + static_cast<Tokens>(rng() % 65536);
      q.L_q = 1 + static_cast<Tokens>(rng() % L_kv);
      q.L_kv = L_kv;
      q.size_q = 16384;
      q.size_kv = 8192;
      q.f_item = static_cast<double>(q.L_q) *
                 static_cast<double>(2 * q.L_kv - q.L_q);
      q.delta_f_max =
          (0.01 + 0.99 * static_cast<double>(rng() % 1000) / 1000.0) * q.f_item;
      if (layout == Layout::head_tail) {
        q.ht_mirror = 2 * q.L_kv + static_cast<Tokens>(rng() % 8192);
      }
      const ShardChoice s = v_min_comm(q, 128);
      const VOracleResult o = vcomm_grid_search(q, 128);
      ++runs;
      if (!o.feasible ||
          static_cast<double>(s.bytes) > 1.01 * static_cast<double>(o.bytes)) {
        ++byte_fail;
      }
      const double target = q.delta_f_max / q.f_item *
                            static_cast<double>(q.L_q) *
                            static_cast<double>(2 * q.L_kv - q.L_q);
      const bool ok = s.n_q >= 1 && s.n_q <= q.L_q &&
                      s.n_kv >= s.n_q + q.L_kv - q.L_q && s.n_kv <= q.L_kv &&
                      static_cast<double>(s.core) >= target - 1.0;
      if (!ok) ++constraint_fail;
    }
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream d;
  d << runs << " queries, byte_fail=" << byte_fail
    << " constraint_fail=" << constraint_fail << " elapsed_s=" << elapsed;
  report(3, runs >= 100 && byte_fail == 0 && constraint_fail == 0 &&
                elapsed < 30.0,
         "minimal-shard closed form vs grid search", d.str());
}

// C4: tolerance + exact conservation over 1000 random scheduling batches.
void criterion4() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const double eps_values[3] = {0.0, 0.05, 0.15};
  int conservation_fail = 0, tolerance_fail = 0, met = 0;
  for (int batch = 0; batch < 1000; ++batch) {
    const int n_servers = 2 + static_cast<int>(rng() % 15);
    const int n_items = 1 + static_cast<int>(rng() % 64);
    std::vector<Item> items;
    std::int64_t core_in = 0;
    for (int i = 0; i < n_items; ++i) {
      const Tokens len = 128 * (1 + static_cast<Tokens>(rng() % 64));
      Item it = doc_item(i, len, static_cast<DeviceId>(rng() % n_servers));
      core_in += ca_flops_core(it);
      items.push_back(it);
    }
    SchedulerConfig cfg;
    cfg.epsilon = eps_values[batch % 3];
    cfg.e_threshold = 1e-9;
    cfg.tile_size = 128;
    cfg.alpha_ca = 1.0;
    cfg.size_q = 16384;
    cfg.size_kv = 8192;
    const SchedulePlan plan = schedule(items, n_servers, cfg);
    std::int64_t core_out = 0;
    for (const CATask& t : plan.tasks) core_out += ca_flops_core(t.item);
    if (core_out != core_in) ++conservation_fail;
    if (plan.tolerance_met) {
      ++met;
      const double slack = one_tile_slack(items, cfg);
      const double dev =
          std::max(plan.max_load - plan.target, plan.target - plan.min_load);
      if (dev > cfg.epsilon * plan.target + slack + 1e-6) ++tolerance_fail;
    }
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream d;
  d << "met=" << met << "/1000 conservation_fail=" << conservation_fail
    << " tolerance_fail=" << tolerance_fail << " elapsed_s=" << elapsed;
  report(4, conservation_fail == 0 && tolerance_fail == 0 && elapsed < 60.0,
         "scheduler tolerance and exact flops conservation", d.str());
}

// C5: greedy max-load vs exhaustive tile-granular optimum.
void criterion5() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5150);
  int within = 0;
  const int runs = 1000;
  for (int r = 0; r < runs; ++r) {
    const int n_servers = 2 + static_cast<int>(rng() % 2);
    const int n_items = 1 + static_cast<int>(rng() % 5);
    std::vector<Item> items;
    for (int i = 0; i < n_items; ++i) {
      const Tokens len = 128 * (1 + static_cast<Tokens>(rng() % 6));
      items.push_back(doc_item(i, len, static_cast<DeviceId>(rng() % n_servers)));
    }
    SchedulerConfig cfg;
    cfg.epsilon = 0.0;
    cfg.e_threshold = 1e-12;
    cfg.tile_size = 128;
    cfg.alpha_ca = 1.0;
    cfg.size_q = 16384;
    cfg.size_kv = 8192;
    const SchedulePlan plan = schedule(items, n_servers, cfg);
    const double opt = min_makespan_tiles(items, n_servers, 128, 1.0);
    if (opt <= 0) {
      ++within;
      continue;
    }
    if (plan.max_load <= 1.15 * opt) ++within;
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream d;
  d << within << "/" << runs << " within 15% of optimum, elapsed_s=" << elapsed;
  report(5, within >= 950 && elapsed < 300.0,
         "greedy gap against the exhaustive small-instance optimum", d.str());
}

// C6: communication-mode orderings and the tolerance-factor sweep.
void criterion6() {
  const ModelConfig model = llama34b();
  const ClusterConfig cluster = reference_cluster(8);
  const CostCoefficients coeff = derive_coefficients(model);
  const ProfilerGrid grid = synth_grid(model, cluster, 1 << 18);
  const Tokens per_dev = 32768;
  const std::int64_t devices = 8;

  SchedulerConfig cfg;
  cfg.epsilon = 0.0;
  cfg.e_threshold = 1e-9;
  cfg.tile_size = cluster.tile_size;
  cfg.alpha_ca = coeff.alpha_ca;
  cfg.size_q = model.size_q;
  cfg.size_kv = model.size_kv;

  bool sandwich_ok = true, hidden_ok = true, single_ok = true, bound_ok = true;
  const std::int64_t shard_bound = shard_count_upper_bound(model, cluster).bound;
  double worst_gap = 0, worst_single = 10;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    LengthDistribution dist;
    dist.kind = DistKind::pretrain_upsampled;
    dist.max_doc_len = per_dev * 4;
    dist.min_len_threshold = per_dev;
    dist.upsample_drop_prob = 0.9;
    dist.seed = seed;
    const auto docs = sample_batch(dist, per_dev * devices);
    const auto chunks = place_sequential(docs, devices, per_dev);
    const SchedulePlan plan = schedule(chunk_items(chunks), devices, cfg);
    // hiding is only promised while documents stay under the shard bound
    std::map<DocId, std::int64_t> shards;
    for (const CATask& t : plan.tasks) ++shards[t.item.doc];
    for (const auto& [doc, n] : shards) {
      if (n > shard_bound) bound_ok = false;
    }
    const auto plans = device_plans_from_schedule(plan, chunks, coeff);
    auto run = [&](CommMode mode) {
      SimConfig sim;
      sim.mode = mode;
      return simulate_dp_iteration(plans, model, cluster, coeff, grid, sim);
    };
    const auto sig = run(CommMode::signal);
    const auto png = run(CommMode::pingpong);
    const auto ss = run(CommMode::single_stream);
    if (!(sig.iteration_s <= png.iteration_s * (1 + 1e-12) &&
          png.iteration_s <= ss.iteration_s * (1 + 1e-12))) {
      sandwich_ok = false;
    }
    const double gap = png.iteration_s / sig.iteration_s - 1.0;
    worst_gap = std::max(worst_gap, gap);
    if (gap > 0.02) hidden_ok = false;
    const double single = ss.iteration_s / png.iteration_s - 1.0;
    worst_single = std::min(worst_single, single);
    if (single < 0.10) single_ok = false;
  }

  // tolerance sweep on one fixed batch: traffic must not increase with eps
  LengthDistribution dist;
  dist.kind = DistKind::pretrain_upsampled;
  dist.max_doc_len = per_dev * 4;
  dist.min_len_threshold = per_dev;
  dist.upsample_drop_prob = 0.9;
  dist.seed = 15;
  const auto docs = sample_batch(dist, per_dev * devices);
  const auto chunks = place_sequential(docs, devices, per_dev);
  const auto items = chunk_items(chunks);
  bool monotone_ok = true;
  Bytes prev = -1;
  for (double eps : {0.0, 0.05, 0.10, 0.15, 0.20, 0.25}) {
    SchedulerConfig c2 = cfg;
    c2.epsilon = eps;
    const SchedulePlan plan = schedule(items, devices, c2);
    if (prev >= 0 && plan.total_comm_bytes > prev) monotone_ok = false;
    prev = plan.total_comm_bytes;
  }
  std::ostringstream d;
  d << "worst pingpong/signal gap=" << worst_gap
    << " min single-stream excess=" << worst_single
    << " shard bound respected=" << (bound_ok ? "yes" : "no")
    << " comm monotone=" << (monotone_ok ? "yes" : "no");
  report(6, sandwich_ok && hidden_ok && single_ok && bound_ok && monotone_ok,
         "mode orderings and tolerance sweep", d.str());
}

// C7: strategy ordering on skewed batches; memory divergence contracts.
void criterion7() {
  const ModelConfig model = llama34b();
  const std::int64_t devices = 16;
  const Tokens per_dev = 32768;
  ClusterConfig cluster = reference_cluster(devices);
  const CostCoefficients coeff = derive_coefficients(model);
  const ProfilerGrid grid = synth_grid(model, cluster, per_dev * devices);

  SchedulerConfig cfg;
  cfg.epsilon = 0.0;
  cfg.e_threshold = 1e-9;
  cfg.tile_size = cluster.tile_size;
  cfg.alpha_ca = coeff.alpha_ca;
  cfg.size_q = model.size_q;
  cfg.size_kv = model.size_kv;
  SimConfig sim;

  int ordered = 0;
  bool disagg_mem_ok = true, varlen_mem_ok = true;
  const int batches = 30;
  for (int b = 0; b < batches; ++b) {
    LengthDistribution dist;
    dist.kind = DistKind::pretrain_upsampled;
    dist.max_doc_len = 1024 * cluster.tile_size;  // documents up to 4 devices long
    dist.min_len_threshold = per_dev;
    dist.upsample_drop_prob = 0.85;
    dist.seed = 1000 + static_cast<std::uint64_t>(b);
    const auto docs = sample_batch(dist, per_dev * devices);

    const auto fixed = assign_fixed(docs, devices, per_dev, model, coeff);
    const auto rep_fixed = simulate_dp_iteration(
        device_plans_from_baseline(fixed), model, cluster, coeff, grid, sim);

    TimelineReport rep_wlb;
    bool have = false;
    for (std::int64_t cp = 1; cp <= devices; cp *= 2) {
      const auto cand = wlb_candidate(docs, devices, cp, model, coeff);
      const auto rep = simulate_dp_iteration(device_plans_from_baseline(cand),
                                             model, cluster, coeff, grid, sim);
      if (!have || rep.iteration_s < rep_wlb.iteration_s) {
        rep_wlb = rep;
        have = true;
      }
      if (cp == 1) {
        // varlen diverges in memory whenever its chunks are uneven
        Tokens mn = cand.chunks[0].total_tokens, mx = mn;
        for (const Chunk& ch : cand.chunks) {
          mn = std::min(mn, ch.total_tokens);
          mx = std::max(mx, ch.total_tokens);
        }
        if (mx != mn && !(rep.memory_divergence > 1.0)) varlen_mem_ok = false;
      }
    }

    const auto chunks = place_sequential(docs, devices, per_dev);
    const SchedulePlan plan = schedule(chunk_items(chunks), devices, cfg);
    const auto rep_cad = simulate_dp_iteration(
        device_plans_from_schedule(plan, chunks, coeff), model, cluster, coeff,
        grid, sim);
    if (rep_cad.memory_divergence != 1.0) disagg_mem_ok = false;
    if (rep_cad.iteration_s <= rep_wlb.iteration_s * (1 + 1e-9) &&
        rep_wlb.iteration_s <= rep_fixed.iteration_s * (1 + 1e-9)) {
      ++ordered;
    }
  }
  std::ostringstream d;
  d << ordered << "/" << batches << " batches ordered, disagg divergence "
    << (disagg_mem_ok ? "1.0" : "off") << ", varlen divergence "
    << (varlen_mem_ok ? ">1 when uneven" : "violated");
  report(7, ordered * 10 >= batches * 9 && disagg_mem_ok && varlen_mem_ok,
         "strategy ordering on skewed inputs", d.str());
}

// C8: pipeline tick parity and the heavy-microbatch win.
void criterion8() {
  const auto t0 = Clock::now();
  const ModelConfig model = llama34b();
  const ClusterConfig cluster = reference_cluster(8);
  const CostCoefficients coeff = derive_coefficients(model);
  const ProfilerGrid grid = synth_grid(model, cluster, 1 << 16);
  SimConfig sim;
  SchedulerConfig cfg;
  cfg.tile_size = cluster.tile_size;
  cfg.alpha_ca = coeff.alpha_ca;
  cfg.size_q = model.size_q;
  cfg.size_kv = model.size_kv;
  cfg.e_threshold = 1e-9;

  bool ticks_ok = true;
  for (std::int64_t S = 2; S <= 8; ++S) {
    for (std::int64_t M = S; M <= 32; M += (S <= 4 ? 3 : 7)) {
      std::vector<Microbatch> mbs;
      for (std::int64_t m = 0; m < M; ++m) {
        Microbatch mb;
        mb.tokens = 1024;
        mb.items.push_back(doc_item(m, 1024, 0));
        mbs.push_back(mb);
      }
      const auto v = simulate_pp_iteration(mbs, S, PPSchedule::vanilla_1f1b,
                                           model, cluster, coeff, grid, sim, cfg);
      const auto c = simulate_pp_iteration(mbs, S, PPSchedule::cad_phase_sync,
                                           model, cluster, coeff, grid, sim, cfg);
      if (v.ticks != 2 * (M + S - 1) || c.ticks != v.ticks) ticks_ok = false;
    }
  }

  std::vector<Microbatch> mbs;
  for (int m = 0; m < 8; ++m) {
    Microbatch mb;
    mb.tokens = 8192;
    if (m == 2) {
      mb.items.push_back(doc_item(m, 8192, 0));
    } else {
      for (int k = 0; k < 8; ++k) {
        mb.items.push_back(doc_item(m * 100 + k, 1024, 0));
      }
    }
    mbs.push_back(mb);
  }
  const auto v = simulate_pp_iteration(mbs, 4, PPSchedule::vanilla_1f1b, model,
                                       cluster, coeff, grid, sim, cfg);
  const auto c = simulate_pp_iteration(mbs, 4, PPSchedule::cad_phase_sync,
                                       model, cluster, coeff, grid, sim, cfg);
  const bool heavy_ok = c.iteration_s < v.iteration_s;
  const double elapsed = seconds_since(t0);
  std::ostringstream d;
  d << "tick parity=" << (ticks_ok ? "yes" : "no")
    << " heavy speedup=" << v.iteration_s / c.iteration_s
    << " elapsed_s=" << elapsed;
  report(8, ticks_ok && heavy_ok && elapsed < 60.0,
         "pipeline tick parity and phase-sync win", d.str());
}

// C9: byte-identical summaries for identical spec + seed.
void criterion9() {
  ExperimentSpec spec;
  spec.model = llama34b();
  spec.model.num_layers = 4;
  spec.cluster = reference_cluster(8);
  spec.distribution.kind = DistKind::pretrain_upsampled;
  spec.distribution.max_doc_len = 32768;
  spec.distribution.min_len_threshold = 4096;
  spec.distribution.seed = 3;
  spec.strategies = {"fixed", "varlen", "wlb_ideal", "disagg"};
  spec.batches = 5;
  spec.tokens_per_device = 8192;
  spec.seed = 99;
  std::ostringstream a, b;
  summary_csv(run_experiment(spec).rows, a);
  spec.jobs = 3;
  summary_csv(run_experiment(spec).rows, b);
  const bool ok = a.str() == b.str() && !a.str().empty();
  report(9, ok, "byte-identical summary for identical spec and seed",
         ok ? "identical" : "mismatch");
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
