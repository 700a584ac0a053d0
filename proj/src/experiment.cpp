#include "cadsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "cadsim/comm.hpp"
#include "cadsim/oracle.hpp"

namespace cadsim {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

const char* kDpStrategies[] = {"fixed",         "varlen",
                               "per_doc_cp",    "wlb_ideal",
                               "disagg",        "disagg_signal",
                               "disagg_single_stream"};
const char* kPpStrategies[] = {"vanilla_1f1b", "cad_phase_sync"};

}  // namespace

bool strategy_known(const std::string& name, const std::string& mode) {
  if (mode == "pp") {
    for (const char* s : kPpStrategies)
      if (name == s) return true;
    return false;
  }
  for (const char* s : kDpStrategies)
    if (name == s) return true;
  return false;
}

void validate_spec(const ExperimentSpec& spec) {
  derive_sizes(spec.model);
  validate_cluster(spec.cluster);
  if (spec.tokens_per_device < 1) {
    throw ConfigError("tokens_per_device must be >= 1");
  }
  if (spec.batches < 1) throw ConfigError("batches must be >= 1");
  if (spec.mode != "dp" && spec.mode != "pp") {
    throw ConfigError("mode must be dp or pp");
  }
  if (spec.mode == "pp" && spec.microbatches < spec.cluster.pp) {
    throw ConfigError("pp mode needs microbatches >= pp stages");
  }
  if (spec.strategies.empty()) throw ConfigError("no strategies requested");
  for (const std::string& s : spec.strategies) {
    if (!strategy_known(s, spec.mode)) {
      throw ConfigError("unknown strategy: " + s);
    }
  }
  if (!spec.sweep.axis.empty()) {
    if (spec.sweep.values.empty()) throw ConfigError("sweep has no values");
    if (spec.sweep.axis != "epsilon" && spec.sweep.axis != "cp_degree" &&
        spec.sweep.axis != "max_doc_len" && spec.sweep.axis != "bandwidth") {
      throw ConfigError("unknown sweep axis: " + spec.sweep.axis);
    }
  }
}

BaselineAssignment wlb_candidate(const std::vector<Document>& docs,
                                 std::int64_t devices, std::int64_t cp,
                                 const ModelConfig& model,
                                 const CostCoefficients& coeff) {
  if (cp == 1) return assign_varlen(docs, devices, model, coeff);
  if (devices % cp != 0) throw ConfigError("cp must divide device count");
  const std::int64_t groups = devices / cp;
  // Squared-length LPT over groups, then head-tail CP inside each group.
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Tokens la = docs[a].length, lb = docs[b].length;
    return la != lb ? la > lb : docs[a].id < docs[b].id;
  });
  std::vector<std::int64_t> sq(static_cast<std::size_t>(groups), 0);
  std::vector<std::vector<Document>> group_docs(static_cast<std::size_t>(groups));
  for (std::size_t i : order) {
    const std::size_t g = static_cast<std::size_t>(
        std::min_element(sq.begin(), sq.end()) - sq.begin());
    sq[g] += docs[i].length * docs[i].length;
    group_docs[g].push_back(docs[i]);
  }

  BaselineAssignment a;
  a.strategy = PackingStrategy::per_doc_cp;
  a.chunks.resize(static_cast<std::size_t>(devices));
  a.per_device_items.resize(static_cast<std::size_t>(devices));
  a.comm_bytes.assign(static_cast<std::size_t>(devices), 0);
  for (std::int64_t d = 0; d < devices; ++d) {
    a.chunks[static_cast<std::size_t>(d)].device = static_cast<DeviceId>(d);
  }
  std::vector<double> kv_surcharge(static_cast<std::size_t>(devices), 0.0);
  for (std::int64_t g = 0; g < groups; ++g) {
    const DeviceId first_rank = static_cast<DeviceId>(g * cp);
    Chunk gchunk;
    for (const Document& d : group_docs[static_cast<std::size_t>(g)]) {
      gchunk.segments.push_back({d.id, 0, d.length});
      gchunk.total_tokens += d.length;
    }
    const Bytes ag = allgather_volume_cp(gchunk, cp, model);
    for (std::int64_t k = 0; k < cp; ++k) {
      a.comm_bytes[static_cast<std::size_t>(first_rank + k)] = ag;
    }
    for (const Document& d : group_docs[static_cast<std::size_t>(g)]) {
      for (const Item& it : head_tail_partition(d.id, 0, d.length, cp, first_rank)) {
        const std::size_t rank = static_cast<std::size_t>(it.home_device);
        a.per_device_items[rank].push_back(it);
        Chunk& ch = a.chunks[rank];
        ch.segments.push_back({it.doc, it.q_begin, it.q_end});
        ch.total_tokens += it.query_tokens();
        if (it.layout == Layout::head_tail) {
          ch.segments.push_back(
              {it.doc, it.ht_mirror - it.q_end, it.ht_mirror - it.q_begin});
          ch.total_tokens += it.query_tokens();
        }
      }
      kv_surcharge[static_cast<std::size_t>(first_rank + cp - 1)] +=
          static_cast<double>(d.length) * static_cast<double>(model.size_kv);
    }
  }
  a.per_device_flops.assign(a.chunks.size(), 0.0);
  a.per_device_memory.assign(a.chunks.size(), 0.0);
  for (std::size_t d = 0; d < a.chunks.size(); ++d) {
    for (const Item& it : a.per_device_items[d]) {
      a.per_device_flops[d] += ca_flops(it, coeff);
    }
    a.per_device_memory[d] = activation_memory(a.chunks[d], coeff) + kv_surcharge[d];
  }
  return a;
}

namespace {

struct BatchContext {
  const ExperimentSpec& spec;
  const ModelConfig& model;
  const CostCoefficients& coeff;
  const ProfilerGrid& grid;
  std::int64_t devices;
};

SchedulerConfig scheduler_config(const BatchContext& ctx) {
  SchedulerConfig cfg;
  cfg.epsilon = ctx.spec.epsilon;
  cfg.e_threshold = ctx.spec.e_threshold;
  cfg.tile_size = ctx.spec.cluster.tile_size;
  cfg.alpha_ca = ctx.coeff.alpha_ca;
  cfg.size_q = ctx.model.size_q;
  cfg.size_kv = ctx.model.size_kv;
  return cfg;
}

struct DisaggBuild {
  SchedulePlan plan;
  std::vector<Chunk> chunks;
};

DisaggBuild build_disagg(const BatchContext& ctx,
                         const std::vector<Document>& docs) {
  DisaggBuild b;
  b.chunks = place_sequential(docs, ctx.devices, ctx.spec.tokens_per_device);
  b.plan = schedule(chunk_items(b.chunks), ctx.devices, scheduler_config(ctx));
  return b;
}

TimelineReport run_strategy_dp(const BatchContext& ctx,
                               const std::vector<Document>& docs,
                               const std::string& strategy,
                               const DisaggBuild* disagg,
                               std::string* plan_text, bool record_events) {
  SimConfig sim = ctx.spec.sim;
  sim.record_events = record_events;
  if (strategy == "fixed") {
    auto a = assign_fixed(docs, ctx.devices, ctx.spec.tokens_per_device,
                          ctx.model, ctx.coeff);
    return simulate_dp_iteration(device_plans_from_baseline(a), ctx.model,
                                 ctx.spec.cluster, ctx.coeff, ctx.grid, sim);
  }
  if (strategy == "varlen") {
    auto a = assign_varlen(docs, ctx.devices, ctx.model, ctx.coeff);
    return simulate_dp_iteration(device_plans_from_baseline(a), ctx.model,
                                 ctx.spec.cluster, ctx.coeff, ctx.grid, sim);
  }
  if (strategy == "per_doc_cp") {
    auto a = assign_per_doc_cp(docs, ctx.devices, ctx.spec.cluster.cp, ctx.model,
                               ctx.coeff);
    return simulate_dp_iteration(device_plans_from_baseline(a), ctx.model,
                                 ctx.spec.cluster, ctx.coeff, ctx.grid, sim);
  }
  if (strategy == "wlb_ideal") {
    TimelineReport best;
    bool have = false;
    for (std::int64_t cp = 1; cp <= ctx.devices; cp *= 2) {
      if (ctx.devices % cp != 0) break;
      auto a = wlb_candidate(docs, ctx.devices, cp, ctx.model, ctx.coeff);
      auto rep = simulate_dp_iteration(device_plans_from_baseline(a), ctx.model,
                                       ctx.spec.cluster, ctx.coeff, ctx.grid, sim);
      if (!have || rep.iteration_s < best.iteration_s) {
        best = std::move(rep);
        have = true;
      }
    }
    return best;
  }
  // disagg family: same plan, different communication mode.
  if (strategy == "disagg_signal") sim.mode = CommMode::signal;
  if (strategy == "disagg_single_stream") sim.mode = CommMode::single_stream;
  if (plan_text) {
    std::ostringstream os;
    plan_to_stream(disagg->plan, os);
    *plan_text = os.str();
  }
  return simulate_dp_iteration(
      device_plans_from_schedule(disagg->plan, disagg->chunks, ctx.coeff),
      ctx.model, ctx.spec.cluster, ctx.coeff, ctx.grid, sim);
}

TimelineReport run_strategy_pp(const BatchContext& ctx,
                               const std::vector<Microbatch>& mbs,
                               const std::string& strategy) {
  const PPSchedule kind = strategy == "cad_phase_sync"
                              ? PPSchedule::cad_phase_sync
                              : PPSchedule::vanilla_1f1b;
  return simulate_pp_iteration(mbs, ctx.spec.cluster.pp, kind, ctx.model,
                               ctx.spec.cluster, ctx.coeff, ctx.grid,
                               ctx.spec.sim, scheduler_config(ctx));
}

struct BatchResult {
  std::vector<TimelineReport> reports;  // one per strategy
  std::vector<BatchRun> details;
  std::string docs_csv;
};

BatchResult run_batch(const BatchContext& ctx, int batch) {
  BatchResult out;
  LengthDistribution dist = ctx.spec.distribution;
  (void)0;
  dist.seed = mix_seed(mix_seed(ctx.spec.seed, dist.seed),
                       static_cast<std::uint64_t>(batch));

  if (ctx.spec.mode == "pp") {
    std::vector<Microbatch> mbs;
    std::ostringstream docs_csv;
    for (int m = 0; m < ctx.spec.microbatches; ++m) {
      LengthDistribution d = dist;
      d.seed = mix_seed(dist.seed, static_cast<std::uint64_t>(m));
      Microbatch mb;
      mb.tokens = ctx.spec.tokens_per_device;
      const auto docs = sample_batch(d, ctx.spec.tokens_per_device);
      batch_to_csv(docs, docs_csv);
      Chunk ch;
      for (const Document& doc : docs) {
        ch.segments.push_back({doc.id, 0, doc.length});
        ch.total_tokens += doc.length;
      }
      mb.items = chunk_items({ch});
      mbs.push_back(std::move(mb));
    }
    out.docs_csv = docs_csv.str();
    for (const std::string& s : ctx.spec.strategies) {
      TimelineReport rep = run_strategy_pp(ctx, mbs, s);
      out.details.push_back({batch, s, rep, "", ""});
      out.reports.push_back(std::move(rep));
    }
    return out;
  }

  const Tokens total = ctx.spec.tokens_per_device * ctx.devices;
  const auto docs = sample_batch(dist, total);
  {
    std::ostringstream docs_csv;
    batch_to_csv(docs, docs_csv);
    out.docs_csv = docs_csv.str();
  }
  bool need_disagg = false;
  for (const std::string& s : ctx.spec.strategies) {
    if (s.rfind("disagg", 0) == 0) need_disagg = true;
  }
  DisaggBuild disagg;
  if (need_disagg) disagg = build_disagg(ctx, docs);
  for (const std::string& s : ctx.spec.strategies) {
    std::string plan_text;
    TimelineReport rep = run_strategy_dp(
        ctx, docs, s, need_disagg ? &disagg : nullptr,
        s.rfind("disagg", 0) == 0 ? &plan_text : nullptr,
        batch == 0 && ctx.spec.sim.record_events);
    std::string trace;
    if (batch == 0 && ctx.spec.sim.record_events) {
      std::ostringstream ts;
      trace_to_chrome_json(rep, ts);
      trace = ts.str();
    }
    out.details.push_back({batch, s, rep, std::move(plan_text), std::move(trace)});
    out.reports.push_back(std::move(rep));
  }
  return out;
}

std::vector<StrategyResult> summarize(const ExperimentSpec& spec,
                                      const std::vector<BatchResult>& batches,
                                      const std::string& axis, double value) {
  std::vector<StrategyResult> rows;
  for (std::size_t si = 0; si < spec.strategies.size(); ++si) {
    StrategyResult r;
    r.sweep_axis = axis;
    r.sweep_value = value;
    r.strategy = spec.strategies[si];
    r.batches = static_cast<int>(batches.size());
    for (const BatchResult& b : batches) {
      const TimelineReport& rep = b.reports[si];
      r.mean_iteration_s += rep.iteration_s;
      r.mean_idle_fraction += rep.imbalance_idle_fraction;
      r.mean_memory_divergence += rep.memory_divergence;
      r.mean_wire_bytes += static_cast<double>(rep.total_wire_bytes);
      if (rep.oom) ++r.oom_runs;
    }
    const double n = static_cast<double>(batches.size());
    r.mean_iteration_s /= n;
    r.mean_idle_fraction /= n;
    r.mean_memory_divergence /= n;
    r.mean_wire_bytes /= n;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<BatchResult> run_batches(const ExperimentSpec& spec) {
  const ModelConfig model = derive_sizes(spec.model);
  const CostCoefficients coeff =
      spec.coeff_override ? *spec.coeff_override : derive_coefficients(model);
  const std::int64_t devices =
      spec.mode == "pp" ? spec.cluster.pp : spec.cluster.logical_devices();
  if (devices < 1) throw ConfigError("cluster resolves to zero logical devices");
  const Tokens grid_len =
      std::min<Tokens>(spec.tokens_per_device * std::max<std::int64_t>(devices, 1),
                       1 << 19);
  const ProfilerGrid grid = synth_grid(model, spec.cluster, grid_len);
  BatchContext ctx{spec, model, coeff, grid, devices};

  std::vector<BatchResult> results(static_cast<std::size_t>(spec.batches));
  const int jobs = std::max(1, std::min(spec.jobs, spec.batches));
  if (jobs == 1) {
    for (int b = 0; b < spec.batches; ++b) {
      results[static_cast<std::size_t>(b)] = run_batch(ctx, b);
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (int b = next.fetch_add(1); b < spec.batches; b = next.fetch_add(1)) {
          results[static_cast<std::size_t>(b)] = run_batch(ctx, b);
        }
      });
    }
    for (auto& w : workers) w.join();
  }
  return results;
}

void apply_sweep(ExperimentSpec& spec, const std::string& axis, double value) {
  if (axis == "epsilon") {
    spec.epsilon = value;
  } else if (axis == "cp_degree") {
    spec.cluster.cp = static_cast<std::int64_t>(value);
  } else if (axis == "max_doc_len") {
    spec.distribution.max_doc_len = static_cast<Tokens>(value);
  } else if (axis == "bandwidth") {
    spec.cluster.interconnect_bandwidth = value;
  }
}

}  // namespace

RunOutput run_experiment(const ExperimentSpec& spec) {
  validate_spec(spec);
  RunOutput out;
  if (spec.sweep.axis.empty()) {
    auto batches = run_batches(spec);
    out.rows = summarize(spec, batches, "", 0.0);
    for (auto& b : batches) {
      for (auto& d : b.details) out.details.push_back(std::move(d));
      out.batch_docs_csv.push_back(std::move(b.docs_csv));
    }
    return out;
  }
  for (double value : spec.sweep.values) {
    ExperimentSpec point = spec;
    point.sweep = {};
    apply_sweep(point, spec.sweep.axis, value);
    validate_spec(point);
    auto batches = run_batches(point);
    auto rows = summarize(point, batches, spec.sweep.axis, value);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  return out;
}

void summary_csv(const std::vector<StrategyResult>& rows, std::ostream& out) {
  out << "sweep_axis,sweep_value,strategy,batches,mean_iteration_s,"
         "mean_idle_fraction,mean_memory_divergence,mean_wire_bytes,oom_runs\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (const StrategyResult& r : rows) {
    out << r.sweep_axis << ',';
    put(r.sweep_value);
    out << ',' << r.strategy << ',' << r.batches << ',';
    put(r.mean_iteration_s);
    out << ',';
    put(r.mean_idle_fraction);
    out << ',';
    put(r.mean_memory_divergence);
    out << ',';
    put(r.mean_wire_bytes);
    out << ',' << r.oom_runs << '\n';
  }
}

}  // namespace cadsim
