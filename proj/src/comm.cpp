#include "cadsim/comm.hpp"

#include <algorithm>
#include <cmath>

#include "cadsim/cost.hpp"

namespace cadsim {

ShardBoundReport shard_count_upper_bound(const ModelConfig& model,
                                         const ClusterConfig& cluster) {
  const ModelConfig m = derive_sizes(model);
  validate_cluster(cluster);
  ShardBoundReport r;
  r.linear_flops = linear_flops_per_token(m);
  r.ci_seconds_per_token =
      r.linear_flops / (cluster.mfu_linear * cluster.peak_flops);
  const double size_kv_bound =
      m.kv_counts_both
          ? static_cast<double>(m.size_kv)
          : static_cast<double>(m.kv_hidden * m.bytes_per_element);
  const double tb = r.ci_seconds_per_token * cluster.interconnect_bandwidth;
  if (tb <= static_cast<double>(m.size_q)) {
    r.communication_bound = true;
    r.bound = 0;
    return r;
  }
  const double s = 2.0 * (tb - static_cast<double>(m.size_q)) / size_kv_bound - 1.0;
  r.bound = s > 0 ? static_cast<std::int64_t>(std::floor(s)) : 0;
  return r;
}

namespace {

Bytes shard_bytes(Layout layout, Tokens n_q, Tokens n_kv, Bytes size_q,
                  Bytes size_kv, Tokens ht_mirror, bool double_query) {
  if (layout == Layout::contiguous) {
    return n_q * size_q + n_kv * size_kv;
  }
  const Bytes q_term = (double_query ? 2 * n_q : n_q) * size_q;
  return q_term + (ht_mirror - (n_kv - n_q)) * size_kv;
}

}  // namespace

Bytes item_comm_bytes(const Item& it, const ModelConfig& model,
                      bool double_query_head_tail) {
  validate_item(it);
  return shard_bytes(it.layout, it.query_tokens(), it.kv_extent, model.size_q,
                     model.size_kv, it.ht_mirror, double_query_head_tail);
}

Bytes item_output_bytes(const Item& it, const ModelConfig& model) {
  return it.query_tokens() * model.size_q;
}

Bytes task_comm_bytes(const CATask& task, const ModelConfig& model,
                      bool double_query_head_tail) {
  if (task.assigned_server == task.source_device) return 0;
  return item_comm_bytes(task.item, model, double_query_head_tail);
}

namespace {

struct Candidate {
  Tokens n_q = 0;
  Tokens n_kv = 0;
  Bytes bytes = 0;
  std::int64_t core = 0;
  bool feasible = false;
};

// Smallest feasible n_kv (tile-aligned or the box edge) that delivers at
// least target_core work for the given n_q, or infeasible.
Candidate pick_kv(const CommQuery& q, Tokens tile, Tokens n_q,
                  std::int64_t target_core) {
  Candidate c;
  if (n_q < 1 || n_q > q.L_q) return c;
  const Tokens kv_lo = n_q + q.L_kv - q.L_q;
  // n_q * (2*n_kv - n_q) >= target  =>  n_kv >= (target + n_q^2) / (2*n_q)
  const std::int64_t num = target_core + n_q * n_q;
  Tokens kv_req = static_cast<Tokens>((num + 2 * n_q - 1) / (2 * n_q));
  Tokens kv = std::max(kv_req, kv_lo);
  if (kv > q.L_kv) return c;
  Tokens kv_aligned = tile_ceil(kv, tile);
  if (kv_aligned > q.L_kv) kv_aligned = q.L_kv;
  c.n_q = n_q;
  c.n_kv = std::max(kv_aligned, kv);
  c.core = n_q * (2 * c.n_kv - n_q);
  c.bytes = shard_bytes(q.layout, n_q, c.n_kv, q.size_q, q.size_kv, q.ht_mirror,
                        /*double_query=*/false);
  c.feasible = true;
  return c;
}

}  // namespace

ShardChoice v_min_comm(const CommQuery& q, Tokens tile_size) {
  if (q.L_q < 1 || q.L_kv < q.L_q) throw DomainError("v_min_comm: bad extents");
  if (q.size_q < 1 || q.size_kv < 1) throw DomainError("v_min_comm: bad sizes");
  if (!(q.f_item > 0) || !(q.delta_f_max > 0)) {
    throw DomainError("v_min_comm: flops must be positive");
  }
  if (q.delta_f_max > q.f_item * (1.0 + 1e-12)) {
    throw DomainError("v_min_comm: delta_f_max exceeds the item's flops");
  }
  if (q.layout == Layout::head_tail && q.ht_mirror < 2 * q.L_kv) {
    throw DomainError("v_min_comm: head_tail mirror too small");
  }
  const Tokens tile = std::max<Tokens>(1, tile_size);
  const double G = static_cast<double>(q.L_q) *
                   static_cast<double>(2 * q.L_kv - q.L_q);
  const std::int64_t G_core =
      static_cast<std::int64_t>(q.L_q) * (2 * q.L_kv - q.L_q);
  const double frac = std::min(1.0, q.delta_f_max / q.f_item);

  auto whole = [&] {
    ShardChoice w;
    w.n_q = q.L_q;
    w.n_kv = q.L_kv;
    w.core = G_core;
    w.bytes = shard_bytes(q.layout, q.L_q, q.L_kv, q.size_q, q.size_kv,
                          q.ht_mirror, false);
    return w;
  };

  std::int64_t target_core =
      static_cast<std::int64_t>(std::ceil(frac * G - 1e-9));
  target_core = std::clamp<std::int64_t>(target_core, 1, G_core);
  if (target_core >= G_core) return whole();

  // Feasible continuous interval for n_q given the two kv box constraints.
  const double Lkv = static_cast<double>(q.L_kv);
  const double diff = static_cast<double>(q.L_kv - q.L_q);
  const double n_lo = Lkv - std::sqrt(std::max(0.0, Lkv * Lkv - frac * G));
  const double n_hi = -diff + std::sqrt(diff * diff + frac * G);

  double n_opt;
  if (q.layout == Layout::contiguous) {
    const double beta = static_cast<double>(q.size_kv) /
                        static_cast<double>(q.size_q);
    n_opt = std::sqrt(frac * beta * G / (beta + 2.0));
  } else {
    // Head-tail bytes grow with n_q, so the boundary minimum applies.
    n_opt = n_lo;
  }
  const double clamped = std::clamp(n_opt, n_lo, n_hi);

  Tokens probes[6] = {
      tile_floor(static_cast<Tokens>(clamped), tile),
      tile_ceil(static_cast<Tokens>(std::ceil(clamped)), tile),
      tile_ceil(static_cast<Tokens>(std::ceil(clamped)), tile) + tile,
      tile_ceil(static_cast<Tokens>(std::ceil(n_lo)), tile),
      tile_floor(static_cast<Tokens>(n_hi), tile),
      q.L_q,
  };
  Candidate best;
  for (Tokens n_q : probes) {
    if (n_q < 1 || n_q > q.L_q) continue;
    if (n_q != q.L_q && n_q % tile != 0) continue;
    const Candidate c = pick_kv(q, tile, n_q, target_core);
    if (!c.feasible) continue;
    const std::int64_t over = c.core - target_core;
    const std::int64_t best_over = best.core - target_core;
    if (!best.feasible || c.bytes < best.bytes ||
        (c.bytes == best.bytes && over < best_over) ||
        (c.bytes == best.bytes && over == best_over && c.n_q < best.n_q)) {
      best = c;
    }
  }
  if (!best.feasible) return whole();
  ShardChoice out;
  out.n_q = best.n_q;
  out.n_kv = best.n_kv;
  out.bytes = best.bytes;
  out.core = best.core;
  return out;
}

Bytes allgather_volume_cp(const Chunk& chunk, std::int64_t cp_degree,
                          const ModelConfig& model) {
  if (cp_degree < 1) throw DomainError("cp_degree must be >= 1");
  if (cp_degree == 1) return 0;
  return chunk.total_tokens * model.size_kv * (cp_degree - 1) / cp_degree;
}

}  // namespace cadsim
