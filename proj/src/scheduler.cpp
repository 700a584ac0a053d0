#include "cadsim/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <tuple>

#include "cadsim/cost.hpp"

namespace cadsim {

double target_load(const std::vector<Item>& items, std::int64_t n_servers,
                   double alpha_ca) {
  if (n_servers < 1) throw DomainError("n_servers must be >= 1");
  std::int64_t core = 0;
  for (const Item& it : items) core += ca_flops_core(it);
  return alpha_ca * static_cast<double>(core) / static_cast<double>(n_servers);
}

ServerClass classify_servers(const std::vector<double>& loads, double target) {
  ServerClass out;
  for (std::size_t i = 0; i < loads.size(); ++i) {
    const double gap = loads[i] - target;
    if (gap > 0) out.surplus.emplace_back(static_cast<DeviceId>(i), gap);
    else if (gap < 0) out.deficit.emplace_back(static_cast<DeviceId>(i), -gap);
  }
  auto desc = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::sort(out.surplus.begin(), out.surplus.end(), desc);
  std::sort(out.deficit.begin(), out.deficit.end(), desc);
  return out;
}

double one_tile_slack(const std::vector<Item>& items, const SchedulerConfig& cfg) {
  const Tokens tile = std::max<Tokens>(1, cfg.tile_size);
  std::int64_t worst = 0;
  for (const Item& it : items) {
    std::int64_t core;
    if (it.layout == Layout::head_tail) {
      core = 2 * tile * it.ht_mirror;
    } else {
      core = tile * (2 * it.kv_extent - tile);
    }
    worst = std::max(worst, core);
  }
  return cfg.alpha_ca * static_cast<double>(worst);
}

namespace {

Bytes item_bytes(const Item& it, const SchedulerConfig& cfg) {
  if (it.layout == Layout::contiguous) {
    return it.query_tokens() * cfg.size_q + it.kv_extent * cfg.size_kv;
  }
  const Tokens n_q = it.query_tokens();
  const Bytes q_term = (cfg.double_query_head_tail ? 2 * n_q : n_q) * cfg.size_q;
  return q_term + (it.ht_mirror - (it.kv_extent - n_q)) * cfg.size_kv;
}

// Split `item` so the minted shard covers queries [n_kv-n_q, n_kv). The
// leftover query range stays behind as up to two items; extents telescope,
// so unit-alpha work is conserved exactly.
struct SplitResult {
  Item shard;
  std::vector<Item> remainders;
};

SplitResult split_item(const Item& item, Tokens n_q, Tokens n_kv) {
  SplitResult r;
  const Tokens cut_lo = n_kv - n_q;
  const Tokens cut_hi = n_kv;
  r.shard = item;
  r.shard.q_begin = cut_lo;
  r.shard.q_end = cut_hi;
  r.shard.kv_extent = cut_hi;
  if (cut_lo > item.q_begin) {
    Item pre = item;
    pre.q_end = cut_lo;
    pre.kv_extent = cut_lo;
    r.remainders.push_back(pre);
  }
  if (cut_hi < item.q_end) {
    Item post = item;
    post.q_begin = cut_hi;
    r.remainders.push_back(post);
  }
  return r;
}

// Smallest shard a split can mint: one tile of queries at the lowest
// admissible kv extent.
std::int64_t min_shard_core(const Item& item, Tokens tile) {
  const Tokens kv_lo = item.q_begin + tile;
  if (item.layout == Layout::head_tail) {
    return tile * (2 * kv_lo - tile) +
           tile * (2 * (item.ht_mirror - (kv_lo - tile)) - tile);
  }
  return tile * (2 * kv_lo - tile);
}

std::tuple<DocId, Tokens, Tokens, int> item_key(const Item& it) {
  return {it.doc, it.q_begin, it.q_end, static_cast<int>(it.layout)};
}

}  // namespace

std::optional<MigrationProposal> propose_migration(const ServerLoad& source,
                                                   const ServerLoad& dest,
                                                   const Item& item,
                                                   double target,
                                                   const SchedulerConfig& cfg) {
  const double surplus = source.assigned_flops - target;
  const double deficit = target - dest.assigned_flops;
  if (!(surplus > 0) || !(deficit > 0)) return std::nullopt;
  const std::int64_t item_core = ca_flops_core(item);
  const double f_item = cfg.alpha_ca * static_cast<double>(item_core);
  const double delta = std::min({f_item, surplus, deficit});
  if (!(delta > 0)) return std::nullopt;

  const bool free_move = dest.device == item.home_device;
  MigrationProposal p;
  p.delta_f_max = delta;

  auto as_whole = [&] {
    p.shard = item;
    p.remainders.clear();
    p.whole_item = true;
    p.v_comm = free_move ? 0 : item_bytes(item, cfg);
    p.priority = p.v_comm > 0 ? delta / static_cast<double>(p.v_comm)
                              : std::numeric_limits<double>::infinity();
    return p;
  };

  if (delta >= f_item * (1.0 - 1e-12)) return as_whole();

  const Tokens tile = std::max<Tokens>(1, cfg.tile_size);
  const Tokens L_q = item.query_tokens();
  double delta_eff = delta;
  if (L_q <= tile) {
    if (delta >= 0.9 * f_item) return as_whole();
    return std::nullopt;
  }
  const double min_core =
      cfg.alpha_ca * static_cast<double>(min_shard_core(item, tile));
  if (delta < min_core) {
    if (delta >= 0.9 * f_item) return as_whole();
    // Rounding up to the smallest tile shard still shrinks both gaps as
    // long as the shard stays under twice the request; below that the move
    // rounds to less than one useful tile.
    if (min_core >= 2.0 * delta) return std::nullopt;
    delta_eff = min_core;
  }

  CommQuery q;
  q.delta_f_max = delta_eff;
  q.f_item = f_item;
  q.L_q = L_q;
  q.L_kv = item.kv_extent;
  q.size_q = cfg.size_q;
  q.size_kv = cfg.size_kv;
  q.layout = item.layout;
  q.ht_mirror = item.ht_mirror;
  ShardChoice sol = v_min_comm(q, tile);
  if (sol.n_q >= L_q) {
    // Tile rounding consumed the whole item.
    if (delta >= 0.9 * f_item) return as_whole();
    return std::nullopt;
  }
  // Tile rounding over-delivers; when one kv step down lands closer to the
  // request, take the smaller shard and let later moves close the rest.
  const double over = cfg.alpha_ca * static_cast<double>(sol.core) - delta;
  if (over > 0) {
    const Tokens kv_lo = sol.n_q + item.kv_extent - L_q;
    const Tokens kv_down = std::max(kv_lo, tile_floor(sol.n_kv - 1, tile));
    if (kv_down < sol.n_kv) {
      const std::int64_t core_down = sol.n_q * (2 * kv_down - sol.n_q);
      const double under = delta - cfg.alpha_ca * static_cast<double>(core_down);
      if (core_down > 0 && under >= 0 && under < over) {
        sol.n_kv = kv_down;
        sol.core = core_down;
      }
    }
  }
  SplitResult split = split_item(item, sol.n_q, sol.n_kv);
  p.shard = split.shard;
  p.remainders = std::move(split.remainders);
  p.whole_item = false;
  p.v_comm = free_move ? 0 : item_bytes(p.shard, cfg);
  p.priority = p.v_comm > 0 ? delta / static_cast<double>(p.v_comm)
                            : std::numeric_limits<double>::infinity();
  return p;
}

SchedulePlan schedule(const std::vector<Item>& items, std::int64_t n_servers,
                      const SchedulerConfig& cfg) {
  if (n_servers < 1) throw DomainError("n_servers must be >= 1");
  for (const Item& it : items) {
    validate_item(it);
    if (it.home_device < 0 || it.home_device >= n_servers) {
      throw DomainError("item home_device outside the server range");
    }
  }

  SchedulePlan plan;
  plan.epsilon_used = cfg.epsilon;
  std::vector<ServerLoad> servers(static_cast<std::size_t>(n_servers));
  for (std::int64_t s = 0; s < n_servers; ++s) {
    servers[static_cast<std::size_t>(s)].device = static_cast<DeviceId>(s);
  }
  std::int64_t total_core = 0;
  Bytes total_item_bytes = 0;
  for (const Item& it : items) {
    auto& sv = servers[static_cast<std::size_t>(it.home_device)];
    sv.items.push_back(it);
    const std::int64_t core = ca_flops_core(it);
    sv.assigned_core += core;
    total_core += core;
    total_item_bytes += item_bytes(it, cfg);
  }
  for (auto& sv : servers) {
    sv.assigned_flops = cfg.alpha_ca * static_cast<double>(sv.assigned_core);
  }
  const double fbar = cfg.alpha_ca * static_cast<double>(total_core) /
                      static_cast<double>(n_servers);
  plan.target = fbar;
  const double eps_abs = cfg.epsilon * fbar;
  const double avg_item_bytes =
      items.empty() ? 1.0
                    : std::max(1.0, static_cast<double>(total_item_bytes) /
                                        static_cast<double>(items.size()));
  const double slack = one_tile_slack(items, cfg);

  auto max_abs_dev = [&] {
    double dev = 0;
    for (const auto& sv : servers)
      dev = std::max(dev, std::abs(sv.assigned_flops - fbar));
    return dev;
  };
  auto max_over = [&] {
    double over = 0;
    for (const auto& sv : servers)
      over = std::max(over, sv.assigned_flops - fbar);
    return over;
  };

  std::int64_t moves = 0;
  bool progressed = true;
  while (progressed && max_abs_dev() > eps_abs && moves < cfg.max_moves) {
    progressed = false;
    // Largest deficits first; the order is fixed per pass, loads update per
    // move.
    std::vector<std::size_t> order;
    {
      std::vector<double> loads;
      loads.reserve(servers.size());
      for (const auto& sv : servers) loads.push_back(sv.assigned_flops);
      for (const auto& [dev, gap] : classify_servers(loads, fbar).deficit) {
        order.push_back(static_cast<std::size_t>(dev));
      }
    }
    for (std::size_t d : order) {
      while (moves < cfg.max_moves) {
        auto& dest = servers[d];
        const double deficit = fbar - dest.assigned_flops;
        if (!(deficit > 0)) break;
        if (deficit <= eps_abs && max_over() <= eps_abs) break;

        std::optional<MigrationProposal> best;
        std::size_t best_source = 0, best_index = 0;
        for (std::size_t s = 0; s < servers.size(); ++s) {
          if (s == d) continue;
          auto& src = servers[s];
          if (!(src.assigned_flops > fbar)) continue;
          for (std::size_t i = 0; i < src.items.size(); ++i) {
            auto prop = propose_migration(src, dest, src.items[i], fbar, cfg);
            if (!prop) {
              ++plan.rejected_small;
              continue;
            }
            const double e_norm =
                prop->priority * avg_item_bytes / std::max(fbar, 1.0);
            if (e_norm < cfg.e_threshold) continue;
            if (!best) {
              best = std::move(prop);
              best_source = s;
              best_index = i;
              continue;
            }
            const auto challenger = std::tuple{
                -prop->priority, -prop->delta_f_max, item_key(src.items[i]), s};
            const auto incumbent = std::tuple{
                -best->priority, -best->delta_f_max,
                item_key(servers[best_source].items[best_index]), best_source};
            if (challenger < incumbent) {
              best = std::move(prop);
              best_source = s;
              best_index = i;
            }
          }
        }
        if (!best) break;

        auto& src = servers[best_source];
        const std::int64_t shard_core = ca_flops_core(best->shard);
        src.items.erase(src.items.begin() +
                        static_cast<std::ptrdiff_t>(best_index));
        for (const Item& rem : best->remainders) src.items.push_back(rem);
        src.assigned_core -= shard_core;
        dest.items.push_back(best->shard);
        dest.assigned_core += shard_core;
        src.assigned_flops = cfg.alpha_ca * static_cast<double>(src.assigned_core);
        dest.assigned_flops =
            cfg.alpha_ca * static_cast<double>(dest.assigned_core);
        ++plan.migrations;
        if (!best->whole_item) ++plan.splits;
        ++moves;
        progressed = true;
      }
    }
  }

  plan.tolerance_met = max_abs_dev() <= eps_abs + slack;
  plan.per_server = std::move(servers);
  plan.max_load = plan.per_server.empty()
                      ? 0
                      : -std::numeric_limits<double>::infinity();
  plan.min_load = plan.per_server.empty()
                      ? 0
                      : std::numeric_limits<double>::infinity();
  for (const auto& sv : plan.per_server) {
    plan.max_load = std::max(plan.max_load, sv.assigned_flops);
    plan.min_load = std::min(plan.min_load, sv.assigned_flops);
  }
  for (std::size_t s = 0; s < plan.per_server.size(); ++s) {
    for (const Item& it : plan.per_server[s].items) {
      CATask task;
      task.item = it;
      task.source_device = it.home_device;
      task.assigned_server = static_cast<DeviceId>(s);
      if (task.assigned_server != task.source_device) {
        task.comm_bytes = item_bytes(it, cfg);
        task.output_bytes = it.query_tokens() * cfg.size_q;
      }
      plan.total_comm_bytes += task.comm_bytes;
      plan.total_output_bytes += task.output_bytes;
      plan.per_server[s].received_bytes += task.comm_bytes;
      if (task.comm_bytes > 0) {
        plan.per_server[static_cast<std::size_t>(it.home_device)].sent_bytes +=
            task.comm_bytes;
      }
      plan.tasks.push_back(std::move(task));
    }
  }
  return plan;
}

SchedulePlan schedule_pp_tick(
    const std::vector<std::vector<Item>>& per_stage_items,
    std::int64_t n_servers, const SchedulerConfig& cfg) {
  if (static_cast<std::int64_t>(per_stage_items.size()) > n_servers) {
    throw DomainError("more stages than servers in a tick");
  }
  std::vector<Item> pool;
  for (std::size_t stage = 0; stage < per_stage_items.size(); ++stage) {
    for (Item it : per_stage_items[stage]) {
      it.home_device = static_cast<DeviceId>(stage);
      pool.push_back(it);
    }
  }
  return schedule(pool, n_servers, cfg);
}

void plan_to_stream(const SchedulePlan& plan, std::ostream& out) {
  out << "# plan v1\n";
  out << "# doc q_begin q_end kv_extent ht_mirror layout source server core bytes\n";
  for (const CATask& t : plan.tasks) {
    out << t.item.doc << ' ' << t.item.q_begin << ' ' << t.item.q_end << ' '
        << t.item.kv_extent << ' ' << t.item.ht_mirror << ' '
        << (t.item.layout == Layout::head_tail ? "head_tail" : "contiguous")
        << ' ' << t.source_device << ' ' << t.assigned_server << ' '
        << ca_flops_core(t.item) << ' ' << t.comm_bytes << '\n';
  }
}

}  // namespace cadsim
