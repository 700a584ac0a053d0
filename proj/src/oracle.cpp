#include "cadsim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cadsim {

VOracleResult vcomm_grid_search(const CommQuery& q, Tokens tile_size) {
  VOracleResult best;
  if (q.L_q < 1 || q.L_kv < q.L_q || !(q.f_item > 0)) return best;
  const Tokens tile = std::max<Tokens>(1, tile_size);
  const double G = static_cast<double>(q.L_q) *
                   static_cast<double>(2 * q.L_kv - q.L_q);
  const std::int64_t G_core =
      static_cast<std::int64_t>(q.L_q) * (2 * q.L_kv - q.L_q);
  const double frac = std::min(1.0, q.delta_f_max / q.f_item);
  std::int64_t target =
      static_cast<std::int64_t>(std::ceil(frac * G - 1e-9));
  target = std::clamp<std::int64_t>(target, 1, G_core);

  auto consider = [&](Tokens n_q) {
    if (n_q < 1 || n_q > q.L_q) return;
    // smallest n_kv with n_q*(2*n_kv - n_q) >= target
    Tokens kv = (target + n_q * n_q + 2 * n_q - 1) / (2 * n_q);
    kv = std::max(kv, n_q + q.L_kv - q.L_q);
    if (kv > q.L_kv) return;
    Tokens kv_aligned = tile_ceil(kv, tile);
    if (kv_aligned > q.L_kv) kv_aligned = q.L_kv;
    kv = std::max(kv, kv_aligned);
    Bytes bytes;
    if (q.layout == Layout::contiguous) {
      bytes = n_q * q.size_q + kv * q.size_kv;
    } else {
      bytes = n_q * q.size_q + (q.ht_mirror - (kv - n_q)) * q.size_kv;
    }
    if (!best.feasible || bytes < best.bytes ||
        (bytes == best.bytes && n_q < best.n_q)) {
      best.feasible = true;
      best.n_q = n_q;
      best.n_kv = kv;
      best.bytes = bytes;
    }
  };
  for (Tokens n_q = tile; n_q <= q.L_q; n_q += tile) consider(n_q);
  consider(q.L_q);
  return best;
}

std::int64_t exact_causal_pairs(Tokens n_q, Tokens n_kv) {
  std::int64_t pairs = 0;
  for (Tokens p = n_kv - n_q; p < n_kv; ++p) pairs += p + 1;
  return pairs;
}

namespace {

struct MakespanSearch {
  std::vector<std::int64_t> weights;  // descending
  std::vector<std::int64_t> suffix_sum;
  std::vector<std::int64_t> loads;
  std::int64_t best = 0;

  void dfs(std::size_t idx, std::int64_t cur_max) {
    if (cur_max >= best) return;
    if (idx == weights.size()) {
      best = cur_max;
      return;
    }
    // Remaining work cannot beat an even spread over all servers.
    std::int64_t total = suffix_sum[idx];
    for (std::int64_t l : loads) total += l;
    const std::int64_t lb =
        (total + static_cast<std::int64_t>(loads.size()) - 1) /
        static_cast<std::int64_t>(loads.size());
    if (std::max(cur_max, lb) >= best) return;
    for (std::size_t s = 0; s < loads.size(); ++s) {
      // Symmetry: equal-loaded servers are interchangeable.
      bool dup = false;
      for (std::size_t t = 0; t < s; ++t) {
        if (loads[t] == loads[s]) {
          dup = true;
          break;
        }
      }
      if (dup) continue;
      loads[s] += weights[idx];
      dfs(idx + 1, std::max(cur_max, loads[s]));
      loads[s] -= weights[idx];
    }
  }
};

}  // namespace

double min_makespan_tiles(const std::vector<Item>& items,
                          std::int64_t n_servers, Tokens tile_size,
                          double alpha_ca) {
  if (n_servers < 1) throw DomainError("n_servers must be >= 1");
  const Tokens tile = std::max<Tokens>(1, tile_size);
  MakespanSearch search;
  for (const Item& it : items) {
    if (it.layout != Layout::contiguous) {
      throw DomainError("min_makespan_tiles handles contiguous items only");
    }
    for (Tokens lo = it.q_begin; lo < it.q_end; lo += tile) {
      const Tokens hi = std::min(lo + tile, it.q_end);
      search.weights.push_back(hi * hi - lo * lo);
    }
  }
  std::sort(search.weights.rbegin(), search.weights.rend());
  search.suffix_sum.assign(search.weights.size() + 1, 0);
  for (std::size_t i = search.weights.size(); i-- > 0;) {
    search.suffix_sum[i] = search.suffix_sum[i + 1] + search.weights[i];
  }
  search.loads.assign(static_cast<std::size_t>(n_servers), 0);
  if (search.weights.empty() || search.suffix_sum[0] == 0) return 0.0;
  search.best = search.suffix_sum[0] + 1;
  search.dfs(0, 0);
  return alpha_ca * static_cast<double>(search.best);
}

}  // namespace cadsim
