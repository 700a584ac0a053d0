#include "cadsim/cost.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace cadsim {

double linear_flops_per_token(const ModelConfig& c) {
  validate_model(c);
  // Q and O projections map hidden->hidden, K and V map hidden->kv_hidden,
  // the gated FFN has three hidden<->intermediate maps.
  const double h = static_cast<double>(c.hidden);
  const double hkv = static_cast<double>(c.kv_hidden);
  const double i = static_cast<double>(c.ffn_intermediate);
  return 2.0 * h * (2.0 * h + hkv + 3.0 * i);
}

CostCoefficients derive_coefficients(const ModelConfig& c) {
  validate_model(c);
  const double layers = static_cast<double>(c.num_layers);
  CostCoefficients k;
  k.alpha_ca = 4.0 * static_cast<double>(c.hidden) * layers;
  k.beta_linear = linear_flops_per_token(c) * layers;
  k.gamma_mem = 17.0 * static_cast<double>(c.hidden) *
                static_cast<double>(c.bytes_per_element) * layers;
  return k;
}

std::int64_t ca_flops_core(const Item& it) {
  validate_item(it);
  const std::int64_t n_q = it.query_tokens();
  const std::int64_t n_kv = it.kv_extent;
  if (it.layout == Layout::contiguous) {
    if (n_kv < n_q) throw DomainError("contiguous item has kv_extent < n_q");
    return n_q * (2 * n_kv - n_q);
  }
  const std::int64_t head = n_q * (2 * n_kv - n_q);
  const std::int64_t tail_kv = it.ht_mirror - (n_kv - n_q);
  const std::int64_t tail = n_q * (2 * tail_kv - n_q);
  return head + tail;
}

double ca_flops(const Item& it, const CostCoefficients& coeff) {
  return coeff.alpha_ca * static_cast<double>(ca_flops_core(it));
}

BalanceCheck balance_conditions(const Chunk& a, const Chunk& b) {
  auto sums = [](const Chunk& c) {
    std::int64_t tokens = 0, sq = 0;
    for (const Segment& s : c.segments) {
      tokens += s.length();
      sq += s.length() * s.length();
    }
    return std::pair{tokens, sq};
  };
  const auto [ta, sa] = sums(a);
  const auto [tb, sb] = sums(b);
  return {ta == tb, sa == sb};
}

double activation_memory(const Chunk& chunk, const CostCoefficients& coeff) {
  return coeff.gamma_mem * static_cast<double>(chunk.total_tokens);
}

void validate_grid(const ProfilerGrid& g) {
  if (g.q_points.empty() || g.kv_points.empty()) {
    throw ConfigError("profiler grid has no points");
  }
  if (g.latency_s.size() != g.q_points.size() * g.kv_points.size()) {
    throw ConfigError("profiler grid latency matrix shape mismatch");
  }
  if (!std::is_sorted(g.q_points.begin(), g.q_points.end()) ||
      !std::is_sorted(g.kv_points.begin(), g.kv_points.end())) {
    throw ConfigError("profiler grid points must be sorted");
  }
  for (std::size_t qi = 0; qi < g.q_points.size(); ++qi) {
    for (std::size_t ki = 0; ki < g.kv_points.size(); ++ki) {
      const double lat = g.at(qi, ki);
      if (!(lat > 0)) throw ConfigError("profiler grid latency must be positive");
      if (qi > 0 && g.at(qi - 1, ki) > lat + 1e-18) {
        throw ConfigError("profiler grid latency not monotone in q");
      }
      if (ki > 0 && g.at(qi, ki - 1) > lat + 1e-18) {
        throw ConfigError("profiler grid latency not monotone in kv");
      }
    }
  }
}

namespace {

// Index of the cell [points[i], points[i+1]] containing x (x inside hull).
std::size_t cell_index(const std::vector<Tokens>& points, Tokens x) {
  auto it = std::upper_bound(points.begin(), points.end(), x);
  std::size_t hi = static_cast<std::size_t>(it - points.begin());
  if (hi == 0) return 0;
  if (hi >= points.size()) return points.size() - 2;
  return hi - 1;
}

double bilinear(const ProfilerGrid& g, Tokens n_q, Tokens n_kv) {
  if (g.q_points.size() == 1 && g.kv_points.size() == 1) return g.at(0, 0);
  std::size_t qi = g.q_points.size() > 1 ? cell_index(g.q_points, n_q) : 0;
  std::size_t ki = g.kv_points.size() > 1 ? cell_index(g.kv_points, n_kv) : 0;
  const std::size_t qj = std::min(qi + 1, g.q_points.size() - 1);
  const std::size_t kj = std::min(ki + 1, g.kv_points.size() - 1);
  const double q0 = static_cast<double>(g.q_points[qi]);
  const double q1 = static_cast<double>(g.q_points[qj]);
  const double k0 = static_cast<double>(g.kv_points[ki]);
  const double k1 = static_cast<double>(g.kv_points[kj]);
  const double tq = q1 > q0 ? (static_cast<double>(n_q) - q0) / (q1 - q0) : 0.0;
  const double tk = k1 > k0 ? (static_cast<double>(n_kv) - k0) / (k1 - k0) : 0.0;
  const double a = g.at(qi, ki) * (1 - tq) + g.at(qj, ki) * tq;
  const double b = g.at(qi, kj) * (1 - tq) + g.at(qj, kj) * tq;
  return a * (1 - tk) + b * tk;
}

constexpr double kSaturationFraction = 0.98;

}  // namespace

namespace {

// Saturation membership decided from the enclosing cell's corner points:
// stable under interpolation error, so the saturated and interpolated
// response surfaces never interleave.
bool cell_saturated(const ProfilerGrid& g, Tokens n_q, Tokens n_kv) {
  const std::size_t qi = g.q_points.size() > 1 ? cell_index(g.q_points, n_q) : 0;
  const std::size_t ki = g.kv_points.size() > 1 ? cell_index(g.kv_points, n_kv) : 0;
  const std::size_t qj = std::min(qi + 1, g.q_points.size() - 1);
  const std::size_t kj = std::min(ki + 1, g.kv_points.size() - 1);
  for (std::size_t a : {qi, qj}) {
    for (std::size_t b : {ki, kj}) {
      // Corners below the causal diagonal never correspond to queried
      // extents (kv >= q after padding) and carry padded values.
      if (g.kv_points[b] < g.q_points[a]) continue;
      const double thr = g.flops_at(g.q_points[a], g.kv_points[b]) / g.at(a, b);
      if (thr < kSaturationFraction * g.peak_throughput) return false;
    }
  }
  return true;
}

}  // namespace

double profile_lookup(const ProfilerGrid& g, Tokens n_q, Tokens n_kv) {
  if (n_q < 1 || n_kv < 1) throw DomainError("profile_lookup extents must be >= 1");
  // Shards shorter than one kernel tile execute as a padded full tile.
  Tokens qe = std::max(n_q, g.tile_size);
  Tokens kve = std::max(n_kv, qe);
  const double flops = g.flops_at(qe, kve);
  const Tokens q_max = g.q_points.back();
  const Tokens kv_max = g.kv_points.back();
  const Tokens qc = std::min(qe, q_max);
  const Tokens kvc = std::min(kve, kv_max);
  if (cell_saturated(g, qc, kvc)) return flops / g.peak_throughput;
  if (qe <= q_max && kve <= kv_max) return bilinear(g, qe, kve);
  throw DomainError("profile_lookup extents beyond grid in unsaturated region");
}

ProfilerGrid synth_grid(const ModelConfig& config, const ClusterConfig& cluster,
                        Tokens max_len) {
  validate_model(config);
  validate_cluster(cluster);
  if (max_len < cluster.tile_size) max_len = cluster.tile_size;
  ProfilerGrid g;
  g.tile_size = cluster.tile_size;
  g.alpha_flops = 4.0 * static_cast<double>(config.hidden);  // one layer
  g.peak_throughput = cluster.mfu_linear * cluster.peak_flops;

  auto make_points = [&](Tokens lo) {
    std::vector<Tokens> pts;
    for (Tokens p = lo; p < cluster.tile_size; p *= 2) pts.push_back(p);
    Tokens p = cluster.tile_size;
    while (p < max_len) {
      pts.push_back(p);
      Tokens next = tile_ceil(static_cast<Tokens>(static_cast<double>(p) * 1.2) + 1,
                              cluster.tile_size);
      p = std::max(next, p + cluster.tile_size);
    }
    pts.push_back(max_len);
    return pts;
  };
  g.q_points = make_points(std::max<Tokens>(1, cluster.tile_size / 4));
  g.kv_points = make_points(std::max<Tokens>(1, cluster.tile_size / 4));

  g.latency_s.resize(g.q_points.size() * g.kv_points.size());
  for (std::size_t qi = 0; qi < g.q_points.size(); ++qi) {
    for (std::size_t ki = 0; ki < g.kv_points.size(); ++ki) {
      // Sub-tile extents run at the padded tile's latency.
      const Tokens q = std::max(g.q_points[qi], g.tile_size);
      const Tokens kv = std::max(g.kv_points[ki], q);
      g.latency_s[qi * g.kv_points.size() + ki] =
          g.flops_at(q, kv) / g.peak_throughput;
    }
  }
  validate_grid(g);
  return g;
}

void grid_to_csv(const ProfilerGrid& g, std::ostream& out) {
  out << "q,kv,latency_s\n";
  char buf[64];
  for (std::size_t qi = 0; qi < g.q_points.size(); ++qi) {
    for (std::size_t ki = 0; ki < g.kv_points.size(); ++ki) {
      std::snprintf(buf, sizeof(buf), "%.17g", g.at(qi, ki));
      out << g.q_points[qi] << ',' << g.kv_points[ki] << ',' << buf << '\n';
    }
  }
}

ProfilerGrid grid_from_csv(std::istream& in, double peak_throughput,
                           double alpha_flops, Tokens tile_size) {
  ProfilerGrid g;
  g.peak_throughput = peak_throughput;
  g.alpha_flops = alpha_flops;
  g.tile_size = tile_size;
  std::string line;
  std::vector<std::tuple<Tokens, Tokens, double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("q,", 0) == 0) continue;  // header
    }
    std::istringstream ls(line);
    std::string qs, ks, vs;
    if (!std::getline(ls, qs, ',') || !std::getline(ls, ks, ',') ||
        !std::getline(ls, vs)) {
      throw ConfigError("bad profiler grid CSV row: " + line);
    }
    rows.emplace_back(std::stoll(qs), std::stoll(ks), std::stod(vs));
  }
  if (rows.empty()) throw ConfigError("empty profiler grid CSV");
  for (const auto& [q, kv, lat] : rows) {
    if (g.q_points.empty() || g.q_points.back() != q) {
      if (std::find(g.q_points.begin(), g.q_points.end(), q) == g.q_points.end())
        g.q_points.push_back(q);
    }
    if (std::find(g.kv_points.begin(), g.kv_points.end(), kv) == g.kv_points.end())
      g.kv_points.push_back(kv);
    (void)lat;
  }
  std::sort(g.q_points.begin(), g.q_points.end());
  std::sort(g.kv_points.begin(), g.kv_points.end());
  g.latency_s.assign(g.q_points.size() * g.kv_points.size(), 0.0);
  for (const auto& [q, kv, lat] : rows) {
    const std::size_t qi = static_cast<std::size_t>(
        std::lower_bound(g.q_points.begin(), g.q_points.end(), q) -
        g.q_points.begin());
    const std::size_t ki = static_cast<std::size_t>(
        std::lower_bound(g.kv_points.begin(), g.kv_points.end(), kv) -
        g.kv_points.begin());
    g.latency_s[qi * g.kv_points.size() + ki] = lat;
  }
  validate_grid(g);
  return g;
}

}  // namespace cadsim
