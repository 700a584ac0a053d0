#pragma once

#include <iosfwd>
#include <vector>

#include "cadsim/types.hpp"

namespace cadsim {

/// Coefficients of the analytical cost model: per-document compute is
/// alpha_ca * l^2 + beta_linear * l FLOPs, activation memory gamma_mem * l
/// bytes. Values cover all layers unless noted otherwise.
struct CostCoefficients {
  double alpha_ca = 0;     // FLOPs per token-pair under the causal mask
  double beta_linear = 0;  // context-independent FLOPs per token
  double gamma_mem = 0;    // activation bytes per token
};

/// Context-independent FLOPs for one token in one layer: QKVO projections
/// plus the gated FFN, counting one multiply and one add per element pair.
double linear_flops_per_token(const ModelConfig& config);

/// alpha = 4 * hidden * num_layers (score and PV matmuls per token pair),
/// beta = linear_flops_per_token * num_layers, gamma = 17 * hidden *
/// bytes_per_element * num_layers. alpha/beta/gamma may be overridden in
/// experiment configs for abstract studies.
CostCoefficients derive_coefficients(const ModelConfig& config);

/// Unit-alpha core-attention work of an item, exact in integer arithmetic.
/// contiguous: n_q * (2*kv_extent - n_q). head_tail: the head term plus the
/// mirrored tail term, which collapses to 2 * n_q * ht_mirror.
///
/// The measure is the continuous causal-mask count; the exact pair count is
/// n_q * (2*n_kv - n_q + 1) / 2, i.e. the measure undercounts doubled pairs
/// by exactly n_q (under 0.1% beyond a thousand context tokens). Whole
/// documents come out as length^2 either way, so partition sums telescope
/// exactly.
std::int64_t ca_flops_core(const Item& item);

double ca_flops(const Item& item, const CostCoefficients& coeff);

struct BalanceCheck {
  bool tokens_equal = false;
  bool sq_equal = false;
};

/// Evaluates the twin balance conditions (equal token sums, equal squared
/// sums) exactly on the two chunks' segment lengths.
BalanceCheck balance_conditions(const Chunk& a, const Chunk& b);

/// gamma_mem * total_tokens. Strategy-specific surcharges (e.g. the CP
/// last-rank KV copy) are added by the baselines module.
double activation_memory(const Chunk& chunk, const CostCoefficients& coeff);

/// Measured (or synthesized) core-attention kernel latencies over a grid of
/// query/key-value extents, for one kernel call (one layer).
struct ProfilerGrid {
  std::vector<Tokens> q_points;   // sorted ascending
  std::vector<Tokens> kv_points;  // sorted ascending
  std::vector<double> latency_s;  // row-major [q_index][kv_index]
  double peak_throughput = 0;     // FLOPs/s in the saturation region
  double alpha_flops = 0;         // FLOPs per token-pair of one kernel call
  Tokens tile_size = kDefaultTileSize;

  double at(std::size_t qi, std::size_t ki) const {
    return latency_s[qi * kv_points.size() + ki];
  }
  double flops_at(Tokens n_q, Tokens n_kv) const {
    return alpha_flops * static_cast<double>(n_q) *
           static_cast<double>(2 * n_kv - n_q);
  }
};

void validate_grid(const ProfilerGrid& grid);

/// Predicted kernel seconds for a (n_q, n_kv) extent pair. Extents below
/// tile_size are charged as one full tile. Inside the grid hull the value is
/// bilinear over the four nearest points unless the point sits in the
/// saturation region (throughput >= 98% of peak), where flops/peak is used;
/// beyond the hull only saturated points are accepted.
double profile_lookup(const ProfilerGrid& grid, Tokens n_q, Tokens n_kv);

/// Builds a grid from the analytical model. Throughput saturates at
/// mfu_linear * peak_flops; points below the tile carry the padded-tile
/// latency, which matches the throughput dip of real kernels on tiny shards.
ProfilerGrid synth_grid(const ModelConfig& config, const ClusterConfig& cluster,
                        Tokens max_len);

/// CSV schema: header "q,kv,latency_s", one row per grid point. Lets users
/// substitute measured kernel grids.
void grid_to_csv(const ProfilerGrid& grid, std::ostream& out);
ProfilerGrid grid_from_csv(std::istream& in, double peak_throughput,
                           double alpha_flops, Tokens tile_size);

}  // namespace cadsim
