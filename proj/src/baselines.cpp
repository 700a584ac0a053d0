#include "cadsim/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "cadsim/comm.hpp"
#include "cadsim/workload.hpp"

namespace cadsim {

namespace {

void fill_costs(BaselineAssignment& a, const CostCoefficients& coeff) {
  a.per_device_flops.assign(a.chunks.size(), 0.0);
  a.per_device_memory.assign(a.chunks.size(), 0.0);
  if (a.comm_bytes.size() != a.chunks.size()) {
    a.comm_bytes.assign(a.chunks.size(), 0);
  }
  for (std::size_t d = 0; d < a.chunks.size(); ++d) {
    for (const Item& it : a.per_device_items[d]) {
      a.per_device_flops[d] += ca_flops(it, coeff);
    }
    a.per_device_memory[d] += activation_memory(a.chunks[d], coeff);
  }
}

}  // namespace

BaselineAssignment assign_fixed(const std::vector<Document>& documents,
                                std::int64_t devices, Tokens tokens_per_chunk,
                                const ModelConfig& model,
                                const CostCoefficients& coeff) {
  (void)model;
  BaselineAssignment a;
  a.strategy = PackingStrategy::fixed_packing;
  a.chunks = pack_fixed(documents, tokens_per_chunk, devices);
  a.per_device_items.resize(a.chunks.size());
  for (const Item& it : chunk_items(a.chunks)) {
    a.per_device_items[static_cast<std::size_t>(it.home_device)].push_back(it);
  }
  fill_costs(a, coeff);
  return a;
}

BaselineAssignment assign_varlen(const std::vector<Document>& documents,
                                 std::int64_t devices, const ModelConfig& model,
                                 const CostCoefficients& coeff) {
  (void)model;
  if (devices < 1) throw ConfigError("assign_varlen: devices must be >= 1");
  BaselineAssignment a;
  a.strategy = PackingStrategy::varlen;
  a.chunks.resize(static_cast<std::size_t>(devices));
  a.per_device_items.resize(static_cast<std::size_t>(devices));
  for (std::int64_t d = 0; d < devices; ++d) {
    a.chunks[static_cast<std::size_t>(d)].device = static_cast<DeviceId>(d);
  }
  // Longest-processing-time on the squared lengths: heaviest document to the
  // device with the smallest squared sum.
  std::vector<std::size_t> order(documents.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const Tokens lx = documents[x].length, ly = documents[y].length;
    return lx != ly ? lx > ly : documents[x].id < documents[y].id;
  });
  std::vector<std::int64_t> sq(static_cast<std::size_t>(devices), 0);
  for (std::size_t i : order) {
    const std::size_t d = static_cast<std::size_t>(
        std::min_element(sq.begin(), sq.end()) - sq.begin());
    const Document& doc = documents[i];
    sq[d] += doc.length * doc.length;
    Chunk& ch = a.chunks[d];
    ch.segments.push_back({doc.id, 0, doc.length});
    ch.total_tokens += doc.length;
    Item it;
    it.doc = doc.id;
    it.q_begin = 0;
    it.q_end = doc.length;
    it.kv_extent = doc.length;
    it.home_device = static_cast<DeviceId>(d);
    a.per_device_items[d].push_back(it);
  }
  fill_costs(a, coeff);
  return a;
}

std::vector<Item> head_tail_partition(DocId doc, Tokens begin, Tokens end,
                                      std::int64_t cp_degree,
                                      DeviceId first_rank) {
  if (cp_degree < 1) throw DomainError("cp_degree must be >= 1");
  const Tokens span = end - begin;
  if (span < 1) throw DomainError("empty span");
  const Tokens mirror = begin + end;
  std::vector<Item> items;
  // Mirror-symmetric boundaries: p[2c-k] = mirror - p[k], so the pair
  // (k, 2c-1-k) carries exactly equal work regardless of position.
  std::vector<Tokens> p(static_cast<std::size_t>(2 * cp_degree + 1));
  for (std::int64_t k = 0; k <= cp_degree; ++k) {
    p[static_cast<std::size_t>(k)] = begin + (span * k) / (2 * cp_degree);
  }
  for (std::int64_t k = cp_degree + 1; k <= 2 * cp_degree; ++k) {
    p[static_cast<std::size_t>(k)] =
        mirror - p[static_cast<std::size_t>(2 * cp_degree - k)];
  }
  for (std::int64_t k = 0; k < cp_degree; ++k) {
    const Tokens lo = p[static_cast<std::size_t>(k)];
    const Tokens hi = p[static_cast<std::size_t>(k + 1)];
    if (hi <= lo) continue;  // span shorter than 2*cp: rank gets nothing
    Item it;
    it.doc = doc;
    it.q_begin = lo;
    it.q_end = hi;
    it.kv_extent = hi;
    it.ht_mirror = mirror;
    it.layout = Layout::head_tail;
    it.home_device = first_rank + static_cast<DeviceId>(k);
    items.push_back(it);
  }
  // Odd spans leave an unpaired middle slice; the last rank takes it as a
  // plain contiguous shard so every token is covered exactly once.
  const Tokens mid_lo = p[static_cast<std::size_t>(cp_degree)];
  const Tokens mid_hi = mirror - mid_lo;
  if (mid_hi > mid_lo) {
    Item it;
    it.doc = doc;
    it.q_begin = mid_lo;
    it.q_end = mid_hi;
    it.kv_extent = mid_hi;
    it.layout = Layout::contiguous;
    it.home_device = first_rank + static_cast<DeviceId>(cp_degree - 1);
    items.push_back(it);
  }
  return items;
}

BaselineAssignment assign_per_doc_cp(const std::vector<Document>& documents,
                                     std::int64_t devices, std::int64_t cp_degree,
                                     const ModelConfig& model,
                                     const CostCoefficients& coeff) {
  if (cp_degree < 1) throw ConfigError("cp_degree must be >= 1");
  if (devices < 1 || devices % cp_degree != 0) {
    throw ConfigError("cp_degree must divide the device count");
  }
  Tokens total = 0;
  for (const Document& d : documents) total += d.length;
  if (cp_degree == 1) {
    if (total % devices != 0) {
      throw ConfigError("token total not divisible by device count");
    }
    BaselineAssignment a =
        assign_fixed(documents, devices, total / devices, model, coeff);
    a.strategy = PackingStrategy::per_doc_cp;
    return a;
  }
  const std::int64_t groups = devices / cp_degree;
  if (total % groups != 0) {
    throw ConfigError("token total not divisible by CP group count");
  }
  const std::vector<Chunk> group_chunks =
      pack_fixed(documents, total / groups, groups);

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
    const Chunk& gc = group_chunks[static_cast<std::size_t>(g)];
    const DeviceId first_rank = static_cast<DeviceId>(g * cp_degree);
    const Bytes ag = allgather_volume_cp(gc, cp_degree, model);
    for (std::int64_t k = 0; k < cp_degree; ++k) {
      a.comm_bytes[static_cast<std::size_t>(first_rank + k)] = ag;
    }
    for (const Segment& seg : gc.segments) {
      for (const Item& it :
           head_tail_partition(seg.doc, seg.begin, seg.end, cp_degree, first_rank)) {
        const std::size_t rank = static_cast<std::size_t>(it.home_device);
        a.per_device_items[rank].push_back(it);
        Chunk& ch = a.chunks[rank];
        ch.segments.push_back({it.doc, it.q_begin, it.q_end});
        ch.total_tokens += it.query_tokens();
        if (it.layout == Layout::head_tail) {
          ch.segments.push_back({it.doc, it.ht_mirror - it.q_end,
                                 it.ht_mirror - it.q_begin});
          ch.total_tokens += it.query_tokens();
        }
      }
      // The group's last rank stores the aggregated KV states for backward.
      kv_surcharge[static_cast<std::size_t>(first_rank + cp_degree - 1)] +=
          static_cast<double>(seg.end) * static_cast<double>(model.size_kv);
    }
  }
  fill_costs(a, coeff);
  for (std::size_t d = 0; d < a.per_device_memory.size(); ++d) {
    a.per_device_memory[d] += kv_surcharge[d];
  }
  return a;
}

}  // namespace cadsim
