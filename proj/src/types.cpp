#include "cadsim/types.hpp"

#include <algorithm>
#include <map>

namespace cadsim {

void validate_model(const ModelConfig& c) {
  if (c.num_layers < 1 || c.hidden < 1 || c.kv_hidden < 1 ||
      c.ffn_intermediate < 1 || c.head_dim < 1 || c.num_heads < 1 ||
      c.gqa_groups < 1 || c.bytes_per_element < 1) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (c.hidden % c.num_heads != 0) {
    throw ConfigError("hidden must be divisible by num_heads");
  }
  if (c.num_heads % c.gqa_groups != 0) {
    throw ConfigError("num_heads must be divisible by gqa_groups");
  }
}

ModelConfig derive_sizes(ModelConfig c) {
  validate_model(c);
  const Bytes q = c.hidden * c.bytes_per_element;
  const Bytes kv = 2 * c.kv_hidden * c.bytes_per_element;
  if ((c.size_q != 0 && c.size_q != q) || (c.size_kv != 0 && c.size_kv != kv)) {
    throw ConfigError("stored size_q/size_kv disagree with dimensions");
  }
  c.size_q = q;
  c.size_kv = kv;
  return c;
}

void validate_cluster(const ClusterConfig& c) {
  if (c.num_gpus < 1 || c.tp < 1 || c.pp < 1 || c.dp < 1 || c.cp < 1) {
    throw ConfigError("cluster degrees must all be positive");
  }
  if (c.tp * c.pp * c.dp * c.cp > c.num_gpus) {
    throw ConfigError("tp*pp*dp*cp exceeds num_gpus");
  }
  if (c.num_gpus % c.tp != 0) {
    throw ConfigError("num_gpus must be divisible by tp");
  }
  if (!(c.interconnect_bandwidth > 0)) {
    throw ConfigError("interconnect_bandwidth must be positive");
  }
  if (!(c.mfu_linear > 0) || c.mfu_linear > 1.0) {
    throw ConfigError("mfu_linear must be in (0,1]");
  }
  if (!(c.peak_flops > 0)) {
    throw ConfigError("peak_flops must be positive");
  }
  if (c.tile_size < 1) {
    throw ConfigError("tile_size must be >= 1");
  }
}

void validate_item(const Item& it) {
  if (it.q_end <= it.q_begin) {
    throw DomainError("item query range is empty");
  }
  if (it.q_begin < 0) {
    throw DomainError("item query range is negative");
  }
  if (it.kv_extent != it.q_end) {
    throw DomainError("item kv_extent must equal q_end");
  }
  if (it.layout == Layout::head_tail) {
    // Head [q_begin,q_end) and tail [m-q_end, m-q_begin) must not overlap.
    if (it.ht_mirror < 2 * it.q_end) {
      throw DomainError("head_tail halves overlap (ht_mirror < 2*q_end)");
    }
  }
}

std::vector<ChunkingViolation> validate_chunking(
    const std::vector<Document>& documents, const std::vector<Chunk>& chunks) {
  std::vector<ChunkingViolation> out;
  std::map<DocId, std::vector<Segment>> by_doc;
  for (const Chunk& ch : chunks) {
    for (const Segment& s : ch.segments) by_doc[s.doc].push_back(s);
  }
  for (const Document& d : documents) {
    auto it = by_doc.find(d.id);
    if (it == by_doc.end()) {
      out.push_back({d.id, 0, ChunkingViolation::Kind::gap});
      continue;
    }
    auto segs = it->second;
    std::sort(segs.begin(), segs.end(),
              [](const Segment& a, const Segment& b) { return a.begin < b.begin; });
    Tokens cursor = 0;
    for (const Segment& s : segs) {
      if (s.begin < 0 || s.end > d.length) {
        out.push_back({d.id, s.begin, ChunkingViolation::Kind::out_of_range});
        continue;
      }
      if (s.begin > cursor) {
        out.push_back({d.id, cursor, ChunkingViolation::Kind::gap});
      } else if (s.begin < cursor) {
        out.push_back({d.id, s.begin, ChunkingViolation::Kind::overlap});
      }
      cursor = std::max(cursor, s.end);
    }
    if (cursor < d.length) {
      out.push_back({d.id, cursor, ChunkingViolation::Kind::gap});
    }
    by_doc.erase(it);
  }
  // Segments for unknown documents.
  for (const auto& [doc, segs] : by_doc) {
    out.push_back({doc, segs.front().begin, ChunkingViolation::Kind::out_of_range});
  }
  return out;
}

std::vector<Item> chunk_items(const std::vector<Chunk>& chunks) {
  std::vector<Item> items;
  for (const Chunk& ch : chunks) {
    for (const Segment& s : ch.segments) {
      Item it;
      it.doc = s.doc;
      it.q_begin = s.begin;
      it.q_end = s.end;
      it.kv_extent = s.end;
      it.home_device = ch.device;
      it.layout = Layout::contiguous;
      items.push_back(it);
    }
  }
  return items;
}

}  // namespace cadsim
