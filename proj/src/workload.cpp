#include "cadsim/workload.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace cadsim {

namespace {

Tokens clamp_len(double x, Tokens max_len) {
  if (!(x >= 1.0)) return 1;
  if (x >= static_cast<double>(max_len)) return max_len;
  return static_cast<Tokens>(x);
}

Tokens draw_one(const LengthDistribution& d, std::mt19937_64& rng) {
  switch (d.kind) {
    case DistKind::fixed:
      return std::min(d.fixed_len, d.max_doc_len);
    case DistKind::uniform: {
      std::uniform_int_distribution<Tokens> u(std::max<Tokens>(1, d.uniform_min),
                                              d.max_doc_len);
      return u(rng);
    }
    case DistKind::custom_histogram: {
      double total = 0;
      for (const auto& [len, p] : d.histogram) total += p;
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (const auto& [len, p] : d.histogram) {
        r -= p;
        if (r <= 0) return std::clamp<Tokens>(len, 1, d.max_doc_len);
      }
      return std::clamp<Tokens>(d.histogram.back().first, 1, d.max_doc_len);
    }
    case DistKind::pretrain_upsampled:
    case DistKind::prolong_like: {
      std::lognormal_distribution<double> base(d.log_mu, d.log_sigma);
      std::lognormal_distribution<double> heavy(d.long_log_mu, d.long_log_sigma);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      for (int attempt = 0; attempt < 4096; ++attempt) {
        double x;
        if (d.kind == DistKind::prolong_like && u01(rng) < d.long_mix_weight) {
          x = heavy(rng);
        } else {
          x = base(rng);
        }
        if (x > static_cast<double>(d.max_doc_len)) continue;
        const Tokens len = clamp_len(x, d.max_doc_len);
        if (len < d.min_len_threshold && u01(rng) < d.upsample_drop_prob) {
          continue;  // filtered out: upsamples the long tail
        }
        return len;
      }
      return d.max_doc_len;  // pathological parameters; keep progress
    }
  }
  throw ConfigError("unknown distribution kind");
}

}  // namespace

std::vector<Document> sample_batch(const LengthDistribution& dist,
                                   Tokens total_tokens) {
  if (total_tokens < 1) throw DomainError("total_tokens must be >= 1");
  if (dist.kind == DistKind::custom_histogram && dist.histogram.empty()) {
    throw ConfigError("custom_histogram distribution has no entries");
  }
  std::mt19937_64 rng(dist.seed);
  std::vector<Document> docs;
  Tokens sum = 0;
  DocId next_id = 0;
  while (sum < total_tokens) {
    Tokens len = draw_one(dist, rng);
    len = std::min(len, total_tokens - sum);  // truncate the final document
    docs.push_back({next_id++, len});
    sum += len;
  }
  return docs;
}

std::vector<Chunk> pack_fixed(const std::vector<Document>& documents,
                              Tokens tokens_per_chunk, std::int64_t num_chunks) {
  if (tokens_per_chunk < 1 || num_chunks < 1) {
    throw ConfigError("pack_fixed: chunk shape must be positive");
  }
  Tokens total = 0;
  for (const Document& d : documents) total += d.length;
  if (total != tokens_per_chunk * num_chunks) {
    throw ConfigError("pack_fixed: token total does not match chunk layout");
  }
  std::vector<Chunk> chunks(static_cast<std::size_t>(num_chunks));
  for (std::int64_t i = 0; i < num_chunks; ++i) {
    chunks[static_cast<std::size_t>(i)].device = static_cast<DeviceId>(i);
  }
  std::size_t ci = 0;
  Tokens room = tokens_per_chunk;
  for (const Document& d : documents) {
    Tokens placed = 0;
    while (placed < d.length) {
      if (room == 0) {
        ++ci;
        room = tokens_per_chunk;
      }
      const Tokens take = std::min(room, d.length - placed);
      Chunk& ch = chunks[ci];
      ch.segments.push_back({d.id, placed, placed + take});
      ch.total_tokens += take;
      placed += take;
      room -= take;
    }
  }
  return chunks;
}

std::vector<Chunk> place_sequential(const std::vector<Document>& documents,
                                    std::int64_t num_devices,
                                    Tokens tokens_per_device) {
  return pack_fixed(documents, tokens_per_device, num_devices);
}

LengthDistribution histogram_from_csv(std::istream& in, Tokens max_doc_len,
                                      std::uint64_t seed) {
  LengthDistribution d;
  d.kind = DistKind::custom_histogram;
  d.max_doc_len = max_doc_len;
  d.seed = seed;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("length", 0) == 0) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b)) {
      throw ConfigError("bad histogram CSV row: " + line);
    }
    d.histogram.emplace_back(std::stoll(a), std::stod(b));
  }
  if (d.histogram.empty()) throw ConfigError("empty histogram CSV");
  return d;
}

void batch_to_csv(const std::vector<Document>& documents, std::ostream& out) {
  out << "doc,length\n";
  for (const Document& d : documents) out << d.id << ',' << d.length << '\n';
}

}  // namespace cadsim
