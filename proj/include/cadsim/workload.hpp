#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "cadsim/types.hpp"

namespace cadsim {

enum class DistKind : std::uint8_t {
  pretrain_upsampled,
  prolong_like,
  uniform,
  fixed,
  custom_histogram,
};

/// Document-length distribution. Sampling is deterministic per seed; all
/// samples land in [1, max_doc_len].
///
/// pretrain_upsampled: truncated log-normal base shape; documents shorter
/// than min_len_threshold are dropped with probability upsample_drop_prob
/// and resampled, which upsamples the long tail.
/// prolong_like: the same base mixed with a heavier long component.
struct LengthDistribution {
  DistKind kind = DistKind::fixed;
  Tokens max_doc_len = 1 << 20;
  Tokens min_len_threshold = 0;
  std::uint64_t seed = 0;

  double log_mu = std::log(2048.0);
  double log_sigma = 1.4;
  double upsample_drop_prob = 0.8;
  double long_mix_weight = 0.3;
  double long_log_mu = std::log(65536.0);
  double long_log_sigma = 0.7;
  Tokens fixed_len = 1024;
  Tokens uniform_min = 1;
  std::vector<std::pair<Tokens, double>> histogram;  // custom_histogram
};

/// Samples documents until the cumulative length reaches total_tokens,
/// truncating the final document to hit the total exactly. Document ids are
/// assigned 0,1,2,... in sampling order.
std::vector<Document> sample_batch(const LengthDistribution& dist,
                                   Tokens total_tokens);

/// First-fit sequential packing into num_chunks chunks of exactly
/// tokens_per_chunk tokens each; documents split across chunk boundaries as
/// needed. Requires sum(lengths) == tokens_per_chunk * num_chunks.
std::vector<Chunk> pack_fixed(const std::vector<Document>& documents,
                              Tokens tokens_per_chunk, std::int64_t num_chunks);

/// Sequential placement: device k holds tokens [k*T, (k+1)*T) of the
/// concatenated documents, so per-device token counts (and activation
/// memory) are equal by construction.
std::vector<Chunk> place_sequential(const std::vector<Document>& documents,
                                    std::int64_t num_devices,
                                    Tokens tokens_per_device);

/// CSV schema "length,probability"; probabilities are normalized.
LengthDistribution histogram_from_csv(std::istream& in, Tokens max_doc_len,
                                      std::uint64_t seed);

/// CSV schema "doc,length".
void batch_to_csv(const std::vector<Document>& documents, std::ostream& out);

}  // namespace cadsim
