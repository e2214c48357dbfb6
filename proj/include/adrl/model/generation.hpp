#pragma once

#include "adrl/model/transformer.hpp"
#include "adrl/numerics/prob.hpp"

#include <cstdint>

namespace adrl {

Distribution next_token_distribution(const ModelParams& params, const TokenSequence& prompt,
                                     std::span<const HookSpec> hooks = {});

/// Mean per-token log-probability of `continuation` following `prompt`.
/// Hooks index positions of the concatenated sequence.
double sequence_log_prob(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& continuation,
                         std::span<const HookSpec> hooks = {});

/// exp(sequence_log_prob): the length-normalized probability used by every metric.
double sequence_prob(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& continuation,
                     std::span<const HookSpec> hooks = {});

enum class DecodeMode { greedy, sample };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::greedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

/// Returns only the generated tokens; stops early at max_seq_len.
TokenSequence generate(const ModelParams& params, const TokenSequence& prompt, int max_tokens,
                       const DecodeOptions& options = {});

/// Inverse-CDF draw from `dist` with a uniform in [0,1).
int sample_index(const Vector& probs, double uniform);

}  // namespace adrl
