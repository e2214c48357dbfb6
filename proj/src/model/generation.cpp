#include "adrl/model/generation.hpp"

#include <random>

namespace adrl {

Distribution next_token_distribution(const ModelParams& params, const TokenSequence& prompt,
                                     std::span<const HookSpec> hooks) {
  require(!prompt.empty(), "next_token_distribution: empty prompt");
  const ForwardResult r = forward(params, prompt, hooks);
  return softmax(r.logits.row(r.logits.rows() - 1).transpose());
}

double sequence_log_prob(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& continuation,
                         std::span<const HookSpec> hooks) {
  require(!prompt.empty(), "sequence_log_prob: empty prompt");
  require(!continuation.empty(), "sequence_log_prob: empty continuation");
  TokenSequence full = prompt;
  full.ids.insert(full.ids.end(), continuation.ids.begin(), continuation.ids.end() - 1);
  const ForwardResult r = forward(params, full, hooks);
  double total = 0.0;
  for (int m = 0; m < continuation.size(); ++m) {
    const int pos = prompt.size() - 1 + m;
    const Vector lp = log_softmax(r.logits.row(pos).transpose());
    total += lp[continuation.ids[static_cast<std::size_t>(m)]];
  }
  return total / continuation.size();
}

double sequence_prob(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& continuation,
                     std::span<const HookSpec> hooks) {
  return std::exp(sequence_log_prob(params, prompt, continuation, hooks));
}

int sample_index(const Vector& probs, double uniform) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (uniform < acc) {
      return static_cast<int>(i);
    }
  }
  return static_cast<int>(probs.size()) - 1;
}

TokenSequence generate(const ModelParams& params, const TokenSequence& prompt, int max_tokens,
                       const DecodeOptions& options) {
  require(max_tokens >= 1, "generate: max_tokens must be >= 1");
  require(!prompt.empty(), "generate: empty prompt");
  require(options.temperature > 0.0, "generate: temperature must be positive");
  std::mt19937_64 rng(options.seed);
  TokenSequence seq = prompt;
  TokenSequence out;
  for (int step = 0; step < max_tokens && seq.size() < params.config.max_seq_len; ++step) {
    const ForwardResult r = forward(params, seq);
    Vector logits = r.logits.row(r.logits.rows() - 1).transpose();
    int next = 0;
    if (options.mode == DecodeMode::greedy) {
      logits.maxCoeff(&next);
    } else {
      const Distribution d = softmax(logits / options.temperature);
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      next = sample_index(d.probs(), u);
    }
    seq.ids.push_back(next);
    out.ids.push_back(next);
  }
  return out;
}

}  // namespace adrl
