#pragma once

#include "adrl/model/transformer.hpp"

#include <cstdint>
#include <vector>

namespace adrl {

/// Context prefixes x_j sampled from the vanilla model: the empty prefix followed by
/// n - 1 sampled sequences (each closed by `separator`, at most 10 tokens long).
std::vector<TokenSequence> generate_prefixes(const ModelParams& params, int n, std::uint64_t seed, int separator);

/// prefix ⊕ prompt for every prefix, subject spans carried over.
std::vector<TokenSequence> make_contexts(std::span<const TokenSequence> prefixes, const TokenSequence& prompt);

/// k* = mean over prefixes of the MLP key at the subject's last token.
Vector collect_key(const ModelParams& params, const TokenSequence& prompt, std::span<const TokenSequence> prefixes,
                   int layer);

struct CovarianceStats {
  int layer = 0;
  Matrix c;         // [d_ff x d_ff], uncentered second moment of MLP keys
  long samples = 0;
  bool undersampled = false;  // fewer than d_ff / 4 samples

  // C as used by the editors; undersampled estimates get an extra ridge of
  // kUndersampledRidge * trace(C) / d_ff.
  Matrix regularized() const;
};

inline constexpr double kUndersampledRidge = 1e-3;

/// (1/M) sum_m x_m x_m^T over the rows of `samples` [M x d].
Matrix second_moment(const Matrix& samples);

/// C = (1/M) sum_m k_m k_m^T over the first `max_samples` token positions of the corpus.
CovarianceStats estimate_covariance(const ModelParams& params, std::span<const TokenSequence> corpus, int layer,
                                    long max_samples);

}  // namespace adrl
