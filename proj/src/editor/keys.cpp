#include "adrl/editor/keys.hpp"

#include "adrl/model/generation.hpp"

#include <iostream>
#include <random>

namespace adrl {

std::vector<TokenSequence> generate_prefixes(const ModelParams& params, int n, std::uint64_t seed, int separator) {
  require(n >= 1, "generate_prefixes: n must be >= 1");
  require(separator >= 0 && separator < params.config.vocab_size, "generate_prefixes: separator outside vocabulary");
  std::vector<TokenSequence> out(1);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> length(1, 9);
  TokenSequence start;
  start.ids = {separator};
  for (int j = 1; j < n; ++j) {
    DecodeOptions opt;
    opt.mode = DecodeMode::sample;
    opt.seed = rng();
    TokenSequence p = generate(params, start, length(rng), opt);
    p.ids.push_back(separator);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<TokenSequence> make_contexts(std::span<const TokenSequence> prefixes, const TokenSequence& prompt) {
  std::vector<TokenSequence> out;
  out.reserve(prefixes.size());
  for (const TokenSequence& p : prefixes) {
    TokenSequence bare;
    bare.ids = p.ids;
    out.push_back(concat(bare, prompt));
  }
  return out;
}

Vector collect_key(const ModelParams& params, const TokenSequence& prompt, std::span<const TokenSequence> prefixes,
                   int layer) {
  require(!prefixes.empty(), "collect_key: no prefixes");
  require(layer >= 0 && layer < params.config.n_layers, "collect_key: layer out of range");
  require(prompt.subject.has_value(), "collect_key: prompt has no subject span");
  const std::vector<TokenSequence> contexts = make_contexts(prefixes, prompt);
  const std::vector<ForwardResult> runs = forward_batch(params, contexts);
  Vector k = Vector::Zero(params.config.d_ff);
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    k += runs[j].cache.mlp_key[layer].row(contexts[j].subject->end).transpose();
  }
  return k / static_cast<double>(contexts.size());
}

Matrix second_moment(const Matrix& samples) {
  require(samples.rows() > 0, "second_moment: no samples");
  Matrix c = samples.transpose() * samples / static_cast<double>(samples.rows());
  return 0.5 * (c + c.transpose());
}

Matrix CovarianceStats::regularized() const {
  if (!undersampled) {
    return c;
  }
  Matrix r = c;
  r.diagonal().array() += kUndersampledRidge * std::max(c.trace(), 1e-300) / static_cast<double>(c.rows());
  return r;
}

CovarianceStats estimate_covariance(const ModelParams& params, std::span<const TokenSequence> corpus, int layer,
                                    long max_samples) {
  require(!corpus.empty(), "estimate_covariance: empty corpus");
  require(max_samples >= 1, "estimate_covariance: max_samples must be >= 1");
  require(layer >= 0 && layer < params.config.n_layers, "estimate_covariance: layer out of range");
  const int d_ff = params.config.d_ff;
  CovarianceStats st;
  st.layer = layer;
  st.c = Matrix::Zero(d_ff, d_ff);
  constexpr std::size_t kBatch = 64;
  for (std::size_t b = 0; b < corpus.size() && st.samples < max_samples; b += kBatch) {
    const std::size_t e = std::min(corpus.size(), b + kBatch);
    const std::vector<ForwardResult> runs = forward_batch(params, corpus.subspan(b, e - b));
    for (const ForwardResult& r : runs) {
      const Matrix& k = r.cache.mlp_key[layer];
      const long take = std::min<long>(k.rows(), max_samples - st.samples);
      st.c.noalias() += k.topRows(take).transpose() * k.topRows(take);
      st.samples += take;
      if (st.samples >= max_samples) break;
    }
  }
  require(st.samples > 0, "estimate_covariance: corpus yielded no samples");
  st.c /= static_cast<double>(st.samples);
  st.c = 0.5 * (st.c + st.c.transpose()).eval();
  st.undersampled = st.samples < d_ff / 4;
  if (st.undersampled) {
    std::cerr << "warning: covariance for layer " << layer << " uses only " << st.samples << " samples (d_ff = "
              << d_ff << ")\n";
  }
  return st;
}

}  // namespace adrl
