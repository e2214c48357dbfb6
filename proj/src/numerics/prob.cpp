#include "adrl/numerics/prob.hpp"

#include <map>
#include <vector>

namespace adrl {

Distribution::Distribution(Vector probs) : probs_(std::move(probs)) {
  require(probs_.size() > 0, "distribution must be nonempty");
  require(all_finite(probs_), "distribution has non-finite entries");
  require((probs_.array() >= 0.0).all(), "distribution has negative entries");
  require(std::abs(probs_.sum() - 1.0) <= 1e-9, "distribution does not sum to 1");
}

Eigen::Index Distribution::argmax() const {
  Eigen::Index idx = 0;
  probs_.maxCoeff(&idx);
  return idx;
}

Distribution softmax(const Vector& logits) {
  require(logits.size() > 0, "softmax of an empty vector");
  require(all_finite(logits), "softmax input contains NaN or Inf");
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  e /= e.sum();
  return Distribution(std::move(e));
}

Vector log_softmax(const Vector& logits) {
  require(logits.size() > 0, "log_softmax of an empty vector");
  require(all_finite(logits), "log_softmax input contains NaN or Inf");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

double kl_divergence(const Eigen::Ref<const RowVector>& p, const Eigen::Ref<const RowVector>& q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch (" + std::to_string(p.size()) +
                                    " vs " + std::to_string(q.size()) + ")");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
    }
  }
  return kl;
}

double kl_divergence(const Distribution& p, const Distribution& q) {
  return kl_divergence(p.probs().transpose(), q.probs().transpose());
}

double ngram_entropy(std::span<const int> tokens, int n) {
  require(n >= 1, "ngram order must be >= 1");
  require(tokens.size() >= static_cast<std::size_t>(n),
          "sequence of length " + std::to_string(tokens.size()) + " is shorter than n=" + std::to_string(n));
  std::map<std::vector<int>, int> counts;
  const std::size_t total = tokens.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  double h = 0.0;
  for (const auto& [gram, c] : counts) {
    const double f = static_cast<double>(c) / static_cast<double>(total);
    h -= f * std::log2(f);
  }
  return h;
}

}  // namespace adrl
