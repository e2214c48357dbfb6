#pragma once

#include "adrl/common.hpp"

#include <span>

namespace adrl {

// Floor applied to the second argument of a KL divergence before the log.
inline constexpr double kKlFloor = 1e-12;

/// A probability vector: non-negative entries summing to 1 (within 1e-9).
class Distribution {
 public:
  Distribution() = default;
  explicit Distribution(Vector probs);

  const Vector& probs() const { return probs_; }
  double operator[](Eigen::Index i) const { return probs_[i]; }
  Eigen::Index size() const { return probs_.size(); }
  Eigen::Index argmax() const;

 private:
  Vector probs_;
};

Distribution softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

/// KL(p || q) = sum_i p_i log(p_i / max(q_i, kKlFloor)); terms with p_i = 0 vanish.
double kl_divergence(const Distribution& p, const Distribution& q);
double kl_divergence(const Eigen::Ref<const RowVector>& p, const Eigen::Ref<const RowVector>& q);

/// Shannon entropy in bits of the empirical n-gram distribution of `tokens`.
double ngram_entropy(std::span<const int> tokens, int n);

}  // namespace adrl
