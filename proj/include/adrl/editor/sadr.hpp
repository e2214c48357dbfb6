#pragma once

#include "adrl/model/transformer.hpp"

#include <vector>

namespace adrl {

struct HeadSelection {
  int context = 0;
  int layer = 0;
  int head = 0;
  bool operator==(const HeadSelection&) const = default;
};

// Margin a weight must clear to count as exceeding the vanilla maximum; it absorbs
// rounding differences between forward passes that are equal in exact arithmetic.
inline constexpr double kDriftTolerance = 1e-12;

/// H_l(S) from last-token attention rows ([H x T] each): heads whose edited weight on
/// `subject_last` strictly exceeds the largest vanilla weight on it at this layer.
std::vector<int> select_drift_heads(const Matrix& vanilla_rows, const Matrix& edited_rows, int subject_last);
std::vector<int> select_drift_heads(const ActivationCache& vanilla, const ActivationCache& edited, int subject_last,
                                    int layer);

/// Last-token attention rows of every head, [H x T].
Matrix last_token_rows(const ActivationCache& cache, int layer);

/// Vanilla attention of one context, kept as the regularizer's reference.
struct SadrReference {
  int subject_last = 0;
  int query = 0;             // position of the prompt's last token
  std::vector<Matrix> rows;  // per layer, [H x (query + 1)]
};

SadrReference make_sadr_reference(const ActivationCache& vanilla, int subject_last);

struct SadrOptions {
  int layer_lo = 0;
  int layer_hi = 0;  // inclusive
  bool all_heads = false;
};

struct SadrTerm {
  ad::Var loss;  // 1 x 1
  std::vector<HeadSelection> selected;
};

/// (1/N) sum_j sum_l sum_{h in H_l(S_j)} KL(vanilla row || edited row), read from a packed
/// graph whose first refs.size() sequences start with the contexts S_j. Head sets are taken from
/// the graph's current values and enter the loss as constants.
SadrTerm sadr_term(ad::Tape& tape, const GraphOutputs& graph, const ad::Segments& segs,
                   std::span<const SadrReference> refs, const SadrOptions& options);

struct SadrValue {
  double loss = 0.0;
  std::vector<HeadSelection> selected;
};

/// L_SADR with z substituted as mlp_out at (layer, subject-last token) in every context.
SadrValue sadr_loss(const ModelParams& params, const Vector& z, int layer, std::span<const TokenSequence> contexts,
                    std::span<const ActivationCache> vanilla_caches, const SadrOptions& options);

}  // namespace adrl
