#pragma once

#include "adrl/evaluation/case.hpp"
#include "adrl/model/transformer.hpp"

#include <array>
#include <string>
#include <vector>

namespace adrl {

/// Attention-drift summaries of last-token rows; W is vanilla, W* edited, [s] the subject's
/// last token column.
struct DriftFactors {
  double kl = 0.0;       // sum_l sum_h KL(W || W*)
  double factor1 = 0.0;  // sum_l max_h (W[s] - W*[s])
  double factor2 = 0.0;  // sum_l max_h ||W[\s] - W*[\s]||_2
  double factor3 = 0.0;  // sum_l sum_h (W[s] - W*[s])
  int layer_lo = 0;
  int layer_hi = 0;
};

struct LayerRange {
  int lo = 0;
  int hi = 0;  // inclusive
};

/// [L/2, L-1].
LayerRange default_drift_range(int n_layers);

DriftFactors drift_factors(const ActivationCache& vanilla, const ActivationCache& edited, int subject_last,
                           LayerRange range);

/// Drift factors and P(o_edit) averaged over the case's distract prompts, with [s] the
/// edited subject inside the prepended sentence.
struct CaseDrift {
  DriftFactors factors;
  double p_edit = 0.0;
  int n_prompts = 0;
};

CaseDrift distract_drift(const ModelParams& vanilla, const ModelParams& edited, const Vocabulary& vocab,
                         const EvalCase& c, LayerRange range);

inline constexpr std::array<const char*, 4> kDriftFactorNames = {"kl", "factor1", "factor2", "factor3"};
double factor_value(const DriftFactors& f, const std::string& name);

struct CorrelationRow {
  std::string factor;
  double rho = 0.0;
  double p_value = 1.0;
};

/// Pearson correlation of each factor with P(o_edit); needs at least 10 cases.
std::vector<CorrelationRow> correlation_report(const std::vector<DriftFactors>& factors,
                                               const std::vector<double>& p_edit);

/// Columns case_id,factor,drift,p_edit.
std::string scatter_csv(const std::vector<std::string>& case_ids, const std::vector<DriftFactors>& factors,
                        const std::vector<double>& p_edit);

}  // namespace adrl
