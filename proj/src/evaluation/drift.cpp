#include "adrl/evaluation/drift.hpp"

#include "adrl/evaluation/metrics.hpp"
#include "adrl/numerics/prob.hpp"
#include "adrl/numerics/stats.hpp"

#include <iomanip>
#include <limits>
#include <sstream>

namespace adrl {

LayerRange default_drift_range(int n_layers) {
  require(n_layers >= 1, "default_drift_range: no layers");
  return {n_layers / 2, n_layers - 1};
}

DriftFactors drift_factors(const ActivationCache& vanilla, const ActivationCache& edited, int subject_last,
                           LayerRange range) {
  require(vanilla.length == edited.length && vanilla.n_layers == edited.n_layers && vanilla.n_heads == edited.n_heads,
          "drift_factors: caches come from different prompts or models");
  require(range.lo >= 0 && range.lo <= range.hi && range.hi < vanilla.n_layers,
          "drift_factors: layer range [" + std::to_string(range.lo) + ", " + std::to_string(range.hi) +
              "] outside the model depth");
  const int last = vanilla.length - 1;
  require(subject_last >= 0 && subject_last <= last, "drift_factors: subject token outside the prompt");
  DriftFactors f;
  f.layer_lo = range.lo;
  f.layer_hi = range.hi;
  for (int l = range.lo; l <= range.hi; ++l) {
    double max1 = -std::numeric_limits<double>::infinity();
    double max2 = 0.0;
    for (int h = 0; h < vanilla.n_heads; ++h) {
      const RowVector w = vanilla.attention_row(l, h, last);
      const RowVector ws = edited.attention_row(l, h, last);
      f.kl += kl_divergence(w, ws);
      const double ds = w[subject_last] - ws[subject_last];
      max1 = std::max(max1, ds);
      f.factor3 += ds;
      RowVector rest = w - ws;
      rest[subject_last] = 0.0;
      max2 = std::max(max2, rest.norm());
    }
    f.factor1 += max1;
    f.factor2 += max2;
  }
  return f;
}

CaseDrift distract_drift(const ModelParams& vanilla, const ModelParams& edited, const Vocabulary& vocab,
                         const EvalCase& c, LayerRange range) {
  require(vanilla.config == edited.config, "distract_drift: models have different configurations");
  const TokenSequence o_true = vocab.tokenize(c.target_true);
  const TokenSequence o_edit = vocab.tokenize(c.target_new);
  CaseDrift out;
  out.factors.layer_lo = range.lo;
  out.factors.layer_hi = range.hi;
  for (const TestPrompt& n : c.neighborhood_prompts) {
    const DistractPrompt d = distract_prompt(vocab, c, n);
    const DriftFactors f =
        drift_factors(forward(vanilla, d.tokens).cache, forward(edited, d.tokens).cache, d.edit_subject_last, range);
    out.factors.kl += f.kl;
    out.factors.factor1 += f.factor1;
    out.factors.factor2 += f.factor2;
    out.factors.factor3 += f.factor3;
    out.p_edit += score_pair(edited, d.tokens, vocab.tokenize(n.target_true), o_edit).p_edit;
    ++out.n_prompts;
  }
  require(out.n_prompts > 0, "distract_drift: case '" + c.case_id + "' has no neighborhood prompts");
  const double inv = 1.0 / out.n_prompts;
  out.factors.kl *= inv;
  out.factors.factor1 *= inv;
  out.factors.factor2 *= inv;
  out.factors.factor3 *= inv;
  out.p_edit *= inv;
  return out;
}

double factor_value(const DriftFactors& f, const std::string& name) {
  if (name == "kl") return f.kl;
  if (name == "factor1") return f.factor1;
  if (name == "factor2") return f.factor2;
  if (name == "factor3") return f.factor3;
  throw Error("unknown drift factor '" + name + "'");
}

std::vector<CorrelationRow> correlation_report(const std::vector<DriftFactors>& factors,
                                               const std::vector<double>& p_edit) {
  require(factors.size() == p_edit.size(), "correlation_report: length mismatch");
  require(factors.size() >= 10, "correlation_report needs at least 10 cases, got " + std::to_string(factors.size()));
  std::vector<CorrelationRow> rows;
  for (const char* name : kDriftFactorNames) {
    std::vector<double> x;
    x.reserve(factors.size());
    for (const DriftFactors& f : factors) {
      x.push_back(factor_value(f, name));
    }
    const PearsonResult r = pearson(x, p_edit);
    rows.push_back({name, r.rho, r.p_value});
  }
  return rows;
}

std::string scatter_csv(const std::vector<std::string>& case_ids, const std::vector<DriftFactors>& factors,
                        const std::vector<double>& p_edit) {
  require(case_ids.size() == factors.size() && factors.size() == p_edit.size(), "scatter_csv: length mismatch");
  std::ostringstream os;
  os << std::setprecision(17) << "case_id,factor,drift,p_edit\n";
  for (std::size_t i = 0; i < factors.size(); ++i) {
    for (const char* name : kDriftFactorNames) {
      os << case_ids[i] << ',' << name << ',' << factor_value(factors[i], name) << ',' << p_edit[i] << '\n';
    }
  }
  return os.str();
}

}  // namespace adrl
