#pragma once

#include "adrl/evaluation/case.hpp"
#include "adrl/model/params.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adrl {

struct ProbPair {
  double p_true = 0.0;
  double p_edit = 0.0;
};

/// Length-normalized probabilities of both objects after `prompt`.
ProbPair score_pair(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& o_true,
                    const TokenSequence& o_edit);

enum class MetricKind { efficacy, paraphrase, neighborhood, relation, distract };
inline constexpr std::array<MetricKind, 5> kMetricKinds = {MetricKind::efficacy, MetricKind::paraphrase,
                                                           MetricKind::neighborhood, MetricKind::relation,
                                                           MetricKind::distract};

std::string score_name(MetricKind k);      // ES, PS, NS, RS, DNS
MetricKind parse_metric(const std::string& score_name);
std::string magnitude_name(MetricKind k);  // EM, PM, NM, RM, DNM
bool favors_edit(MetricKind k);            // efficacy and paraphrase reward o_edit

/// Probability pairs of every prompt of one kind in one case.
std::vector<ProbPair> prompt_pairs(const ModelParams& params, const Vocabulary& vocab, const EvalCase& c,
                                   MetricKind kind);

struct MetricSummary {
  double score = 0.0;      // percentage of prompts where the favored object wins; per-case first
  double magnitude = 0.0;  // mean probability of the favored object x 100; per-case first
  double score_half_width = 0.0;
  double magnitude_half_width = 0.0;
  double flat_score = 0.0;  // pooled over all prompts
  double flat_magnitude = 0.0;
  int n_cases = 0;
  int n_prompts = 0;
};

/// Absent when no case has prompts of this kind.
std::optional<MetricSummary> summarize(MetricKind kind, const std::vector<std::vector<ProbPair>>& per_case);

std::optional<MetricSummary> metric(const ModelParams& params, const Vocabulary& vocab,
                                    const std::vector<EvalCase>& cases, MetricKind kind);
std::optional<MetricSummary> efficacy(const ModelParams& params, const Vocabulary& vocab,
                                      const std::vector<EvalCase>& cases);
std::optional<MetricSummary> paraphrase(const ModelParams& params, const Vocabulary& vocab,
                                        const std::vector<EvalCase>& cases);
std::optional<MetricSummary> neighborhood(const ModelParams& params, const Vocabulary& vocab,
                                          const std::vector<EvalCase>& cases);
std::optional<MetricSummary> relation(const ModelParams& params, const Vocabulary& vocab,
                                      const std::vector<EvalCase>& cases);
std::optional<MetricSummary> distract_neighborhood(const ModelParams& params, const Vocabulary& vocab,
                                                   const std::vector<EvalCase>& cases);

struct FluencyOptions {
  int gen_len = 12;
  double w2 = 1.0 / 3.0;
  double w3 = 2.0 / 3.0;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

/// w2 * H2 + w3 * H3 of a token stream, in bits.
double ngram_mix(std::span<const int> tokens, const FluencyOptions& options);

/// Mean n-gram entropy mix of sampled continuations x 100. Continuation i is sampled with
/// seed options.seed + i.
double fluency(const ModelParams& params, const std::vector<TokenSequence>& prompts, const FluencyOptions& options);

/// Harmonic mean of ES, PS, NS, RS, DNS; 0 if any input is 0.
double avg_score(double es, double ps, double ns, double rs, double dns);

struct CaseScores {
  std::string case_id;
  std::array<std::vector<ProbPair>, 5> pairs;  // indexed by MetricKind
  std::vector<double> fluency;                 // per generation prompt, unscaled
};

struct EvalOptions {
  std::array<bool, 5> kinds = {true, true, true, true, true};  // indexed by MetricKind
  bool with_fluency = true;
  FluencyOptions fluency;
  int threads = 1;
};

CaseScores score_case(const ModelParams& params, const Vocabulary& vocab, const EvalCase& c, std::size_t case_index,
                      const EvalOptions& options);

struct EvalReport {
  std::array<std::optional<MetricSummary>, 5> metrics;  // indexed by MetricKind
  std::optional<double> fluency;
  double fluency_half_width = 0.0;
  std::optional<double> avg_score;
  std::vector<CaseScores> cases;

  const std::optional<MetricSummary>& operator[](MetricKind k) const {
    return metrics[static_cast<std::size_t>(k)];
  }
};

EvalReport assemble_report(std::vector<CaseScores> cases);
EvalReport evaluate(const ModelParams& params, const Vocabulary& vocab, const std::vector<EvalCase>& cases,
                    const EvalOptions& options = {});

nlohmann::json report_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
/// One row per metric: metric,value,half_width,flat_value,n_cases.
std::string report_csv(const EvalReport& r);

}  // namespace adrl
