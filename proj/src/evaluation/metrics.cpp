#include "adrl/evaluation/metrics.hpp"

#include "adrl/model/generation.hpp"
#include "adrl/numerics/prob.hpp"
#include "adrl/numerics/stats.hpp"
#include "adrl/parallel.hpp"

#include <iomanip>
#include <sstream>

namespace adrl {

ProbPair score_pair(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& o_true,
                    const TokenSequence& o_edit) {
  require(!o_true.empty() && !o_edit.empty(), "score_pair: empty target");
  require(o_true.ids != o_edit.ids, "score_pair: o_true and o_edit are the same sequence");
  if (o_true.size() == 1 && o_edit.size() == 1) {
    const Distribution d = next_token_distribution(params, prompt);
    return {d[o_true.ids[0]], d[o_edit.ids[0]]};
  }
  return {sequence_prob(params, prompt, o_true), sequence_prob(params, prompt, o_edit)};
}

std::string score_name(MetricKind k) {
  switch (k) {
    case MetricKind::efficacy: return "ES";
    case MetricKind::paraphrase: return "PS";
    case MetricKind::neighborhood: return "NS";
    case MetricKind::relation: return "RS";
    case MetricKind::distract: return "DNS";
  }
  return "?";
}

MetricKind parse_metric(const std::string& name) {
  for (MetricKind k : kMetricKinds) {
    if (score_name(k) == name) return k;
  }
  throw Error("unknown metric '" + name + "' (expected ES, PS, NS, RS or DNS)");
}

std::string magnitude_name(MetricKind k) {
  switch (k) {
    case MetricKind::efficacy: return "EM";
    case MetricKind::paraphrase: return "PM";
    case MetricKind::neighborhood: return "NM";
    case MetricKind::relation: return "RM";
    case MetricKind::distract: return "DNM";
  }
  return "?";
}

bool favors_edit(MetricKind k) { return k == MetricKind::efficacy || k == MetricKind::paraphrase; }

std::vector<ProbPair> prompt_pairs(const ModelParams& params, const Vocabulary& vocab, const EvalCase& c,
                                   MetricKind kind) {
  const TokenSequence o_true = vocab.tokenize(c.target_true);
  const TokenSequence o_edit = vocab.tokenize(c.target_new);
  std::vector<ProbPair> out;
  switch (kind) {
    case MetricKind::efficacy:
      out.push_back(score_pair(params, render_prompt(vocab, c.prompt, c.subject), o_true, o_edit));
      break;
    case MetricKind::paraphrase:
      for (const std::string& p : c.paraphrase_prompts) {
        out.push_back(score_pair(params, render_prompt(vocab, p, c.subject), o_true, o_edit));
      }
      break;
    case MetricKind::neighborhood:
      for (const TestPrompt& n : c.neighborhood_prompts) {
        out.push_back(score_pair(params, render_prompt(vocab, n.prompt, n.subject), vocab.tokenize(n.target_true),
                                 o_edit));
      }
      break;
    case MetricKind::relation:
      for (const TestPrompt& r : c.relation_prompts) {
        out.push_back(score_pair(params, render_prompt(vocab, r.prompt, c.subject), vocab.tokenize(r.target_true),
                                 o_edit));
      }
      break;
    case MetricKind::distract:
      for (const TestPrompt& n : c.neighborhood_prompts) {
        out.push_back(score_pair(params, distract_prompt(vocab, c, n).tokens, vocab.tokenize(n.target_true), o_edit));
      }
      break;
  }
  return out;
}

std::optional<MetricSummary> summarize(MetricKind kind, const std::vector<std::vector<ProbPair>>& per_case) {
  const bool edit = favors_edit(kind);
  std::vector<double> case_scores;
  std::vector<double> case_magnitudes;
  double pooled_wins = 0.0;
  double pooled_mass = 0.0;
  int prompts = 0;
  for (const std::vector<ProbPair>& pairs : per_case) {
    if (pairs.empty()) {
      continue;
    }
    double wins = 0.0;
    double mass = 0.0;
    for (const ProbPair& p : pairs) {
      const double favored = edit ? p.p_edit : p.p_true;
      const double other = edit ? p.p_true : p.p_edit;
      wins += favored > other ? 1.0 : 0.0;
      mass += favored;
    }
    pooled_wins += wins;
    pooled_mass += mass;
    prompts += static_cast<int>(pairs.size());
    case_scores.push_back(wins / static_cast<double>(pairs.size()));
    case_magnitudes.push_back(mass / static_cast<double>(pairs.size()));
  }
  if (case_scores.empty()) {
    return std::nullopt;
  }
  MetricSummary s;
  s.n_cases = static_cast<int>(case_scores.size());
  s.n_prompts = prompts;
  const double score = mean(case_scores);
  s.score = 100.0 * score;
  s.magnitude = 100.0 * mean(case_magnitudes);
  s.score_half_width = 100.0 * proportion_half_width(score, case_scores.size());
  s.magnitude_half_width = 100.0 * mean_half_width(case_magnitudes);
  s.flat_score = 100.0 * pooled_wins / prompts;
  s.flat_magnitude = 100.0 * pooled_mass / prompts;
  return s;
}

std::optional<MetricSummary> metric(const ModelParams& params, const Vocabulary& vocab,
                                    const std::vector<EvalCase>& cases, MetricKind kind) {
  require(!cases.empty(), score_name(kind) + ": no evaluation cases");
  std::vector<std::vector<ProbPair>> per_case;
  per_case.reserve(cases.size());
  for (const EvalCase& c : cases) {
    per_case.push_back(prompt_pairs(params, vocab, c, kind));
  }
  return summarize(kind, per_case);
}

std::optional<MetricSummary> efficacy(const ModelParams& params, const Vocabulary& vocab,
                                      const std::vector<EvalCase>& cases) {
  return metric(params, vocab, cases, MetricKind::efficacy);
}
std::optional<MetricSummary> paraphrase(const ModelParams& params, const Vocabulary& vocab,
                                        const std::vector<EvalCase>& cases) {
  return metric(params, vocab, cases, MetricKind::paraphrase);
}
std::optional<MetricSummary> neighborhood(const ModelParams& params, const Vocabulary& vocab,
                                          const std::vector<EvalCase>& cases) {
  return metric(params, vocab, cases, MetricKind::neighborhood);
}
std::optional<MetricSummary> relation(const ModelParams& params, const Vocabulary& vocab,
                                      const std::vector<EvalCase>& cases) {
  return metric(params, vocab, cases, MetricKind::relation);
}
std::optional<MetricSummary> distract_neighborhood(const ModelParams& params, const Vocabulary& vocab,
                                                   const std::vector<EvalCase>& cases) {
  return metric(params, vocab, cases, MetricKind::distract);
}

double ngram_mix(std::span<const int> tokens, const FluencyOptions& options) {
  return options.w2 * ngram_entropy(tokens, 2) + options.w3 * ngram_entropy(tokens, 3);
}

double fluency(const ModelParams& params, const std::vector<TokenSequence>& prompts, const FluencyOptions& options) {
  require(options.gen_len >= 3, "fluency: gen_len must be >= 3");
  require(!prompts.empty(), "fluency: no generation prompts");
  double total = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const TokenSequence out = generate(params, prompts[i], options.gen_len,
                                       {DecodeMode::sample, options.seed + i, options.temperature});
    total += ngram_mix(out.ids, options);
  }
  return 100.0 * total / static_cast<double>(prompts.size());
}

double avg_score(double es, double ps, double ns, double rs, double dns) {
  double inv = 0.0;
  for (double x : {es, ps, ns, rs, dns}) {
    require(std::isfinite(x) && x >= 0.0, "avg_score: inputs must be non-negative");
    require(x <= 100.0, "avg_score: inputs must not exceed 100");
    if (x == 0.0) {
      return 0.0;
    }
    inv += 1.0 / x;
  }
  return 5.0 / inv;
}

CaseScores score_case(const ModelParams& params, const Vocabulary& vocab, const EvalCase& c, std::size_t case_index,
                      const EvalOptions& options) {
  CaseScores s;
  s.case_id = c.case_id;
  for (MetricKind k : kMetricKinds) {
    if (options.kinds[static_cast<std::size_t>(k)]) {
      s.pairs[static_cast<std::size_t>(k)] = prompt_pairs(params, vocab, c, k);
    }
  }
  if (options.with_fluency) {
    require(options.fluency.gen_len >= 3, "fluency: gen_len must be >= 3");
    for (std::size_t i = 0; i < c.generation_prompts.size(); ++i) {
      const std::uint64_t seed = options.fluency.seed + 1000003ULL * case_index + i;
      const TokenSequence out = generate(params, render_prompt(vocab, c.generation_prompts[i], c.subject),
                                         options.fluency.gen_len,
                                         {DecodeMode::sample, seed, options.fluency.temperature});
      s.fluency.push_back(ngram_mix(out.ids, options.fluency));
    }
  }
  return s;
}

EvalReport assemble_report(std::vector<CaseScores> cases) {
  EvalReport r;
  for (MetricKind k : kMetricKinds) {
    std::vector<std::vector<ProbPair>> per_case;
    per_case.reserve(cases.size());
    for (const CaseScores& c : cases) {
      per_case.push_back(c.pairs[static_cast<std::size_t>(k)]);
    }
    r.metrics[static_cast<std::size_t>(k)] = summarize(k, per_case);
  }
  std::vector<double> fl;
  for (const CaseScores& c : cases) {
    if (!c.fluency.empty()) {
      fl.push_back(mean(c.fluency));
    }
  }
  if (!fl.empty()) {
    r.fluency = 100.0 * mean(fl);
    r.fluency_half_width = 100.0 * mean_half_width(fl);
  }
  bool complete = true;
  for (const auto& m : r.metrics) {
    complete = complete && m.has_value();
  }
  if (complete) {
    r.avg_score = avg_score(r[MetricKind::efficacy]->score, r[MetricKind::paraphrase]->score,
                            r[MetricKind::neighborhood]->score, r[MetricKind::relation]->score,
                            r[MetricKind::distract]->score);
  }
  r.cases = std::move(cases);
  return r;
}

EvalReport evaluate(const ModelParams& params, const Vocabulary& vocab, const std::vector<EvalCase>& cases,
                    const EvalOptions& options) {
  std::vector<CaseScores> scores(cases.size());
  parallel_for(cases.size(), options.threads,
               [&](std::size_t i) { scores[i] = score_case(params, vocab, cases[i], i, options); });
  return assemble_report(std::move(scores));
}

namespace {

nlohmann::json pairs_json(const std::vector<ProbPair>& pairs) {
  nlohmann::json j = nlohmann::json::array();
  for (const ProbPair& p : pairs) {
    j.push_back({p.p_true, p.p_edit});
  }
  return j;
}

}  // namespace

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (MetricKind k : kMetricKinds) {
    const auto& m = r[k];
    if (!m) {
      continue;
    }
    metrics[score_name(k)] = {{"value", m->score},
                              {"half_width", m->score_half_width},
                              {"flat_value", m->flat_score},
                              {"n_cases", m->n_cases},
                              {"n_prompts", m->n_prompts}};
    metrics[magnitude_name(k)] = {{"value", m->magnitude},
                                  {"half_width", m->magnitude_half_width},
                                  {"flat_value", m->flat_magnitude},
                                  {"n_cases", m->n_cases},
                                  {"n_prompts", m->n_prompts}};
  }
  if (r.fluency) {
    metrics["FL"] = {{"value", *r.fluency}, {"half_width", r.fluency_half_width}};
  }
  if (r.avg_score) {
    metrics["AvgS"] = {{"value", *r.avg_score}};
  }
  nlohmann::json cases = nlohmann::json::array();
  for (const CaseScores& c : r.cases) {
    nlohmann::json cj = {{"case_id", c.case_id}, {"fluency", c.fluency}};
    for (MetricKind k : kMetricKinds) {
      cj[score_name(k)] = pairs_json(c.pairs[static_cast<std::size_t>(k)]);
    }
    cases.push_back(std::move(cj));
  }
  return {{"metrics", metrics}, {"cases", cases}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  std::vector<CaseScores> cases;
  for (const nlohmann::json& cj : j.at("cases")) {
    CaseScores c;
    c.case_id = cj.at("case_id").get<std::string>();
    c.fluency = cj.at("fluency").get<std::vector<double>>();
    for (MetricKind k : kMetricKinds) {
      for (const nlohmann::json& p : cj.at(score_name(k))) {
        c.pairs[static_cast<std::size_t>(k)].push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
    }
    cases.push_back(std::move(c));
  }
  return assemble_report(std::move(cases));
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "metric,value,half_width,flat_value,n_cases\n";
  for (MetricKind k : kMetricKinds) {
    const auto& m = r[k];
    if (!m) {
      continue;
    }
    os << score_name(k) << ',' << m->score << ',' << m->score_half_width << ',' << m->flat_score << ','
       << m->n_cases << '\n';
    os << magnitude_name(k) << ',' << m->magnitude << ',' << m->magnitude_half_width << ',' << m->flat_magnitude
       << ',' << m->n_cases << '\n';
  }
  if (r.fluency) {
    os << "FL," << *r.fluency << ',' << r.fluency_half_width << ',' << *r.fluency << ',' << r.cases.size() << '\n';
  }
  if (r.avg_score) {
    os << "AvgS," << *r.avg_score << ",0," << *r.avg_score << ',' << r.cases.size() << '\n';
  }
  return os.str();
}

}  // namespace adrl
