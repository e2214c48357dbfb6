#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "adrl/evaluation/drift.hpp"
#include "adrl/evaluation/metrics.hpp"
#include "adrl/model/generation.hpp"
#include "toy_model.hpp"

#include <filesystem>
#include <map>

using namespace adrl;
using namespace adrl::testing;

namespace {

EvalCase toy_case(const std::string& id = "c0") {
  EvalCase c;
  c.case_id = id;
  c.subject = "s2";
  c.prompt = "the {} rel_a";
  c.paraphrase_prompts = {"{} rel_a", "the the {} rel_a"};
  c.neighborhood_prompts = {{"s4", "the {} rel_a", "o1"}, {"s5", "{} rel_a", "o1"}};
  c.relation_prompts = {{"", "the {} rel_b", "o0"}};
  c.target_true = "o1";
  c.target_new = "o3";
  c.generation_prompts = {"the {}", "{} rel_b"};
  return c;
}

// Always emits `token`, whatever the context.
ModelParams degenerate_model(int vocab_size, int token) {
  ModelParams p = toy_params(vocab_size, 2, true, 2);
  p.lnf_gain.setZero();
  p.lnf_bias.setZero();
  p.lnf_bias(0, 0) = 1.0;
  p.unembed.setZero();
  p.unembed(0, token) = 80.0;
  return p;
}

// Entropy in bits of the empirical n-gram distribution, counted with a map.
double counted_entropy(const std::vector<int>& t, int n) {
  std::map<std::vector<int>, double> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    counts[std::vector<int>(t.begin() + i, t.begin() + i + n)] += 1.0;
  }
  const double total = static_cast<double>(t.size() - n + 1);
  double h = 0.0;
  for (const auto& [gram, c] : counts) {
    h -= c / total * std::log2(c / total);
  }
  return h;
}

ActivationCache rows_cache(const std::vector<Matrix>& last_rows) {
  ActivationCache c;
  c.n_layers = static_cast<int>(last_rows.size());
  c.n_heads = static_cast<int>(last_rows[0].rows());
  c.length = static_cast<int>(last_rows[0].cols());
  for (const Matrix& r : last_rows) {
    Matrix w = Matrix::Zero(c.n_heads * c.length, c.length);
    for (int h = 0; h < c.n_heads; ++h) w.row(h * c.length + c.length - 1) = r.row(h);
    c.attn_weights.push_back(w);
  }
  return c;
}

}  // namespace

TEST_CASE("eval cases validate and round-trip through JSON Lines") {
  const Vocabulary v = toy_vocab();
  const EvalCase c = toy_case();
  CHECK_NOTHROW(c.validate(v));
  const auto path = std::filesystem::temp_directory_path() / "adrl_cases.jsonl";
  write_cases({c, toy_case("c1")}, path.string());
  const std::vector<EvalCase> back = read_cases(path.string());
  REQUIRE(back.size() == 2);
  CHECK(nlohmann::json(back[0]) == nlohmann::json(c));
  CHECK(back[1].case_id == "c1");
  std::filesystem::remove(path);

  EvalCase bad = c;
  bad.neighborhood_prompts[0].subject = "s2";
  CHECK_THROWS_AS(bad.validate(v), Error);
  bad = c;
  bad.relation_prompts[0].prompt = c.prompt;
  CHECK_THROWS_AS(bad.validate(v), Error);
  bad = c;
  bad.target_new = "o1";
  CHECK_THROWS_AS(bad.validate(v), Error);
  bad = c;
  bad.paraphrase_prompts.push_back("{} unknown_token");
  CHECK_THROWS_AS(bad.validate(v), Error);
  CHECK(c.request().target_new == "o3");
}

TEST_CASE("distract prompt construction") {
  const Vocabulary v = toy_vocab();
  const EvalCase c = toy_case();
  const DistractPrompt d = distract_prompt(v, c, c.neighborhood_prompts[0]);
  CHECK(v.detokenize(d.tokens.ids) == "the s2 rel_a o3 <sep> the s4 rel_a");
  CHECK(d.edit_subject_last == 1);
  CHECK(d.tokens.subject == SubjectSpan{6, 6});
}

TEST_CASE("score_pair") {
  const Vocabulary v = toy_vocab();
  const ModelParams p = toy_params(v.size(), 3);
  const TokenSequence prompt = render_prompt(v, "the {} rel_a", "s2");
  const Distribution d = next_token_distribution(p, prompt);
  const ProbPair single = score_pair(p, prompt, v.tokenize("o1"), v.tokenize("o3"));
  CHECK(single.p_true == d[v.id("o1")]);
  CHECK(single.p_edit == d[v.id("o3")]);
  const ProbPair multi = score_pair(p, prompt, v.tokenize("o1 o2"), v.tokenize("o3"));
  CHECK(multi.p_true == doctest::Approx(sequence_prob(p, prompt, v.tokenize("o1 o2"))).epsilon(1e-14));
  CHECK(multi.p_edit == doctest::Approx(d[v.id("o3")]).epsilon(1e-12));
  CHECK_THROWS_AS(score_pair(p, prompt, v.tokenize("o1"), v.tokenize("o1")), Error);
}

TEST_CASE("metric summaries count by hand") {
  SUBCASE("three single-prompt cases") {
    const std::vector<std::vector<ProbPair>> pairs = {{{0.1, 0.7}}, {{0.5, 0.3}}, {{0.2, 0.6}}};
    const auto es = summarize(MetricKind::efficacy, pairs);
    REQUIRE(es);
    CHECK(es->score == doctest::Approx(200.0 / 3.0));
    CHECK(es->magnitude == doctest::Approx(100.0 * (0.7 + 0.3 + 0.6) / 3.0));
    const auto ns = summarize(MetricKind::neighborhood, pairs);
    CHECK(ns->score == doctest::Approx(100.0 / 3.0));
    CHECK(ns->magnitude == doctest::Approx(100.0 * (0.1 + 0.5 + 0.2) / 3.0));
  }
  SUBCASE("two-level mean versus pooled mean") {
    const std::vector<std::vector<ProbPair>> pairs = {{{0.2, 0.8}, {0.6, 0.4}}, {{0.1, 0.9}}, {}};
    const auto ps = summarize(MetricKind::paraphrase, pairs);
    REQUIRE(ps);
    CHECK(ps->n_cases == 2);
    CHECK(ps->n_prompts == 3);
    CHECK(ps->score == doctest::Approx(75.0));
    CHECK(ps->flat_score == doctest::Approx(200.0 / 3.0));
    CHECK(ps->magnitude == doctest::Approx(75.0));
    CHECK(ps->flat_magnitude == doctest::Approx(70.0));
  }
  SUBCASE("all winning") {
    const auto es = summarize(MetricKind::efficacy, {{{0.1, 0.2}}, {{0.0, 1.0}}});
    CHECK(es->score == 100.0);
    CHECK(es->score_half_width == 0.0);
  }
  SUBCASE("missing prompt class is absent") {
    CHECK_FALSE(summarize(MetricKind::relation, {{}, {}}).has_value());
  }
}

TEST_CASE("model-level metrics") {
  const Vocabulary v = toy_vocab();
  const ModelParams p = toy_params(v.size(), 4);
  std::vector<EvalCase> cases = {toy_case("a"), toy_case("b")};
  cases[1].subject = "s3";
  cases[1].relation_prompts.clear();
  CHECK_THROWS_AS(efficacy(p, v, {}), Error);
  for (MetricKind k : kMetricKinds) {
    const auto m = metric(p, v, cases, k);
    REQUIRE(m);
    CHECK(m->score >= 0.0);
    CHECK(m->score <= 100.0);
    CHECK(m->magnitude >= 0.0);
    CHECK(m->magnitude <= 100.0);
  }
  CHECK(relation(p, v, cases)->n_cases == 1);
  CHECK(neighborhood(p, v, cases)->n_prompts == 4);
  CHECK(distract_neighborhood(p, v, cases)->n_prompts == 4);
  cases[0].relation_prompts.clear();
  CHECK_FALSE(relation(p, v, cases).has_value());

  const auto es = efficacy(p, v, cases);
  double wins = 0.0;
  for (const EvalCase& c : cases) {
    const ProbPair pp = score_pair(p, render_prompt(v, c.prompt, c.subject), v.tokenize("o1"), v.tokenize("o3"));
    wins += pp.p_edit > pp.p_true ? 1.0 : 0.0;
  }
  CHECK(es->score == doctest::Approx(50.0 * wins));
}

TEST_CASE("fluency") {
  FluencyOptions o;
  SUBCASE("a repeated token has zero entropy") {
    const std::vector<int> same(20, 4);
    CHECK(ngram_mix(same, o) == 0.0);
    const Vocabulary v = toy_vocab();
    const ModelParams p = degenerate_model(v.size(), 5);
    const std::vector<TokenSequence> prompts = {render_prompt(v, "the {}", "s1"), v.tokenize("rel_a")};
    CHECK(fluency(p, prompts, o) == 0.0);
  }
  SUBCASE("counting oracle and the uniform limit") {
    std::mt19937_64 rng(7);
    for (int k : {3, 5}) {
      std::uniform_int_distribution<int> u(0, k - 1);
      std::vector<int> t(200000);
      for (int& x : t) x = u(rng);
      const double mix = ngram_mix(t, o);
      CHECK(mix == doctest::Approx(counted_entropy(t, 2) / 3.0 + 2.0 * counted_entropy(t, 3) / 3.0).epsilon(1e-12));
      const double limit = std::log2(k * k) / 3.0 + 2.0 * std::log2(k * k * k) / 3.0;
      CHECK(std::abs(mix - limit) < 5e-3);
    }
    std::vector<int> small = {1, 2, 1, 2, 3, 1};
    CHECK(ngram_mix(small, o) ==
          doctest::Approx(counted_entropy(small, 2) / 3.0 + 2.0 * counted_entropy(small, 3) / 3.0).epsilon(1e-14));
  }
  SUBCASE("weights are configurable") {
    const std::vector<int> t = {1, 2, 3, 1, 2, 4, 4, 1};
    FluencyOptions bigram;
    bigram.w2 = 1.0;
    bigram.w3 = 0.0;
    CHECK(ngram_mix(t, bigram) == doctest::Approx(counted_entropy(t, 2)).epsilon(1e-14));
  }
  SUBCASE("seeded generation is deterministic") {
    const Vocabulary v = toy_vocab();
    const ModelParams p = toy_params(v.size(), 5);
    const std::vector<TokenSequence> prompts = {render_prompt(v, "the {}", "s1"), render_prompt(v, "{} rel_b", "s0")};
    const double a = fluency(p, prompts, o);
    CHECK(a == fluency(p, prompts, o));
    CHECK(a > 0.0);
    o.gen_len = 2;
    CHECK_THROWS_AS(fluency(p, prompts, o), Error);
  }
}

TEST_CASE("harmonic mean score") {
  CHECK(avg_score(80, 80, 80, 80, 80) == doctest::Approx(80.0).epsilon(1e-15));
  for (double x : {0.5, 12.25, 61.0, 100.0}) CHECK(avg_score(x, x, x, x, x) == doctest::Approx(x).epsilon(1e-15));
  CHECK(avg_score(99.0, 0.0, 50.0, 40.0, 30.0) == 0.0);
  CHECK(avg_score(99.88, 99.58, 80.26, 11.94, 30.42) == doctest::Approx(33.52579334353026).epsilon(1e-13));
  CHECK_THROWS_AS(avg_score(-1.0, 50, 50, 50, 50), Error);
  CHECK_THROWS_AS(avg_score(101.0, 50, 50, 50, 50), Error);
}

TEST_CASE("reports") {
  const Vocabulary v = toy_vocab();
  const ModelParams p = toy_params(v.size(), 6);
  std::vector<EvalCase> cases;
  for (int i = 0; i < 4; ++i) {
    EvalCase c = toy_case("c" + std::to_string(i));
    c.subject = "s" + std::to_string(i);
    c.neighborhood_prompts = {{i == 4 ? "s5" : "s4", "the {} rel_a", "o1"}};
    cases.push_back(c);
  }
  const EvalReport r = evaluate(p, v, cases);
  REQUIRE(r.avg_score);
  REQUIRE(r.fluency);
  CHECK(*r.avg_score == avg_score(r[MetricKind::efficacy]->score, r[MetricKind::paraphrase]->score,
                                  r[MetricKind::neighborhood]->score, r[MetricKind::relation]->score,
                                  r[MetricKind::distract]->score));
  for (const auto& m : r.metrics) {
    REQUIRE(m);
    CHECK(m->score >= 0.0);
    CHECK(m->score <= 100.0);
    CHECK(m->magnitude >= 0.0);
    CHECK(m->magnitude <= 100.0);
  }

  SUBCASE("deterministic across runs and worker counts") {
    EvalOptions threaded;
    threaded.threads = 3;
    CHECK(report_json(r).dump() == report_json(evaluate(p, v, cases)).dump());
    CHECK(report_json(r).dump() == report_json(evaluate(p, v, cases, threaded)).dump());
  }
  SUBCASE("json round trip") {
    CHECK(report_json(report_from_json(report_json(r))).dump() == report_json(r).dump());
  }
  SUBCASE("csv has one row per metric") {
    const std::string csv = report_csv(r);
    CHECK(csv.rfind("metric,value,half_width,flat_value,n_cases\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 10 + 2);
    CHECK(csv.find("\nDNS,") != std::string::npos);
    CHECK(csv.find("\nAvgS,") != std::string::npos);
  }
  SUBCASE("missing relation prompts drop RS and AvgS") {
    std::vector<EvalCase> partial = cases;
    for (EvalCase& c : partial) c.relation_prompts.clear();
    const EvalReport q = evaluate(p, v, partial);
    CHECK_FALSE(q[MetricKind::relation].has_value());
    CHECK_FALSE(q.avg_score.has_value());
    CHECK(report_json(q)["metrics"].count("RS") == 0);
  }
}

TEST_CASE("confidence half-widths shrink with more cases") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto make = [&](int n) {
    std::vector<std::vector<ProbPair>> pairs;
    for (int i = 0; i < n; ++i) {
      const double a = u(rng);
      pairs.push_back({{a, 1.0 - a}});
    }
    return pairs;
  };
  const auto small = summarize(MetricKind::efficacy, make(50));
  const auto large = summarize(MetricKind::efficacy, make(200));
  CHECK(large->score_half_width < small->score_half_width);
  CHECK(large->magnitude_half_width < small->magnitude_half_width);
}

TEST_CASE("drift factors by hand") {
  Matrix w(1, 3), ws(1, 3);
  w << 0.2, 0.5, 0.3;
  ws << 0.1, 0.8, 0.1;
  const DriftFactors f = drift_factors(rows_cache({w}), rows_cache({ws}), 1, {0, 0});
  CHECK(f.kl == doctest::Approx(0.2 * std::log(2.0) + 0.5 * std::log(5.0 / 8.0) + 0.3 * std::log(3.0)));
  CHECK(f.factor1 == doctest::Approx(-0.3));
  CHECK(f.factor2 == doctest::Approx(std::sqrt(0.05)));
  CHECK(f.factor3 == doctest::Approx(-0.3));
  CHECK(f.layer_lo == 0);
  CHECK(f.layer_hi == 0);

  SUBCASE("max and sum over heads") {
    Matrix a(2, 3), b(2, 3), c(2, 3), d(2, 3);
    a << 0.2, 0.5, 0.3, 0.6, 0.2, 0.2;
    b << 0.1, 0.8, 0.1, 0.5, 0.1, 0.4;
    c << 0.3, 0.3, 0.4, 0.1, 0.1, 0.8;
    d << 0.3, 0.3, 0.4, 0.2, 0.6, 0.2;
    const ActivationCache van = rows_cache({a, c});
    const ActivationCache edi = rows_cache({b, d});
    const DriftFactors g = drift_factors(van, edi, 1, {0, 1});
    const double l0h0 = 0.5 - 0.8, l0h1 = 0.2 - 0.1, l1h0 = 0.0, l1h1 = 0.1 - 0.6;
    CHECK(g.factor1 == doctest::Approx(std::max(l0h0, l0h1) + std::max(l1h0, l1h1)));
    CHECK(g.factor3 == doctest::Approx(l0h0 + l0h1 + l1h0 + l1h1));
    CHECK(g.factor2 == doctest::Approx(std::max(std::sqrt(0.05), std::sqrt(0.01 + 0.04)) +
                                       std::max(0.0, std::sqrt(0.01 + 0.36))));
    const DriftFactors upper = drift_factors(van, edi, 1, default_drift_range(2));
    CHECK(upper.layer_lo == 1);
    CHECK(upper.factor1 == doctest::Approx(0.0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(drift_factors(rows_cache({w}), rows_cache({ws}), 1, {0, 1}), Error);
    Matrix longer(1, 4);
    longer << 0.25, 0.25, 0.25, 0.25;
    CHECK_THROWS_AS(drift_factors(rows_cache({w}), rows_cache({longer}), 1, {0, 0}), Error);
  }
}

TEST_CASE("identical models have zero drift and identical metrics") {
  const Vocabulary v = toy_vocab();
  const ModelParams p = toy_params(v.size(), 8, true, 4);
  const EvalCase c = toy_case();
  const CaseDrift d = distract_drift(p, p, v, c, default_drift_range(4));
  CHECK(d.factors.kl == 0.0);
  CHECK(d.factors.factor1 == 0.0);
  CHECK(d.factors.factor2 == 0.0);
  CHECK(d.factors.factor3 == 0.0);
  CHECK(d.n_prompts == 2);
  CHECK(d.factors.layer_lo == 2);
  const ModelParams copy = p;
  CHECK(report_json(evaluate(p, v, {c})).dump() == report_json(evaluate(copy, v, {c})).dump());

  ModelParams edited = p;
  edited.layers[1].w_out *= 3.0;
  const CaseDrift moved = distract_drift(p, edited, v, c, {0, 3});
  CHECK(moved.factors.kl > 0.0);
  CHECK(std::isfinite(moved.factors.factor2));
  CHECK(moved.p_edit > 0.0);
}

TEST_CASE("correlation report") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<DriftFactors> f(100);
  std::vector<double> p(100);
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) {
    p[i] = u(rng);
    f[i].kl = 3.0 * p[i];
    f[i].factor1 = u(rng);
    f[i].factor2 = u(rng);
    f[i].factor3 = u(rng);
    ids.push_back("c" + std::to_string(i));
  }
  const auto rows = correlation_report(f, p);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].factor == "kl");
  CHECK(rows[0].rho == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rows[0].p_value < 1e-10);
  for (std::size_t i = 1; i < 4; ++i) CHECK(std::abs(rows[i].rho) < 0.5);

  std::vector<double> shuffled = p;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(std::abs(correlation_report(f, shuffled)[0].rho) < 0.5);

  const std::string csv = scatter_csv(ids, f, p);
  CHECK(csv.rfind("case_id,factor,drift,p_edit\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 400);
  f.resize(9);
  p.resize(9);
  CHECK_THROWS_AS(correlation_report(f, p), Error);
}
