#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "adrl/harness/experiment.hpp"
#include "adrl/harness/files.hpp"
#include "adrl/model/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace adrl;
namespace fs = std::filesystem;

namespace {

WorldSizes small_sizes() {
  WorldSizes s;
  s.subjects = 20;
  s.relations = 4;
  s.objects = 5;
  s.templates = 2;
  s.kinds = 3;
  return s;
}

ModelConfig small_model(int vocab_size) {
  ModelConfig c;
  c.n_layers = 3;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = vocab_size;
  c.max_seq_len = 32;
  c.rng_seed = 3;
  return c;
}

TrainConfig quick_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.warmup_steps = 5;
  t.eval_every = 1;
  return t;
}

SuiteConfig quick_suite() {
  SuiteConfig c;
  c.plan.layer = 1;
  c.plan.steps = 4;
  c.sadr_steps = 4;
  c.cov_samples = 400;
  c.metrics = {"ES", "PS", "NS", "RS", "DNS"};
  c.threads = 1;
  return c;
}

struct Fixture {
  FactWorld world = generate_world(5, small_sizes());
  std::vector<EvalCase> cases = generate_cases(world, 4, 1);
  SuiteInputs in =
      make_inputs(world, ModelParams::initialize(small_model(world.vocabulary().size())), cases);
};

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adrl_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

int count_lines(const std::string& s) {
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("world generation is deterministic in the seed") {
  const nlohmann::json a = generate_world(11);
  const nlohmann::json b = generate_world(11);
  const nlohmann::json c = generate_world(12);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("world invariants at default sizes") {
  const FactWorld w = generate_world(1);
  w.validate();
  const WorldSizes& s = w.sizes;
  REQUIRE(static_cast<int>(w.subjects.size()) == s.subjects);
  REQUIRE(static_cast<int>(w.facts.size()) == s.subjects * s.relations);
  CHECK(std::set<std::string>(w.subjects.begin(), w.subjects.end()).size() == w.subjects.size());
  for (int subj = 0; subj < s.subjects; ++subj) {
    for (int r = 0; r < s.relations; ++r) {
      const Fact& f = w.fact(subj, r);
      CHECK(f.subject == subj);
      CHECK(f.relation == r);
    }
  }
  for (int r = 0; r < s.relations; ++r) {
    std::size_t covered = 0;
    for (int o = 0; o < s.objects; ++o) {
      const auto g = w.group(r, o);
      CHECK(g.size() >= 2);
      covered += g.size();
    }
    CHECK(covered == w.subjects.size());
  }
  const Vocabulary vocab = w.vocabulary();
  const auto sentences = w.sentences();
  CHECK(static_cast<int>(sentences.size()) == s.subjects * s.relations * s.templates + 2 * s.subjects);
  for (const std::string& text : sentences) {
    CHECK_NOTHROW(vocab.tokenize(text));
  }
  CHECK(static_cast<int>(w.recall_probes(vocab).size()) == s.subjects * s.relations * s.templates);
}

TEST_CASE("sizes that break the invariants are rejected") {
  WorldSizes s = small_sizes();
  s.subjects = 8;
  CHECK_THROWS_AS(generate_world(0, s), Error);
  s = small_sizes();
  s.objects = 11;
  CHECK_THROWS_AS(generate_world(0, s), Error);
  s = small_sizes();
  s.subject_tokens = 3;
  CHECK_THROWS_AS(generate_world(0, s), Error);
}

TEST_CASE("counterfactual cases over 1000 draws") {
  const FactWorld w = generate_world(1);
  const Vocabulary vocab = w.vocabulary();
  const auto cases = generate_cases(w, 1000, 7);
  REQUIRE(cases.size() == 1000);
  std::set<std::string> ids;
  for (const EvalCase& c : cases) {
    ids.insert(c.case_id);
    CHECK(c.target_new != c.target_true);
    CHECK(!c.neighborhood_prompts.empty());
    CHECK(!c.relation_prompts.empty());
    for (const TestPrompt& n : c.neighborhood_prompts) {
      CHECK(n.target_true == c.target_true);
      CHECK(n.subject != c.subject);
    }
    CHECK_NOTHROW(c.validate(vocab));
  }
  CHECK(ids.size() == cases.size());
  CHECK(nlohmann::json(generate_cases(w, 5, 3)).dump() == nlohmann::json(generate_cases(w, 5, 3)).dump());
}

TEST_CASE("world files round-trip") {
  const FactWorld w = generate_world(4, small_sizes());
  const auto cases = generate_cases(w, 6, 2);
  const fs::path dir = temp_dir("world");
  write_world(w, cases, dir.string());
  const WorldFiles files = WorldFiles::in(dir.string());
  for (const std::string& f : {files.world, files.vocab, files.corpus, files.cases}) {
    CHECK(fs::exists(f));
  }
  CHECK(nlohmann::json(read_world(dir.string())) == nlohmann::json(w));
  CHECK(nlohmann::json(read_cases(files.cases)) == nlohmann::json(cases));
  CHECK(Vocabulary::load(files.vocab).size() == w.vocabulary().size());
  CHECK(count_lines(read_text(files.corpus)) == static_cast<int>(w.sentences().size()));
}

TEST_CASE("packing keeps order and respects the length") {
  std::vector<TokenSequence> s(5);
  for (int i = 0; i < 5; ++i) s[i].ids = std::vector<int>(static_cast<std::size_t>(i + 1), i + 1);
  const auto packed = pack_sentences(s, 0, 7);
  std::vector<int> flat;
  for (const TokenSequence& p : packed) {
    CHECK(p.size() <= 7);
    flat.insert(flat.end(), p.ids.begin(), p.ids.end());
  }
  std::vector<int> content;
  for (int x : flat) {
    if (x != 0) content.push_back(x);
  }
  std::vector<int> expected;
  for (const TokenSequence& t : s) expected.insert(expected.end(), t.ids.begin(), t.ids.end());
  CHECK(content == expected);
}

TEST_CASE("training: zero epochs stays near chance, runs are reproducible, recall rises") {
  const FactWorld w = generate_world(5, small_sizes());
  const ModelConfig m = small_model(0);

  const TrainResult none = train_model(w, m, quick_train(0));
  CHECK(none.epochs_run == 0);
  CHECK(none.recall < 3.0 / w.sizes.objects);
  CHECK(none.warning);

  const TrainResult a = train_model(w, m, quick_train(4));
  const TrainResult b = train_model(w, m, quick_train(4));
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
  CHECK(a.recall == b.recall);
  CHECK(a.epochs_run == 4);
  CHECK(a.curve.size() >= 2);
  CHECK(a.curve.back().loss < a.curve[1].loss);

  const fs::path dir = temp_dir("train");
  const std::string path = (dir / "m.ckpt").string();
  save_trained(a, path);
  CHECK(serialize_checkpoint(load_checkpoint(path)) == serialize_checkpoint(a.params));
  const auto report = nlohmann::json::parse(read_text(train_report_path(path)));
  CHECK(report.at("warning").get<bool>() == a.warning);
  CHECK(report.at("epochs_run").get<int>() == 4);
}

TEST_CASE("suite with no cases") {
  Fixture f;
  f.in.cases.clear();
  SuiteConfig c = quick_suite();
  c.gammas = {0.0, 0.1};
  const SuiteResult r = run_edit_suite(f.in, c);
  CHECK(r.failures == 0);
  REQUIRE(r.runs.size() == 2);
  for (const GammaRun& run : r.runs) {
    CHECK(run.cases.empty());
    CHECK(!run.report[MetricKind::efficacy]);
  }
}

TEST_CASE("gamma list [0] gives the baseline editor only") {
  Fixture f;
  SuiteConfig c = quick_suite();
  const SuiteResult r = run_edit_suite(f.in, c);
  REQUIRE(r.runs.size() == 1);
  CHECK(r.runs[0].gamma == 0.0);
  CHECK(r.runs[0].plan.steps == c.plan.steps);
  CHECK(r.runs[0].plan.gamma == 0.0);
  CHECK(r.runs[0].failures == 0);
  CHECK(count_lines(suite_table_csv(r, EditMethod::rome)) == 3);
}

TEST_CASE("two-gamma suite writes one row per gamma plus vanilla") {
  Fixture f;
  SuiteConfig c = quick_suite();
  c.gammas = {0.0, 0.05};
  const fs::path dir = temp_dir("suite");
  const SuiteResult r = run_edit_suite(f.in, c, dir.string());
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[1].plan.steps == c.sadr_steps);
  const std::string table = read_text(dir / "reports" / "table.csv");
  CHECK(count_lines(table) == 4);
  CHECK(table.rfind("editor,gamma,AvgS,ES,PS,NS,RS,DNS,EM,PM,NM,RM,DNM,FL,failures\nnone,", 0) == 0);
  for (const char* name : {"vanilla.json", "gamma_0.json", "gamma_0.05.json", "scatter_gamma_0.csv", "summary.json"}) {
    CHECK(fs::exists(dir / "reports" / name));
  }
  for (const EvalCase& ec : f.cases) {
    CHECK(fs::exists(dir / "edits" / ec.case_id / "gamma_0" / "scores.json"));
    CHECK(fs::exists(dir / "edits" / ec.case_id / "gamma_0.05" / "edit.json"));
  }
  const auto back = report_from_json(nlohmann::json::parse(read_text(dir / "reports" / "gamma_0.json")));
  CHECK(back[MetricKind::efficacy]->score == doctest::Approx(r.runs[0].report[MetricKind::efficacy]->score));
}

TEST_CASE("every case is edited from the vanilla model") {
  Fixture f;
  SuiteConfig c = quick_suite();
  const SuiteResult all = run_edit_suite(f.in, c);
  Fixture g;
  g.in.cases = {f.cases.back()};
  const SuiteResult one = run_edit_suite(g.in, c);
  const auto& a = all.runs[0].cases.back().scores.pairs;
  const auto& b = one.runs[0].cases[0].scores.pairs;
  for (std::size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].size() == b[k].size());
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      CHECK(a[k][i].p_true == doctest::Approx(b[k][i].p_true).epsilon(1e-12));
      CHECK(a[k][i].p_edit == doctest::Approx(b[k][i].p_edit).epsilon(1e-12));
    }
  }
}

TEST_CASE("a failing case is recorded and the suite carries on") {
  Fixture f;
  EvalCase bad = f.cases[0];
  bad.case_id = "too_long";
  std::string prefix;
  for (int i = 0; i < 40; ++i) prefix += "the ";
  bad.prompt = prefix + bad.prompt;
  f.in.cases.push_back(bad);
  const SuiteResult r = run_edit_suite(f.in, quick_suite());
  CHECK(r.failures == 1);
  REQUIRE(r.runs[0].cases.size() == f.cases.size() + 1);
  CHECK(!r.runs[0].cases.back().ok);
  CHECK(!r.runs[0].cases.back().error.empty());
  CHECK(r.runs[0].report.cases.size() == f.cases.size());
  CHECK(r.vanilla.cases.size() == f.cases.size());
}

TEST_CASE("trade-off sweep grid and its gamma = 0 point") {
  Fixture f;
  SuiteConfig c = quick_suite();
  const std::vector<SweepAxis> axes = {{"gamma", {0.0, 0.1}}, {"steps", {2, 3, 4}}};
  const auto points = run_tradeoff_sweep(f.in, c, axes);
  REQUIRE(points.size() == 5);
  for (const SweepPoint& p : points) CHECK(p.ok);
  const SuiteResult base = run_edit_suite(f.in, c);
  CHECK(std::abs(points[0].edit_success - edit_success(base.runs[0].report)) <= 1e-9);
  CHECK(std::abs(points[0].rm - base.runs[0].report[MetricKind::relation]->magnitude) <= 1e-9);
  CHECK(count_lines(sweep_csv(points)) == 6);
  CHECK_THROWS_AS(run_tradeoff_sweep(f.in, c, {{"gamma", {0.0}}}), Error);
}

TEST_CASE("gamma directory names") {
  CHECK(gamma_dir(0.0) == "gamma_0");
  CHECK(gamma_dir(0.01) == "gamma_0.01");
  CHECK(gamma_dir(2.5) == "gamma_2.5");
}

TEST_CASE("experiment spec round-trip and validation") {
  ExperimentSpec s;
  s.world_seed = 9;
  s.suite.gammas = {0.0, 0.02};
  s.axes = {{"omega", {0.0, 0.1}}};
  s.output_dir = "out";
  const nlohmann::json j = s;
  const ExperimentSpec back = j.get<ExperimentSpec>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.suite.plan.layer == default_suite_plan().layer);

  nlohmann::json bad = j;
  bad["axes"] = {{{"name", "depth"}, {"values", {1, 2}}}};
  CHECK_THROWS_AS(bad.get<ExperimentSpec>(), Error);
  bad = j;
  bad["suite"]["gammas"] = {-1.0};
  CHECK_THROWS_AS(bad.get<ExperimentSpec>(), Error);
}

TEST_CASE("full experiment layout on a small world") {
  ExperimentSpec s;
  s.world_seed = 5;
  s.sizes = small_sizes();
  s.model = small_model(0);
  s.train = quick_train(2);
  s.train.recall_threshold = 1e-9;
  s.suite = quick_suite();
  s.suite.n_cases = 3;
  s.axes = {{"gamma", {0.0, 0.1}}};
  const fs::path dir = temp_dir("experiment");
  s.output_dir = dir.string();
  const SuiteResult r = run_experiment(s);
  CHECK(r.runs.size() == 1);
  for (const char* p : {"spec.json", "world/world.json", "world/cases.jsonl", "checkpoints/model.ckpt",
                        "checkpoints/model.ckpt.train.json", "reports/table.csv", "reports/tradeoff.csv"}) {
    CHECK_MESSAGE(fs::exists(dir / p), p);
  }
  CHECK(fs::is_directory(dir / "edits" / "case0" / "gamma_0"));

  s.train.recall_threshold = 1.0;
  s.train.epochs = 0;
  CHECK_THROWS_AS(run_experiment(s), Error);
}

TEST_CASE("vanilla metrics are unchanged by a suite run") {
  Fixture f;
  EvalOptions o;
  o.with_fluency = false;
  const nlohmann::json before = report_json(evaluate(f.in.vanilla, f.in.vocab, f.cases, o));
  run_edit_suite(f.in, quick_suite());
  const nlohmann::json after = report_json(evaluate(f.in.vanilla, f.in.vocab, f.cases, o));
  CHECK(before == after);
}

TEST_CASE("a partial plan in a spec keeps the suite defaults") {
  nlohmann::json j = ExperimentSpec{};
  j["suite"]["plan"] = {{"lr", 0.25}};
  const ExperimentSpec s = j.get<ExperimentSpec>();
  CHECK(s.suite.plan.lr == 0.25);
  CHECK(s.suite.plan.layer == default_suite_plan().layer);
  CHECK(s.suite.plan.steps == default_suite_plan().steps);
}

TEST_CASE("model and case files round-trip") {
  Fixture f;
  const fs::path dir = temp_dir("files");
  const std::string ckpt = (dir / "m.ckpt").string();
  save_model(f.in.vanilla, f.in.vocab, ckpt);
  const LoadedModel m = load_model(ckpt);
  CHECK(serialize_checkpoint(m.params) == serialize_checkpoint(f.in.vanilla));
  CHECK(m.vocab.size() == f.in.vocab.size());
  CHECK_THROWS_AS(save_model(f.in.vanilla, Vocabulary(), ckpt), Error);

  const nlohmann::json expected = f.cases;
  write_cases(f.cases, (dir / "c.jsonl").string());
  CHECK(nlohmann::json(load_case_file((dir / "c.jsonl").string())) == expected);
  std::ofstream((dir / "a.json").string()) << expected.dump(2);
  CHECK(nlohmann::json(load_case_file((dir / "a.json").string())) == expected);
  std::ofstream((dir / "one.json").string()) << expected[0].dump(2);
  CHECK(nlohmann::json(load_case_file((dir / "one.json").string()))[0] == expected[0]);
}
