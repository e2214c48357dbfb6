#include "adrl/harness/experiment.hpp"

#include "adrl/model/checkpoint.hpp"
#include "adrl/parallel.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace adrl {

namespace fs = std::filesystem;

ModelConfig default_experiment_model() {
  ModelConfig c;
  c.n_layers = 6;
  c.n_heads = 4;
  c.d_model = 64;
  c.d_ff = 256;
  c.max_seq_len = 32;
  c.parallel_residual = true;
  c.rng_seed = 0;
  return c;
}

EditPlan default_suite_plan() {
  EditPlan p;
  p.layer = 1;
  p.steps = 80;
  return p;
}

EvalOptions SuiteConfig::eval_options() const {
  EvalOptions o;
  o.kinds.fill(false);
  o.with_fluency = false;
  for (const std::string& m : metrics) {
    if (m == "FL") {
      o.with_fluency = true;
    } else {
      o.kinds[static_cast<std::size_t>(parse_metric(m))] = true;
    }
  }
  o.fluency = fluency;
  return o;
}

void ExperimentSpec::validate() const {
  validate_sizes(sizes);
  train.validate();
  require(suite.n_cases >= 0, "spec: n_cases must be >= 0");
  require(!suite.gammas.empty(), "spec: gamma list is empty");
  for (double g : suite.gammas) require(g >= 0.0, "spec: gamma values must be >= 0");
  require(suite.sadr_steps >= 1, "spec: sadr_steps must be positive");
  require(suite.cov_samples >= 1, "spec: cov_samples must be positive");
  suite.eval_options();
  for (const SweepAxis& a : axes) {
    require(a.name == "gamma" || a.name == "steps" || a.name == "omega" || a.name == "lr",
            "spec: unknown sweep axis '" + a.name + "' (expected gamma, steps, omega or lr)");
    require(a.values.size() >= 2, "spec: sweep axis '" + a.name + "' needs at least 2 points");
  }
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  const SuiteConfig& c = s.suite;
  nlohmann::json suite = {{"n_cases", c.n_cases},
                          {"case_seed", c.case_seed},
                          {"plan", c.plan},
                          {"gammas", c.gammas},
                          {"sadr_steps", c.sadr_steps},
                          {"memit_batch", c.memit_batch},
                          {"metrics", c.metrics},
                          {"fluency",
                           {{"gen_len", c.fluency.gen_len},
                            {"w2", c.fluency.w2},
                            {"w3", c.fluency.w3},
                            {"seed", c.fluency.seed},
                            {"temperature", c.fluency.temperature}}},
                          {"drift_range", c.drift_range ? nlohmann::json{{"lo", c.drift_range->lo},
                                                                         {"hi", c.drift_range->hi}}
                                                        : nlohmann::json(nullptr)},
                          {"cov_samples", c.cov_samples},
                          {"save_checkpoints", c.save_checkpoints},
                          {"threads", c.threads}};
  nlohmann::json axes = nlohmann::json::array();
  for (const SweepAxis& a : s.axes) axes.push_back({{"name", a.name}, {"values", a.values}});
  j = {{"world_seed", s.world_seed},
       {"sizes",
        {{"subjects", s.sizes.subjects},
         {"relations", s.sizes.relations},
         {"objects", s.sizes.objects},
         {"templates", s.sizes.templates},
         {"kinds", s.sizes.kinds},
         {"subject_tokens", s.sizes.subject_tokens},
         {"profiles", s.sizes.profiles}}},
       {"model", s.model},
       {"train", s.train},
       {"suite", suite},
       {"axes", axes},
       {"output_dir", s.output_dir}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  const ExperimentSpec d;
  s.world_seed = j.value("world_seed", d.world_seed);
  if (j.contains("sizes")) {
    const nlohmann::json& z = j.at("sizes");
    s.sizes.subjects = z.value("subjects", d.sizes.subjects);
    s.sizes.relations = z.value("relations", d.sizes.relations);
    s.sizes.objects = z.value("objects", d.sizes.objects);
    s.sizes.templates = z.value("templates", d.sizes.templates);
    s.sizes.kinds = z.value("kinds", d.sizes.kinds);
    s.sizes.subject_tokens = z.value("subject_tokens", d.sizes.subject_tokens);
    s.sizes.profiles = z.value("profiles", d.sizes.profiles);
  }
  if (j.contains("model")) {
    nlohmann::json m = nlohmann::json(d.model);
    m.update(j.at("model"));
    s.model = m.get<ModelConfig>();
  }
  if (j.contains("train")) s.train = j.at("train").get<TrainConfig>();
  if (j.contains("suite")) {
    const nlohmann::json& c = j.at("suite");
    SuiteConfig& o = s.suite;
    o.n_cases = c.value("n_cases", o.n_cases);
    o.case_seed = c.value("case_seed", o.case_seed);
    if (c.contains("plan")) {
      nlohmann::json plan = o.plan;
      plan.update(c.at("plan"));
      o.plan = plan.get<EditPlan>();
    }
    o.gammas = c.value("gammas", o.gammas);
    o.sadr_steps = c.value("sadr_steps", o.sadr_steps);
    o.memit_batch = c.value("memit_batch", o.memit_batch);
    o.metrics = c.value("metrics", o.metrics);
    if (c.contains("fluency")) {
      const nlohmann::json& f = c.at("fluency");
      o.fluency.gen_len = f.value("gen_len", o.fluency.gen_len);
      o.fluency.w2 = f.value("w2", o.fluency.w2);
      o.fluency.w3 = f.value("w3", o.fluency.w3);
      o.fluency.seed = f.value("seed", o.fluency.seed);
      o.fluency.temperature = f.value("temperature", o.fluency.temperature);
    }
    if (c.contains("drift_range") && !c.at("drift_range").is_null()) {
      o.drift_range = LayerRange{c.at("drift_range").at("lo").get<int>(), c.at("drift_range").at("hi").get<int>()};
    }
    o.cov_samples = c.value("cov_samples", o.cov_samples);
    o.save_checkpoints = c.value("save_checkpoints", o.save_checkpoints);
    o.threads = c.value("threads", o.threads);
  }
  s.axes.clear();
  for (const nlohmann::json& a : j.value("axes", nlohmann::json::array())) {
    s.axes.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>()});
  }
  s.output_dir = j.value("output_dir", std::string());
  s.validate();
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open spec file: " + path);
  try {
    return nlohmann::json::parse(f).get<ExperimentSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

SuiteInputs make_inputs(const FactWorld& world, ModelParams vanilla, const std::vector<EvalCase>& cases) {
  SuiteInputs in;
  in.vocab = world.vocabulary();
  require(vanilla.config.vocab_size == in.vocab.size(), "model vocabulary size does not match the world");
  in.vanilla = std::move(vanilla);
  in.cases = cases;
  std::vector<TokenSequence> sentences;
  for (const std::string& s : world.sentences()) sentences.push_back(in.vocab.tokenize(s));
  in.corpus = pack_sentences(sentences, in.vocab.id(kSeparatorToken), in.vanilla.config.max_seq_len);
  return in;
}

std::vector<CovarianceStats> suite_covariances(const SuiteInputs& in, const EditPlan& plan, long samples) {
  const std::vector<int> layers = plan.method == EditMethod::rome ? std::vector<int>{plan.layer} : plan.layers;
  std::vector<CovarianceStats> out;
  for (int l : layers) out.push_back(estimate_covariance(in.vanilla, in.corpus, l, samples));
  return out;
}

std::string gamma_dir(double gamma) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), gamma);
  return "gamma_" + std::string(buf, res.ptr);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  require(f.good(), "cannot write " + path.string());
  f << text;
  require(f.good(), "failed writing " + path.string());
}

nlohmann::json case_scores_json(const CaseScores& s) {
  EvalReport r;
  r.cases = {s};
  return report_json(r).at("cases").at(0);
}

nlohmann::json drift_json(const CaseDrift& d) {
  return {{"kl", d.factors.kl},
          {"factor1", d.factors.factor1},
          {"factor2", d.factors.factor2},
          {"factor3", d.factors.factor3},
          {"layer_lo", d.factors.layer_lo},
          {"layer_hi", d.factors.layer_hi},
          {"p_edit", d.p_edit},
          {"n_prompts", d.n_prompts}};
}

double total_delta_norm(const EditResult& r) {
  double n = 0.0;
  for (const LayerDelta& d : r.deltas) n += d.delta.norm();
  return n;
}

EditPlan plan_for(const SuiteConfig& config, double gamma) {
  EditPlan p = config.plan;
  p.gamma = gamma;
  if (gamma > 0.0) p.steps = config.sadr_steps;
  return p;
}

void score_edited(CaseRecord& rec, const SuiteInputs& in, const ModelParams& edited, std::size_t index,
                  const EvalOptions& eval, LayerRange range) {
  const EvalCase& c = in.cases[index];
  rec.scores = score_case(edited, in.vocab, c, index, eval);
  if (!c.neighborhood_prompts.empty()) {
    rec.drift = distract_drift(in.vanilla, edited, in.vocab, c, range);
  }
}

void write_case(const fs::path& dir, const CaseRecord& rec, const EditResult* result, bool save_checkpoint_file) {
  if (dir.empty()) return;
  nlohmann::json j = {{"case_id", rec.case_id}, {"ok", rec.ok}};
  if (!rec.ok) {
    j["error"] = rec.error;
  } else {
    j["scores"] = case_scores_json(rec.scores);
    j["drift"] = drift_json(rec.drift);
  }
  write_text(dir / "scores.json", j.dump(1) + "\n");
  if (result != nullptr) {
    write_text(dir / "edit.json", edit_result_json(*result).dump(1) + "\n");
    if (save_checkpoint_file) save_checkpoint(result->params, (dir / "edited.ckpt").string());
  }
}

std::vector<CorrelationRow> correlate(const std::vector<CaseRecord>& cases) {
  std::vector<DriftFactors> factors;
  std::vector<double> p_edit;
  for (const CaseRecord& c : cases) {
    if (c.ok && c.drift.n_prompts > 0) {
      factors.push_back(c.drift.factors);
      p_edit.push_back(c.drift.p_edit);
    }
  }
  if (factors.size() < 10) return {};
  try {
    return correlation_report(factors, p_edit);
  } catch (const Error& e) {
    std::cerr << "warning: correlation skipped: " << e.what() << '\n';
    return {};
  }
}

}  // namespace

SuiteResult run_edit_suite(const SuiteInputs& in, const SuiteConfig& config, const std::string& output_dir) {
  const EvalOptions eval = config.eval_options();
  const int workers = worker_count(config.threads);
  const LayerRange range = config.drift_range.value_or(default_drift_range(in.vanilla.config.n_layers));
  const fs::path out = output_dir;
  SuiteResult result;
  if (in.cases.empty()) {
    std::cerr << "warning: edit suite has no cases\n";
  }
  for (const EvalCase& c : in.cases) c.validate(in.vocab);

  std::vector<CaseScores> vanilla(in.cases.size());
  std::vector<std::string> vanilla_error(in.cases.size());
  parallel_for(in.cases.size(), workers, [&](std::size_t i) {
    try {
      vanilla[i] = score_case(in.vanilla, in.vocab, in.cases[i], i, eval);
    } catch (const std::exception& e) {
      vanilla_error[i] = e.what();
    }
  });
  std::vector<CaseScores> vanilla_ok;
  for (std::size_t i = 0; i < in.cases.size(); ++i) {
    if (vanilla_error[i].empty()) {
      vanilla_ok.push_back(std::move(vanilla[i]));
    } else {
      std::cerr << "case " << in.cases[i].case_id << " (vanilla) failed: " << vanilla_error[i] << '\n';
    }
  }
  result.vanilla = assemble_report(std::move(vanilla_ok));

  const std::vector<CovarianceStats> covs =
      in.cases.empty() ? std::vector<CovarianceStats>{} : suite_covariances(in, config.plan, config.cov_samples);
  for (double gamma : config.gammas) {
    GammaRun run;
    run.gamma = gamma;
    run.plan = plan_for(config, gamma);
    run.plan.validate(in.vanilla.config);
    run.cases.resize(in.cases.size());
    const std::string gdir = gamma_dir(gamma);
    auto case_dir = [&](std::size_t i) { return out.empty() ? fs::path() : out / "edits" / in.cases[i].case_id / gdir; };

    if (config.memit_batch && run.plan.method == EditMethod::memit && !in.cases.empty()) {
      std::vector<PreparedRequest> reqs;
      for (const EvalCase& c : in.cases) reqs.push_back(prepare_request(in.vocab, c.request()));
      const EditResult er = memit_edit(in.vanilla, reqs, run.plan, covs);
      parallel_for(in.cases.size(), workers, [&](std::size_t i) {
        CaseRecord& rec = run.cases[i];
        rec.case_id = in.cases[i].case_id;
        try {
          require(vanilla_error[i].empty(), "vanilla scoring failed: " + vanilla_error[i]);
          score_edited(rec, in, er.params, i, eval, range);
          rec.trace = er.traces[i];
          rec.delta_norm = total_delta_norm(er);
          rec.ok = true;
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
        write_case(case_dir(i), rec, nullptr, false);
      });
      if (!out.empty()) {
        write_text(out / "edits" / ("batch_" + gdir) / "edit.json", edit_result_json(er).dump(1) + "\n");
      }
    } else {
      parallel_for(in.cases.size(), workers, [&](std::size_t i) {
        CaseRecord& rec = run.cases[i];
        rec.case_id = in.cases[i].case_id;
        std::optional<EditResult> er;
        try {
          require(vanilla_error[i].empty(), "vanilla scoring failed: " + vanilla_error[i]);
          const PreparedRequest req = prepare_request(in.vocab, in.cases[i].request());
          if (run.plan.method == EditMethod::rome) {
            er = rome_edit(in.vanilla, req, run.plan, covs.front());
          } else {
            er = memit_edit(in.vanilla, std::span<const PreparedRequest>(&req, 1), run.plan, covs);
          }
          score_edited(rec, in, er->params, i, eval, range);
          rec.trace = er->traces.front();
          rec.selected_heads = static_cast<int>(er->head_log.size());
          rec.delta_norm = total_delta_norm(*er);
          rec.ok = true;
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
        write_case(case_dir(i), rec, er ? &*er : nullptr, config.save_checkpoints);
      });
    }

    std::vector<CaseScores> ok;
    for (const CaseRecord& rec : run.cases) {
      if (rec.ok) {
        ok.push_back(rec.scores);
      } else {
        ++run.failures;
        std::cerr << "case " << rec.case_id << " (" << gdir << ") failed: " << rec.error << '\n';
      }
    }
    run.report = assemble_report(std::move(ok));
    run.correlation = correlate(run.cases);
    result.failures += run.failures;
    result.runs.push_back(std::move(run));
  }

  if (!out.empty()) {
    write_text(out / "reports" / "vanilla.json", report_json(result.vanilla).dump(1) + "\n");
    for (const GammaRun& run : result.runs) {
      const std::string g = gamma_dir(run.gamma);
      write_text(out / "reports" / (g + ".json"), report_json(run.report).dump(1) + "\n");
      std::vector<std::string> ids;
      std::vector<DriftFactors> factors;
      std::vector<double> p_edit;
      for (const CaseRecord& c : run.cases) {
        if (c.ok && c.drift.n_prompts > 0) {
          ids.push_back(c.case_id);
          factors.push_back(c.drift.factors);
          p_edit.push_back(c.drift.p_edit);
        }
      }
      write_text(out / "reports" / ("scatter_" + g + ".csv"), scatter_csv(ids, factors, p_edit));
    }
    write_text(out / "reports" / "table.csv", suite_table_csv(result, config.plan.method));
    write_text(out / "reports" / "summary.json", suite_json(result).dump(1) + "\n");
  }
  return result;
}

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

std::string table_row(const std::string& editor, const std::string& gamma, const EvalReport& r, int failures) {
  std::ostringstream os;
  os << editor << ',' << gamma << ',' << (r.avg_score ? fmt(*r.avg_score) : "");
  for (MetricKind k : kMetricKinds) os << ',' << (r[k] ? fmt(r[k]->score) : "");
  for (MetricKind k : kMetricKinds) os << ',' << (r[k] ? fmt(r[k]->magnitude) : "");
  os << ',' << (r.fluency ? fmt(*r.fluency) : "") << ',' << failures << '\n';
  return os.str();
}

}  // namespace

std::string suite_table_csv(const SuiteResult& r, EditMethod method) {
  std::string out = "editor,gamma,AvgS,ES,PS,NS,RS,DNS,EM,PM,NM,RM,DNM,FL,failures\n";
  out += table_row("none", "", r.vanilla, 0);
  for (const GammaRun& run : r.runs) out += table_row(to_string(method), fmt(run.gamma), run.report, run.failures);
  return out;
}

nlohmann::json suite_json(const SuiteResult& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const GammaRun& run : r.runs) {
    nlohmann::json corr = nlohmann::json::array();
    for (const CorrelationRow& c : run.correlation) {
      corr.push_back({{"factor", c.factor}, {"rho", c.rho}, {"p", c.p_value}});
    }
    nlohmann::json cases = nlohmann::json::array();
    for (const CaseRecord& c : run.cases) {
      nlohmann::json cj = {{"case_id", c.case_id}, {"ok", c.ok}};
      if (!c.ok) {
        cj["error"] = c.error;
      } else {
        cj["drift"] = drift_json(c.drift);
        cj["steps"] = c.trace.size();
        cj["final_loss"] = c.trace.empty() ? 0.0 : c.trace.back().total;
        cj["selected_heads"] = c.selected_heads;
        cj["delta_norm"] = c.delta_norm;
      }
      cases.push_back(std::move(cj));
    }
    runs.push_back({{"gamma", run.gamma},
                    {"plan", run.plan},
                    {"metrics", report_json(run.report).at("metrics")},
                    {"edit_success", run.report.cases.empty() ? 0.0 : edit_success(run.report)},
                    {"correlation", corr},
                    {"failures", run.failures},
                    {"cases", cases}});
  }
  return {{"vanilla", report_json(r.vanilla).at("metrics")}, {"runs", runs}, {"failures", r.failures}};
}

double edit_success(const EvalReport& r) {
  const auto& es = r[MetricKind::efficacy];
  const auto& ps = r[MetricKind::paraphrase];
  require(es && ps, "edit_success needs efficacy and paraphrase metrics");
  return 0.5 * (es->score + ps->score);
}

std::vector<SweepPoint> run_tradeoff_sweep(const SuiteInputs& in, const SuiteConfig& base,
                                           const std::vector<SweepAxis>& axes) {
  std::vector<SweepPoint> points;
  for (const SweepAxis& axis : axes) {
    require(axis.values.size() >= 2, "sweep axis '" + axis.name + "' needs at least 2 points");
    for (double value : axis.values) {
      SweepPoint p;
      p.axis = axis.name;
      p.value = value;
      try {
        SuiteConfig c = base;
        c.metrics = {"ES", "PS", "RS", "DNS"};
        c.gammas = {base.gammas.front()};
        if (axis.name == "gamma") {
          c.gammas = {value};
        } else if (axis.name == "steps") {
          c.plan.steps = static_cast<int>(value);
          c.sadr_steps = static_cast<int>(value);
        } else if (axis.name == "omega") {
          c.plan.omega = value;
        } else if (axis.name == "lr") {
          c.plan.lr = value;
        } else {
          throw Error("unknown sweep axis '" + axis.name + "'");
        }
        const SuiteResult r = run_edit_suite(in, c);
        const EvalReport& rep = r.runs.front().report;
        p.edit_success = edit_success(rep);
        p.rm = rep[MetricKind::relation] ? rep[MetricKind::relation]->magnitude : 0.0;
        p.dnm = rep[MetricKind::distract] ? rep[MetricKind::distract]->magnitude : 0.0;
        p.ok = true;
      } catch (const std::exception& e) {
        p.error = e.what();
        std::cerr << "sweep point " << axis.name << "=" << value << " failed: " << e.what() << '\n';
      }
      points.push_back(p);
    }
  }
  return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "axis,value,edit_success,RM,DNM\n";
  for (const SweepPoint& p : points) {
    if (!p.ok) continue;
    out += p.axis + ',' + fmt(p.value) + ',' + fmt(p.edit_success) + ',' + fmt(p.rm) + ',' + fmt(p.dnm) + '\n';
  }
  return out;
}

SuiteResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  require(!spec.output_dir.empty(), "experiment: output_dir is empty");
  const fs::path out = spec.output_dir;
  const FactWorld world = generate_world(spec.world_seed, spec.sizes);
  const std::vector<EvalCase> cases = generate_cases(world, spec.suite.n_cases, spec.suite.case_seed);
  write_world(world, cases, (out / "world").string());
  write_text(out / "spec.json", nlohmann::json(spec).dump(1) + "\n");

  const TrainResult trained = train_model(world, spec.model, spec.train);
  fs::create_directories(out / "checkpoints");
  save_trained(trained, (out / "checkpoints" / "model.ckpt").string());
  require(!trained.warning, "trained model recall " + fmt(trained.recall) + " is below the threshold " +
                                fmt(spec.train.recall_threshold) + "; edit suite not run");

  const SuiteInputs in = make_inputs(world, trained.params, cases);
  SuiteResult result = run_edit_suite(in, spec.suite, out.string());
  if (!spec.axes.empty()) {
    write_text(out / "reports" / "tradeoff.csv", sweep_csv(run_tradeoff_sweep(in, spec.suite, spec.axes)));
  }
  return result;
}

}  // namespace adrl
