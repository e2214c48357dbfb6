#include "adrl/harness/experiment.hpp"
#include "adrl/harness/files.hpp"
#include "adrl/model/checkpoint.hpp"
#include "adrl/model/generation.hpp"
#include "adrl/tracing/tracing.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

namespace py = pybind11;
using namespace adrl;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python package wraps it with the json module.
json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

struct Model {
  ModelParams params;
  Vocabulary vocab;

  static Model load(const std::string& path) {
    LoadedModel m = load_model(path);
    return {std::move(m.params), std::move(m.vocab)};
  }

  TokenSequence tokens(const std::string& text) const { return vocab.tokenize(text); }
};

std::string world_json(std::uint64_t seed, const std::string& sizes_json) {
  WorldSizes sizes;
  const json s = parse(sizes_json);
  sizes.subjects = s.value("subjects", sizes.subjects);
  sizes.relations = s.value("relations", sizes.relations);
  sizes.objects = s.value("objects", sizes.objects);
  sizes.templates = s.value("templates", sizes.templates);
  sizes.kinds = s.value("kinds", sizes.kinds);
  sizes.subject_tokens = s.value("subject_tokens", sizes.subject_tokens);
  sizes.profiles = s.value("profiles", sizes.profiles);
  return json(generate_world(seed, sizes)).dump();
}

void gen_world(const std::string& dir, const std::string& world, int n_cases, std::uint64_t case_seed) {
  const FactWorld w = parse(world).get<FactWorld>();
  write_world(w, generate_cases(w, n_cases, case_seed), dir);
}

std::string train(const std::string& world_dir, const std::string& config, const std::string& out) {
  const FactWorld world = read_world(world_dir);
  const json c = parse(config);
  const ModelConfig model = c.contains("model") ? c.at("model").get<ModelConfig>() : default_experiment_model();
  const TrainConfig tc = c.contains("train") ? c.at("train").get<TrainConfig>() : TrainConfig{};
  TrainResult r;
  {
    py::gil_scoped_release release;
    r = train_model(world, model, tc);
  }
  save_trained(r, out);
  world.vocabulary().save(vocab_sidecar_path(out));
  return train_report_json(r).dump();
}

std::pair<Model, std::string> edit(const Model& m, const std::string& case_json, const std::string& plan_json,
                                   const std::string& corpus_path, long cov_samples) {
  const EvalCase c = parse(case_json).get<EvalCase>();
  json pj = json(default_suite_plan());
  pj.update(parse(plan_json));
  const EditPlan plan = pj.get<EditPlan>();
  plan.validate(m.params.config);
  c.validate(m.vocab);
  SuiteInputs in;
  in.vanilla = m.params;
  in.vocab = m.vocab;
  in.cases = {c};
  std::vector<TokenSequence> sentences;
  std::ifstream f(corpus_path);
  require(f.good(), "cannot open corpus " + corpus_path);
  for (std::string line; std::getline(f, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) sentences.push_back(m.vocab.tokenize(line));
  }
  in.corpus = pack_sentences(sentences, m.vocab.id(kSeparatorToken), m.params.config.max_seq_len);
  EditResult er;
  {
    py::gil_scoped_release release;
    const std::vector<CovarianceStats> covs = suite_covariances(in, plan, cov_samples);
    const PreparedRequest req = prepare_request(m.vocab, c.request());
    er = plan.method == EditMethod::rome ? rome_edit(m.params, req, plan, covs.front())
                                         : memit_edit(m.params, std::span<const PreparedRequest>(&req, 1), plan, covs);
  }
  return {Model{er.params, m.vocab}, edit_result_json(er).dump()};
}

std::string evaluate_cases(const Model& m, const std::string& cases_json, bool with_fluency, int threads) {
  const std::vector<EvalCase> cases = parse(cases_json).get<std::vector<EvalCase>>();
  for (const EvalCase& c : cases) c.validate(m.vocab);
  EvalOptions o;
  o.with_fluency = with_fluency;
  o.threads = threads;
  py::gil_scoped_release release;
  return report_json(evaluate(m.params, m.vocab, cases, o)).dump();
}

Module trace_module(const std::string& name) {
  if (name == "attn") return Module::attn_out;
  if (name == "mlp") return Module::mlp_out;
  if (name == "block") return Module::block_out;
  return parse_module(name);
}

py::dict trace(const Model& vanilla, const Model& edited, const std::string& prompt, const std::string& subject,
               const std::string& target_true, const std::string& target_edit, const std::string& module, int window) {
  TokenSequence p = vanilla.tokens(prompt);
  if (!subject.empty()) p.subject = locate_subject_span(vanilla.vocab, p, subject);
  TraceGrid g;
  {
    py::gil_scoped_release release;
    g = contaminating_substitution(vanilla.params, edited.params, p, trace_module(module), window,
                                   vanilla.tokens(target_true), vanilla.tokens(target_edit));
  }
  py::dict d;
  d["effect_true"] = g.effect_true;
  d["effect_edit"] = g.effect_edit;
  d["base_true"] = g.base.p_true;
  d["base_edit"] = g.base.p_edit;
  d["csv"] = trace_csv(g);
  return d;
}

py::list patch_attention(const Model& vanilla, const Model& edited, const std::string& prompt,
                         const std::string& target_true, const std::string& target_edit, int window,
                         std::optional<int> token) {
  const TokenSequence p = vanilla.tokens(prompt);
  const ActivationCache cache = forward(vanilla.params, p).cache;
  const TokenSequence ot = vanilla.tokens(target_true);
  const TokenSequence oe = vanilla.tokens(target_edit);
  const PatchReport r = token ? patch_attention_value(edited.params, cache, p, *token, window, ot, oe)
                              : patch_attention_matrix(edited.params, cache, p, window, ot, oe);
  py::list rows;
  for (const PatchRow& row : r.rows) {
    py::dict d;
    d["layer"] = row.layer;
    d["window"] = py::make_tuple(row.window.lo, row.window.hi);
    d["p_true"] = row.probs.p_true;
    d["p_edit"] = row.probs.p_edit;
    rows.append(d);
  }
  return rows;
}

std::string run_experiment_json(const std::string& spec_json, const std::string& out_dir) {
  ExperimentSpec spec = parse(spec_json).get<ExperimentSpec>();
  spec.output_dir = out_dir;
  py::gil_scoped_release release;
  return suite_table_csv(run_experiment(spec), spec.suite.plan.method);
}

}  // namespace

PYBIND11_MODULE(_adrl, m) {
  m.doc() = "Locate-then-edit knowledge editing on toy transformers";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def("save", [](const Model& self, const std::string& path) { save_model(self.params, self.vocab, path); })
      .def_property_readonly("vocab", [](const Model& self) { return self.vocab.symbols(); })
      .def_property_readonly("config", [](const Model& self) { return json(self.params.config).dump(); })
      .def("tokenize", [](const Model& self, const std::string& text) { return self.tokens(text).ids; })
      .def("detokenize", [](const Model& self, const std::vector<int>& ids) { return self.vocab.detokenize(ids); })
      .def("logits",
           [](const Model& self, const std::string& text) { return Matrix(forward(self.params, self.tokens(text)).logits); })
      .def("next_token_probs",
           [](const Model& self, const std::string& text) {
             return Vector(next_token_distribution(self.params, self.tokens(text)).probs());
           })
      .def("sequence_prob",
           [](const Model& self, const std::string& prompt, const std::string& continuation) {
             return sequence_prob(self.params, self.tokens(prompt), self.tokens(continuation));
           })
      .def(
          "generate",
          [](const Model& self, const std::string& prompt, int n, bool sample, std::uint64_t seed) {
            DecodeOptions o;
            o.mode = sample ? DecodeMode::sample : DecodeMode::greedy;
            o.seed = seed;
            return self.vocab.detokenize(generate(self.params, self.tokens(prompt), n, o).ids);
          },
          py::arg("prompt"), py::arg("n"), py::arg("sample") = false, py::arg("seed") = 0);

  m.def("world_json", &world_json, py::arg("seed"), py::arg("sizes_json") = "");
  m.def("gen_world", &gen_world, py::arg("dir"), py::arg("world_json"), py::arg("n_cases"), py::arg("case_seed") = 0);
  m.def("train", &train, py::arg("world_dir"), py::arg("config_json"), py::arg("out"));
  m.def("edit", &edit, py::arg("model"), py::arg("case_json"), py::arg("plan_json"), py::arg("corpus_path"),
        py::arg("cov_samples") = 20000);
  m.def("evaluate", &evaluate_cases, py::arg("model"), py::arg("cases_json"), py::arg("with_fluency") = true,
        py::arg("threads") = 1);
  m.def("trace", &trace, py::arg("vanilla"), py::arg("edited"), py::arg("prompt"), py::arg("subject"),
        py::arg("target_true"), py::arg("target_edit"), py::arg("module") = "mlp", py::arg("window") = 6);
  m.def("patch_attention", &patch_attention, py::arg("vanilla"), py::arg("edited"), py::arg("prompt"),
        py::arg("target_true"), py::arg("target_edit"), py::arg("window") = 10, py::arg("token") = py::none());
  m.def("run_experiment", &run_experiment_json, py::arg("spec_json"), py::arg("out_dir"));

  m.def(
      "apply_rank_one",
      [](const Matrix& w, const Vector& k, const Vector& v, const Matrix& c) { return apply_rank_one(w, k, v, c); },
      py::arg("w"), py::arg("k"), py::arg("v"), py::arg("c"));
  m.def("avg_score", &avg_score, py::arg("es"), py::arg("ps"), py::arg("ns"), py::arg("rs"), py::arg("dns"));
  m.def(
      "select_drift_heads",
      [](const Matrix& vanilla_rows, const Matrix& edited_rows, int subject_last) {
        return select_drift_heads(vanilla_rows, edited_rows, subject_last);
      },
      py::arg("vanilla_rows"), py::arg("edited_rows"), py::arg("subject_last"));
}
