#include "adrl/harness/experiment.hpp"
#include "adrl/harness/files.hpp"
#include "adrl/model/transformer.hpp"
#include "adrl/tracing/tracing.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace adrl;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  require(f.good(), "cannot write " + path.string());
  f << text;
  require(f.good(), "failed writing " + path.string());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

EvalCase pick_case(const std::string& path, const std::string& case_id) {
  const std::vector<EvalCase> cases = load_case_file(path);
  require(!cases.empty(), path + ": no cases");
  if (case_id.empty()) return cases.front();
  for (const EvalCase& c : cases) {
    if (c.case_id == case_id) return c;
  }
  throw Error(path + ": no case with id '" + case_id + "'");
}

std::vector<TokenSequence> load_corpus(const std::string& path, const Vocabulary& vocab, int seq_len) {
  std::ifstream f(path);
  require(f.good(), "cannot open corpus " + path + " (pass --world DIR)");
  std::vector<TokenSequence> sentences;
  std::string line;
  while (std::getline(f, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) sentences.push_back(vocab.tokenize(line));
  }
  require(!sentences.empty(), path + ": corpus is empty");
  return pack_sentences(sentences, vocab.id(kSeparatorToken), seq_len);
}

Module trace_module(const std::string& name) {
  if (name == "attn") return Module::attn_out;
  if (name == "mlp") return Module::mlp_out;
  return Module::block_out;
}

struct PromptChoice {
  TokenSequence tokens;
  std::string label;
};

PromptChoice choose_prompt(const Vocabulary& vocab, const EvalCase& c, const std::string& kind, int neighbor) {
  if (kind == "edit") return {render_prompt(vocab, c.prompt, c.subject), "edit"};
  require(!c.neighborhood_prompts.empty(), "case '" + c.case_id + "' has no neighborhood prompts");
  require(neighbor >= 0 && neighbor < static_cast<int>(c.neighborhood_prompts.size()),
          "--neighbor out of range for case '" + c.case_id + "'");
  return {distract_prompt(vocab, c, c.neighborhood_prompts[static_cast<std::size_t>(neighbor)]).tokens,
          "distract:" + std::to_string(neighbor)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adrl: locate-then-edit knowledge editing on toy transformers"};
  app.require_subcommand(1);

  // gen-world
  auto* gen = app.add_subcommand("gen-world", "Generate a synthetic fact world and counterfactual cases");
  std::uint64_t gen_seed = 1;
  WorldSizes sizes;
  int n_cases = 100;
  std::uint64_t case_seed = 0;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "World seed");
  gen->add_option("--subjects", sizes.subjects, "Subjects")->capture_default_str();
  gen->add_option("--relations", sizes.relations, "Relations")->capture_default_str();
  gen->add_option("--objects", sizes.objects, "Objects per relation")->capture_default_str();
  gen->add_option("--templates", sizes.templates, "Paraphrase templates per relation")->capture_default_str();
  gen->add_option("--cases", n_cases, "Counterfactual cases to write")->capture_default_str();
  gen->add_option("--case-seed", case_seed, "Case sampling seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a toy model on a world");
  std::string train_world, train_config, train_out;
  train->add_option("--world", train_world, "World directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--config", train_config, "JSON with optional 'model' and 'train' objects")
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint path")->required();

  // edit
  auto* edit = app.add_subcommand("edit", "Apply one edit and score it");
  std::string edit_model, edit_case, edit_case_id, edit_world, edit_out, edit_method = "rome";
  EditPlan plan = default_suite_plan();
  std::optional<int> edit_steps;
  int memit_span = 2;
  long cov_samples = 20000;
  bool all_heads = false;
  edit->add_option("--model", edit_model, "Vanilla checkpoint")->required()->check(CLI::ExistingFile);
  edit->add_option("--case", edit_case, "Case file (JSON or JSON lines)")->required()->check(CLI::ExistingFile);
  edit->add_option("--case-id", edit_case_id, "Case to edit; default the first");
  edit->add_option("--method", edit_method, "rome or memit")->check(CLI::IsMember({"rome", "memit"}));
  edit->add_option("--gamma", plan.gamma, "SADR weight")->capture_default_str();
  edit->add_option("--steps", edit_steps, "Optimization steps");
  edit->add_option("--omega", plan.omega, "KL weight")->capture_default_str();
  edit->add_option("--lr", plan.lr, "Learning rate")->capture_default_str();
  edit->add_option("--layer", plan.layer, "Edited layer (memit: last layer of the range)")->capture_default_str();
  edit->add_option("--span", memit_span, "memit: number of edited layers")->capture_default_str();
  edit->add_option("--prefixes", plan.n_prefixes, "Prefix contexts")->capture_default_str();
  edit->add_flag("--all-heads", all_heads, "Restrain every head instead of the drifting ones");
  edit->add_option("--world", edit_world, "World directory holding corpus.txt; default the case file's directory");
  edit->add_option("--cov-samples", cov_samples, "Keys used for the covariance estimate")->capture_default_str();
  edit->add_option("--out", edit_out, "Output directory")->required();

  // trace
  auto* trace = app.add_subcommand("trace", "Contaminating substitution grid");
  std::string tr_vanilla, tr_edited, tr_case, tr_case_id, tr_module = "mlp", tr_target = "true", tr_prompt = "distract",
                                                                   tr_out;
  int tr_window = 6, tr_neighbor = 0;
  trace->add_option("--vanilla", tr_vanilla, "Vanilla checkpoint")->required()->check(CLI::ExistingFile);
  trace->add_option("--edited", tr_edited, "Edited checkpoint")->required()->check(CLI::ExistingFile);
  trace->add_option("--case", tr_case, "Case file")->required()->check(CLI::ExistingFile);
  trace->add_option("--case-id", tr_case_id, "Case id; default the first");
  trace->add_option("--module", tr_module, "attn, mlp or block")->check(CLI::IsMember({"attn", "mlp", "block"}));
  trace->add_option("--window", tr_window, "Layer window size")->capture_default_str();
  trace->add_option("--target", tr_target, "Target summarized on stdout")->check(CLI::IsMember({"true", "edit"}));
  trace->add_option("--prompt", tr_prompt, "distract or edit")->check(CLI::IsMember({"distract", "edit"}));
  trace->add_option("--neighbor", tr_neighbor, "Neighborhood prompt used by the distract prompt");
  trace->add_option("--out", tr_out, "CSV path; a JSON grid is written next to it")->required();

  // patch-attn
  auto* patch = app.add_subcommand("patch-attn", "Patch vanilla attention into the edited model");
  std::string pa_vanilla, pa_edited, pa_case, pa_case_id, pa_prompt = "distract", pa_out;
  int pa_window = 10, pa_neighbor = 0;
  std::optional<int> pa_token, pa_head;
  patch->add_option("--vanilla", pa_vanilla, "Vanilla checkpoint")->required()->check(CLI::ExistingFile);
  patch->add_option("--edited", pa_edited, "Edited checkpoint")->required()->check(CLI::ExistingFile);
  patch->add_option("--case", pa_case, "Case file")->required()->check(CLI::ExistingFile);
  patch->add_option("--case-id", pa_case_id, "Case id; default the first");
  patch->add_option("--window", pa_window, "Layer window size")->capture_default_str();
  patch->add_option("--single-token", pa_token, "Patch only the pre-softmax score of last token -> N");
  patch->add_option("--head", pa_head, "With --single-token: patch one head only");
  patch->add_option("--prompt", pa_prompt, "distract or edit")->check(CLI::IsMember({"distract", "edit"}));
  patch->add_option("--neighbor", pa_neighbor, "Neighborhood prompt used by the distract prompt");
  patch->add_option("--out", pa_out, "CSV path; JSON is written next to it")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score vanilla and edited models on cases");
  std::string ev_vanilla, ev_edited, ev_cases, ev_out;
  bool ev_no_fluency = false;
  int ev_threads = 0;
  eval->add_option("--vanilla", ev_vanilla, "Vanilla checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--edited", ev_edited, "Edited checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--cases", ev_cases, "Case file")->required()->check(CLI::ExistingFile);
  eval->add_flag("--no-fluency", ev_no_fluency, "Skip generation entropy");
  eval->add_option("--threads", ev_threads, "Workers; 0 uses ADRL_THREADS or all cores");
  eval->add_option("--out", ev_out, "JSON report path")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a full experiment spec");
  std::string sw_spec, sw_out;
  sweep->add_option("--spec", sw_spec, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", sw_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const FactWorld world = generate_world(gen_seed, sizes);
      const std::vector<EvalCase> cases = generate_cases(world, n_cases, case_seed);
      write_world(world, cases, gen_out);
      std::cout << "world: " << world.subjects.size() << " subjects, " << world.facts.size() << " facts, "
                << world.vocabulary().size() << " symbols, " << cases.size() << " cases -> " << gen_out << '\n';
    } else if (*train) {
      const FactWorld world = read_world(train_world);
      ModelConfig model = default_experiment_model();
      TrainConfig tc;
      if (!train_config.empty()) {
        const nlohmann::json j = nlohmann::json::parse(read_file(train_config));
        if (j.contains("model")) model = j.at("model").get<ModelConfig>();
        if (j.contains("train")) tc = j.at("train").get<TrainConfig>();
      }
      const TrainResult r = train_model(world, model, tc);
      save_trained(r, train_out);
      world.vocabulary().save(vocab_sidecar_path(train_out));
      std::cout << "recall " << r.recall << " after " << r.epochs_run << " epochs -> " << train_out << '\n';
      if (r.warning) std::cerr << "warning: recall is below the threshold " << tc.recall_threshold << '\n';
    } else if (*edit) {
      const LoadedModel vanilla = load_model(edit_model);
      const EvalCase c = pick_case(edit_case, edit_case_id);
      plan.method = parse_method(edit_method);
      plan.all_heads = all_heads;
      plan.steps = edit_steps.value_or(plan.steps);
      if (plan.method == EditMethod::memit) {
        require(memit_span >= 1, "--span must be >= 1");
        plan.layers.clear();
        for (int l = std::max(0, plan.layer - memit_span + 1); l <= plan.layer; ++l) plan.layers.push_back(l);
      }
      plan.validate(vanilla.params.config);
      const fs::path world_dir = edit_world.empty() ? fs::path(edit_case).parent_path() : fs::path(edit_world);
      SuiteInputs in;
      in.vanilla = vanilla.params;
      in.vocab = vanilla.vocab;
      in.cases = {c};
      in.corpus = load_corpus((world_dir / "corpus.txt").string(), in.vocab, in.vanilla.config.max_seq_len);
      c.validate(in.vocab);
      const std::vector<CovarianceStats> covs = suite_covariances(in, plan, cov_samples);
      const PreparedRequest req = prepare_request(in.vocab, c.request());
      const EditResult er = plan.method == EditMethod::rome
                                ? rome_edit(in.vanilla, req, plan, covs.front())
                                : memit_edit(in.vanilla, std::span<const PreparedRequest>(&req, 1), plan, covs);
      const fs::path out = edit_out;
      fs::create_directories(out);
      save_model(er.params, in.vocab, (out / "edited.ckpt").string());
      write_file(out / "edit.json", edit_result_json(er).dump(1) + "\n");
      EvalOptions eo;
      eo.threads = 1;
      const EvalReport before = evaluate(in.vanilla, in.vocab, in.cases, eo);
      const EvalReport after = evaluate(er.params, in.vocab, in.cases, eo);
      write_file(out / "scores.json", nlohmann::json{{"vanilla", report_json(before)}, {"edited", report_json(after)}}
                                              .dump(1) + "\n");
      std::cout << "case " << c.case_id << ": ";
      for (MetricKind k : kMetricKinds) {
        if (after[k]) std::cout << score_name(k) << ' ' << before[k]->score << " -> " << after[k]->score << "  ";
      }
      std::cout << "\nedited model -> " << (out / "edited.ckpt").string() << '\n';
    } else if (*trace) {
      const LoadedModel vanilla = load_model(tr_vanilla);
      const LoadedModel edited = load_model(tr_edited);
      const EvalCase c = pick_case(tr_case, tr_case_id);
      const PromptChoice p = choose_prompt(vanilla.vocab, c, tr_prompt, tr_neighbor);
      const TraceGrid g = contaminating_substitution(vanilla.params, edited.params, p.tokens, trace_module(tr_module),
                                                     tr_window, vanilla.vocab.tokenize(c.target_true),
                                                     vanilla.vocab.tokenize(c.target_new));
      write_file(tr_out, trace_csv(g));
      nlohmann::json j = trace_json(g);
      j["case_id"] = c.case_id;
      j["prompt_kind"] = p.label;
      write_file(fs::path(tr_out).replace_extension(".json"), j.dump(1) + "\n");
      const Matrix& e = tr_target == "edit" ? g.effect_edit : g.effect_true;
      Eigen::Index l = 0, t = 0;
      const double lowest = e.minCoeff(&l, &t);
      const double highest = e.maxCoeff();
      std::cout << "trace " << tr_module << " k=" << tr_window << " target " << tr_target << ": min " << lowest
                << " at layer " << l << " token " << t << ", max " << highest << " -> " << tr_out << '\n';
    } else if (*patch) {
      const LoadedModel vanilla = load_model(pa_vanilla);
      const LoadedModel edited = load_model(pa_edited);
      const EvalCase c = pick_case(pa_case, pa_case_id);
      const PromptChoice p = choose_prompt(vanilla.vocab, c, pa_prompt, pa_neighbor);
      const ActivationCache cache = forward(vanilla.params, p.tokens, {}).cache;
      const TokenSequence ot = vanilla.vocab.tokenize(c.target_true);
      const TokenSequence oe = vanilla.vocab.tokenize(c.target_new);
      require(!pa_head || pa_token, "--head needs --single-token");
      const PatchReport r = pa_token ? patch_attention_value(edited.params, cache, p.tokens, *pa_token, pa_window, ot,
                                                             oe, pa_head)
                                     : patch_attention_matrix(edited.params, cache, p.tokens, pa_window, ot, oe);
      write_file(pa_out, patch_csv(r));
      nlohmann::json j = patch_json(r);
      j["case_id"] = c.case_id;
      j["prompt_kind"] = p.label;
      write_file(fs::path(pa_out).replace_extension(".json"), j.dump(1) + "\n");
      std::cout << "baseline p_true " << r.baseline().probs.p_true << " p_edit " << r.baseline().probs.p_edit << '\n';
      for (std::size_t i = 1; i < r.rows.size(); ++i) {
        const PatchRow& row = r.rows[i];
        std::cout << "layer " << row.layer << " [" << row.window.lo << "," << row.window.hi << "] p_true "
                  << row.probs.p_true << " p_edit " << row.probs.p_edit << '\n';
      }
    } else if (*eval) {
      const LoadedModel vanilla = load_model(ev_vanilla);
      const LoadedModel edited = load_model(ev_edited);
      const std::vector<EvalCase> cases = load_case_file(ev_cases);
      for (const EvalCase& c : cases) c.validate(vanilla.vocab);
      EvalOptions eo;
      eo.with_fluency = !ev_no_fluency;
      eo.threads = ev_threads;
      const EvalReport a = evaluate(vanilla.params, vanilla.vocab, cases, eo);
      const EvalReport b = evaluate(edited.params, vanilla.vocab, cases, eo);
      write_file(ev_out, nlohmann::json{{"vanilla", report_json(a)}, {"edited", report_json(b)}}.dump(1) + "\n");
      std::cout << "vanilla\n" << report_csv(a) << "edited\n" << report_csv(b);
    } else if (*sweep) {
      ExperimentSpec spec = load_spec(sw_spec);
      spec.output_dir = sw_out;
      const SuiteResult r = run_experiment(spec);
      std::cout << suite_table_csv(r, spec.suite.plan.method);
      if (r.failures > 0) std::cerr << r.failures << " case edits failed; see edits/*/scores.json\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
