#pragma once

#include "adrl/editor/editor.hpp"
#include "adrl/editor/keys.hpp"
#include "adrl/evaluation/drift.hpp"
#include "adrl/evaluation/metrics.hpp"
#include "adrl/harness/train.hpp"
#include "adrl/harness/world.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace adrl {

/// Model shape used by experiments unless the spec overrides it.
ModelConfig default_experiment_model();

struct SweepAxis {
  std::string name;  // gamma, steps, omega or lr
  std::vector<double> values;
};

/// Plan tuned for the default experiment model: l* = 1 and the same 80-step budget as SADR runs.
EditPlan default_suite_plan();

struct SuiteConfig {
  int n_cases = 100;
  std::uint64_t case_seed = 0;
  EditPlan plan = default_suite_plan();  // base plan; gamma and steps are set per run
  std::vector<double> gammas = {0.0};
  int sadr_steps = 80;              // steps used when gamma > 0
  bool memit_batch = false;         // memit: one edit holding every case
  std::vector<std::string> metrics = {"ES", "PS", "NS", "RS", "DNS", "FL"};
  FluencyOptions fluency;
  std::optional<LayerRange> drift_range;
  long cov_samples = 20000;
  bool save_checkpoints = false;
  int threads = 0;  // 0: ADRL_THREADS or hardware concurrency

  EvalOptions eval_options() const;
};

struct ExperimentSpec {
  std::uint64_t world_seed = 1;
  WorldSizes sizes;
  ModelConfig model = default_experiment_model();
  TrainConfig train;
  SuiteConfig suite;
  std::vector<SweepAxis> axes;
  std::string output_dir;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);
ExperimentSpec load_spec(const std::string& path);

/// Read-only inputs shared by every case of a suite.
struct SuiteInputs {
  ModelParams vanilla;
  Vocabulary vocab;
  std::vector<EvalCase> cases;
  std::vector<TokenSequence> corpus;  // packed training text, for covariance estimates
};

SuiteInputs make_inputs(const FactWorld& world, ModelParams vanilla, const std::vector<EvalCase>& cases);

struct CaseRecord {
  std::string case_id;
  bool ok = false;
  std::string error;
  CaseScores scores;
  CaseDrift drift;
  std::vector<LossTerms> trace;
  int selected_heads = 0;  // head selections logged over the optimization
  double delta_norm = 0.0;
};

struct GammaRun {
  double gamma = 0.0;
  EditPlan plan;
  EvalReport report;  // over successful cases
  std::vector<CaseRecord> cases;
  std::vector<CorrelationRow> correlation;  // drift vs P(o_edit) on distract prompts; empty below 10 cases
  int failures = 0;
};

struct SuiteResult {
  EvalReport vanilla;
  std::vector<GammaRun> runs;
  int failures = 0;
};

/// Covariance statistics for every layer the plan edits.
std::vector<CovarianceStats> suite_covariances(const SuiteInputs& in, const EditPlan& plan, long samples);

/// Resets to the vanilla model for every case, applies one edit per gamma, and scores it.
/// Case errors are recorded and counted; the suite carries on.
SuiteResult run_edit_suite(const SuiteInputs& in, const SuiteConfig& config,
                           const std::string& output_dir = std::string());

/// Row layout: editor,gamma,AvgS,ES,PS,NS,RS,DNS,EM,PM,NM,RM,DNM,FL,failures.
std::string suite_table_csv(const SuiteResult& r, EditMethod method);
nlohmann::json suite_json(const SuiteResult& r);

/// mean(ES, PS).
double edit_success(const EvalReport& r);

struct SweepPoint {
  std::string axis;
  double value = 0.0;
  bool ok = false;
  std::string error;
  double edit_success = 0.0;
  double rm = 0.0;
  double dnm = 0.0;
};

/// One suite per axis value, other hyperparameters at the base plan.
std::vector<SweepPoint> run_tradeoff_sweep(const SuiteInputs& in, const SuiteConfig& base,
                                           const std::vector<SweepAxis>& axes);

/// Columns axis,value,edit_success,RM,DNM; failed points are omitted.
std::string sweep_csv(const std::vector<SweepPoint>& points);

/// Directory name of one gamma value.
std::string gamma_dir(double gamma);

/// Full pipeline under spec.output_dir: world/, checkpoints/, edits/<case_id>/<gamma>/, reports/.
SuiteResult run_experiment(const ExperimentSpec& spec);

}  // namespace adrl
