#pragma once

#include "adrl/editor/keys.hpp"
#include "adrl/editor/request.hpp"
#include "adrl/editor/sadr.hpp"

#include <vector>

namespace adrl {

struct LossTerms {
  int step = 0;
  double total = 0.0;
  double nll = 0.0;     // mean over contexts of -mean log P(o_edit)
  double kl = 0.0;      // KL(P(x|p') || P_z(x|p')), before the omega weight
  double sadr = 0.0;    // L_SADR, before the gamma weight
  double p_edit = 0.0;  // mean over contexts of P(o_edit)
};

struct HeadLogEntry {
  int request = 0;
  int step = 0;
  int context = 0;
  int layer = 0;
  int head = 0;
};

/// Where z enters the forward pass: rome replaces mlp_out at l*, memit shifts block_out
/// at the last edited layer.
struct EditSite {
  Module module = Module::mlp_out;
  int layer = 0;
  bool additive = false;
};

/// L(z) + gamma * L_SADR(z) for one request over the prefixed contexts and the essence prompt.
class EditObjective {
 public:
  EditObjective(const ModelParams& params, const PreparedRequest& request, const EditPlan& plan,
                std::span<const TokenSequence> prefixes, EditSite site);

  struct Evaluation {
    LossTerms terms;
    std::vector<HeadSelection> selected;
    Vector grad;  // d total / d z; empty unless requested
  };
  Evaluation evaluate(const Vector& z, bool with_grad) const;

  const EditSite& site() const { return site_; }
  const Vector& initial_z() const { return z_init_; }     // vanilla output (replace) or zero (additive)
  const Vector& site_output() const { return site_out_; }  // vanilla output at the site, unprefixed prompt
  int n_contexts() const { return n_contexts_; }

 private:
  const ModelParams& params_;
  EditPlan plan_;
  EditSite site_;
  int n_contexts_ = 0;
  std::vector<int> tokens_;
  ad::Segments segs_;
  std::vector<int> sub_rows_;
  std::vector<int> targets_;
  int target_len_ = 0;
  std::vector<int> target_rows_;  // per context, first teacher-forced row
  int essence_row_ = 0;
  Matrix essence_vanilla_;  // 1 x V
  std::vector<SadrReference> refs_;
  Vector z_init_;
  Vector site_out_;
};

struct OptimizeResult {
  Vector z0;
  Vector v;
  std::vector<LossTerms> trace;
  std::vector<HeadLogEntry> head_log;
  bool early_stopped = false;
};

/// Adam on z from objective.initial_z(); stops once the total loss drops below plan.stop_loss.
OptimizeResult optimize_z(const EditObjective& objective, const EditPlan& plan);

/// v* for a rome plan: z replaces mlp_out at (l*, subject's last token).
OptimizeResult optimize_v(const ModelParams& params, const PreparedRequest& request, const EditPlan& plan,
                          std::span<const TokenSequence> prefixes);

/// Column-convention rank-one update (W k = v): W + (v - W k) (C^-1 k)^T / ((C^-1 k)^T k).
Matrix apply_rank_one(const Matrix& w, const Vector& k, const Vector& v, const Matrix& c);

/// Column-convention MEMIT layer update: R K^T (C0 + K K^T)^-1, with K [d_in x n], R [d_out x n].
Matrix memit_layer_delta(const Matrix& k, const Matrix& r, const Matrix& c0);

struct LayerDelta {
  int layer = 0;
  Matrix delta;  // added to layers[layer].w_out, [d_ff x d_model]
};

struct EditResult {
  EditMethod method = EditMethod::rome;
  std::vector<Vector> k_star;  // rome: k*; memit: keys at the first edited layer
  std::vector<Vector> v_star;  // rome: v*; memit: targets h^L + delta
  std::vector<LayerDelta> deltas;
  std::vector<std::vector<LossTerms>> traces;  // per request
  std::vector<HeadLogEntry> head_log;
  ModelParams params;
};

EditResult rome_edit(const ModelParams& params, const PreparedRequest& request, const EditPlan& plan,
                     const CovarianceStats& covariance);

EditResult memit_edit(const ModelParams& params, std::span<const PreparedRequest> requests, const EditPlan& plan,
                      std::span<const CovarianceStats> covariances);

void to_json(nlohmann::json& j, const LossTerms& t);
void to_json(nlohmann::json& j, const HeadLogEntry& h);
/// Loss traces, head log, keys, values and delta norms; params are saved separately.
nlohmann::json edit_result_json(const EditResult& r);

}  // namespace adrl
