#include "adrl/editor/editor.hpp"

#include "adrl/numerics/linalg.hpp"
#include "adrl/numerics/prob.hpp"

namespace adrl {

EditObjective::EditObjective(const ModelParams& params, const PreparedRequest& request, const EditPlan& plan,
                             std::span<const TokenSequence> prefixes, EditSite site)
    : params_(params), plan_(plan), site_(site) {
  const ModelConfig& cfg = params.config;
  plan.validate(cfg);
  require(site.layer >= 0 && site.layer < cfg.n_layers, "edit objective: site layer out of range");
  require(!prefixes.empty(), "edit objective: no prefixes");
  require(request.prompt.subject && request.essence.subject, "edit objective: request is missing subject spans");
  require(!request.target_new.empty(), "edit objective: empty target");

  const std::vector<TokenSequence> contexts = make_contexts(prefixes, request.prompt);
  n_contexts_ = static_cast<int>(contexts.size());
  target_len_ = request.target_new.size();
  std::vector<int> lengths;
  for (const TokenSequence& c : contexts) {
    const int off = static_cast<int>(tokens_.size());
    TokenSequence full = c;
    full.ids.insert(full.ids.end(), request.target_new.ids.begin(), request.target_new.ids.end() - 1);
    validate_sequence(cfg, full);
    tokens_.insert(tokens_.end(), full.ids.begin(), full.ids.end());
    targets_.resize(tokens_.size(), -1);
    for (int m = 0; m < target_len_; ++m) {
      targets_[static_cast<std::size_t>(off + c.size() - 1 + m)] = request.target_new.ids[static_cast<std::size_t>(m)];
    }
    target_rows_.push_back(off + c.size() - 1);
    sub_rows_.push_back(off + c.subject->end);
    lengths.push_back(full.size());
  }
  validate_sequence(cfg, request.essence);
  sub_rows_.push_back(static_cast<int>(tokens_.size()) + request.essence.subject->end);
  essence_row_ = static_cast<int>(tokens_.size()) + request.essence.size() - 1;
  tokens_.insert(tokens_.end(), request.essence.ids.begin(), request.essence.ids.end());
  targets_.resize(tokens_.size(), -1);
  lengths.push_back(request.essence.size());
  segs_ = ad::Segments::from_lengths(lengths);

  std::vector<TokenSequence> vanilla_inputs = contexts;
  vanilla_inputs.push_back(request.essence);
  vanilla_inputs.push_back(request.prompt);
  const std::vector<ForwardResult> vanilla = forward_batch(params, vanilla_inputs);
  for (int j = 0; j < n_contexts_; ++j) {
    refs_.push_back(make_sadr_reference(vanilla[static_cast<std::size_t>(j)].cache, contexts[j].subject->end));
  }
  const Matrix& ess_logits = vanilla[static_cast<std::size_t>(n_contexts_)].logits;
  essence_vanilla_ = softmax(ess_logits.row(ess_logits.rows() - 1).transpose()).probs().transpose();
  site_out_ = vanilla.back().cache.output(site.module, site.layer, request.prompt.subject->end).transpose();
  z_init_ = site.additive ? Vector::Zero(cfg.d_model) : site_out_;
}

EditObjective::Evaluation EditObjective::evaluate(const Vector& z, bool with_grad) const {
  const ModelConfig& cfg = params_.config;
  require(z.size() == cfg.d_model, "edit objective: z has wrong dimension");
  ad::Tape tape;
  const ParamVars pv = bind_params(tape, params_, false);
  const ad::Var zv = with_grad ? tape.variable(z.transpose()) : tape.constant(z.transpose());
  const std::vector<GraphSubstitution> subs = {{site_.module, site_.layer, sub_rows_, zv, site_.additive}};
  const GraphOutputs g = build_graph(tape, pv, cfg, tokens_, segs_, {}, subs);

  const ad::Var nll = ad::cross_entropy(g.logits, targets_);
  const std::vector<int> essence_rows = {essence_row_};
  const ad::Var kl =
      ad::kl_rows(tape.constant(essence_vanilla_), ad::softmax_rows(ad::select_rows(g.logits, essence_rows)));
  SadrTerm sadr = sadr_term(tape, g, segs_, refs_, {plan_.sadr_lo(), plan_.sadr_hi(cfg), plan_.all_heads});
  const ad::Var total = ad::add(ad::add(nll, ad::scale(kl, plan_.omega)), ad::scale(sadr.loss, plan_.gamma));

  Evaluation ev;
  ev.terms.total = total.scalar();
  ev.terms.nll = nll.scalar();
  ev.terms.kl = kl.scalar();
  ev.terms.sadr = sadr.loss.scalar();
  const Matrix& logits = g.logits.value();
  double p_sum = 0.0;
  for (int row0 : target_rows_) {
    double lp = 0.0;
    for (int m = 0; m < target_len_; ++m) {
      const int row = row0 + m;
      const double mx = logits.row(row).maxCoeff();
      const double lse = mx + std::log((logits.row(row).array() - mx).exp().sum());
      lp += logits(row, targets_[static_cast<std::size_t>(row)]) - lse;
    }
    p_sum += std::exp(lp / target_len_);
  }
  ev.terms.p_edit = p_sum / n_contexts_;
  ev.selected = std::move(sadr.selected);
  if (with_grad && std::isfinite(ev.terms.total)) {
    tape.backward(total);
    ev.grad = tape.grad(zv).transpose();
  }
  return ev;
}

OptimizeResult optimize_z(const EditObjective& objective, const EditPlan& plan) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  OptimizeResult out;
  out.z0 = objective.initial_z();
  Vector z = out.z0;
  Vector m = Vector::Zero(z.size());
  Vector v = Vector::Zero(z.size());
  const double radius = plan.clamp_norm ? *plan.clamp_norm * objective.site_output().norm() : 0.0;
  for (int step = 0; step < plan.steps; ++step) {
    const bool last = step == plan.steps - 1;
    EditObjective::Evaluation ev = objective.evaluate(z, !last);
    ev.terms.step = step;
    if (!std::isfinite(ev.terms.total) || (!last && !all_finite(ev.grad))) {
      throw Error("z optimization diverged (non-finite loss) at step " + std::to_string(step));
    }
    out.trace.push_back(ev.terms);
    for (const HeadSelection& h : ev.selected) {
      out.head_log.push_back({0, step, h.context, h.layer, h.head});
    }
    if (ev.terms.total < plan.stop_loss) {
      out.early_stopped = true;
      break;
    }
    if (last) {
      break;
    }
    const double t = step + 1;
    m = kBeta1 * m + (1.0 - kBeta1) * ev.grad;
    v = kBeta2 * v + (1.0 - kBeta2) * ev.grad.cwiseAbs2();
    const Vector m_hat = m / (1.0 - std::pow(kBeta1, t));
    const Vector v_hat = v / (1.0 - std::pow(kBeta2, t));
    z -= plan.lr * (m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();
    if (plan.clamp_norm) {
      const Vector d = z - out.z0;
      if (d.norm() > radius) {
        z = out.z0 + d * (radius / d.norm());
      }
    }
  }
  out.v = z;
  return out;
}

OptimizeResult optimize_v(const ModelParams& params, const PreparedRequest& request, const EditPlan& plan,
                          std::span<const TokenSequence> prefixes) {
  const EditObjective objective(params, request, plan, prefixes, {Module::mlp_out, plan.layer, false});
  return optimize_z(objective, plan);
}

Matrix apply_rank_one(const Matrix& w, const Vector& k, const Vector& v, const Matrix& c) {
  require(w.cols() == k.size() && w.rows() == v.size(), "apply_rank_one: shape mismatch");
  require(c.rows() == k.size() && c.cols() == k.size(), "apply_rank_one: covariance shape mismatch");
  const Vector u = solve_spd(c, k);
  const double denom = u.dot(k);
  require(std::abs(denom) >= 1e-12 * k.squaredNorm() && k.squaredNorm() > 0.0,
          "apply_rank_one: degenerate key ((C^-1 k)^T k is too small)");
  const Vector residual = v - w * k;
  Matrix out = w;
  out.noalias() += residual * (u.transpose() / denom);
  return out;
}

Matrix memit_layer_delta(const Matrix& k, const Matrix& r, const Matrix& c0) {
  require(k.cols() == r.cols(), "memit_layer_delta: keys and residuals differ in count");
  require(c0.rows() == k.rows() && c0.cols() == k.rows(), "memit_layer_delta: covariance shape mismatch");
  Matrix a = c0;
  a.noalias() += k * k.transpose();
  const Matrix solved = solve_spd(a, k);  // (C0 + K K^T)^-1 K
  return r * solved.transpose();
}

namespace {

Vector vanilla_site_output(const ModelParams& params, const TokenSequence& prompt, Module module, int layer) {
  const ForwardResult r = forward(params, prompt);
  return r.cache.output(module, layer, prompt.subject->end).transpose();
}

}  // namespace

EditResult rome_edit(const ModelParams& params, const PreparedRequest& request, const EditPlan& plan,
                     const CovarianceStats& covariance) {
  require(plan.method == EditMethod::rome, "rome_edit: plan method is not rome");
  plan.validate(params.config);
  require(covariance.layer == plan.layer, "rome_edit: covariance was estimated for layer " +
                                              std::to_string(covariance.layer) + ", plan edits layer " +
                                              std::to_string(plan.layer));
  require(covariance.c.rows() == params.config.d_ff, "rome_edit: covariance has wrong dimension");

  const std::vector<TokenSequence> prefixes =
      generate_prefixes(params, plan.n_prefixes, plan.prefix_seed, request.separator);
  const Vector k = collect_key(params, request.prompt, prefixes, plan.layer);
  OptimizeResult opt = optimize_v(params, request, plan, prefixes);

  const Matrix w = params.layers[static_cast<std::size_t>(plan.layer)].w_out.transpose();
  const Matrix updated = apply_rank_one(w, k, opt.v, covariance.regularized());

  EditResult res;
  res.method = EditMethod::rome;
  res.k_star.push_back(k);
  res.v_star.push_back(opt.v);
  res.deltas.push_back({plan.layer, (updated - w).transpose()});
  res.traces.push_back(std::move(opt.trace));
  res.head_log = std::move(opt.head_log);
  res.params = params;
  res.params.layers[static_cast<std::size_t>(plan.layer)].w_out = updated.transpose();
  return res;
}

EditResult memit_edit(const ModelParams& params, std::span<const PreparedRequest> requests, const EditPlan& plan,
                      std::span<const CovarianceStats> covariances) {
  require(plan.method == EditMethod::memit, "memit_edit: plan method is not memit");
  plan.validate(params.config);
  EditResult res;
  res.method = EditMethod::memit;
  res.params = params;
  if (requests.empty()) {
    return res;
  }
  auto covariance_for = [&](int layer) -> const CovarianceStats& {
    for (const CovarianceStats& c : covariances) {
      if (c.layer == layer) {
        require(c.c.rows() == params.config.d_ff, "memit_edit: covariance has wrong dimension");
        return c;
      }
    }
    throw Error("memit_edit: no covariance for layer " + std::to_string(layer));
  };
  const int top = plan.layers.back();
  const std::vector<TokenSequence> prefixes =
      generate_prefixes(params, plan.n_prefixes, plan.prefix_seed, requests.front().separator);

  std::vector<Vector> targets;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const EditObjective objective(params, requests[i], plan, prefixes, {Module::block_out, top, true});
    OptimizeResult opt = optimize_z(objective, plan);
    targets.push_back(objective.site_output() + opt.v);
    for (HeadLogEntry& h : opt.head_log) {
      h.request = static_cast<int>(i);
      res.head_log.push_back(h);
    }
    res.traces.push_back(std::move(opt.trace));
  }
  res.v_star = targets;

  const auto n = static_cast<Eigen::Index>(requests.size());
  for (int l : plan.layers) {
    Matrix keys(params.config.d_ff, n);
    Matrix resid(params.config.d_model, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const PreparedRequest& req = requests[static_cast<std::size_t>(i)];
      keys.col(i) = collect_key(res.params, req.prompt, prefixes, l);
      const Vector h = vanilla_site_output(res.params, req.prompt, Module::block_out, top);
      resid.col(i) = (targets[static_cast<std::size_t>(i)] - h) / static_cast<double>(top - l + 1);
    }
    if (l == plan.layers.front()) {
      for (Eigen::Index i = 0; i < n; ++i) res.k_star.push_back(keys.col(i));
    }
    const Matrix c0 = plan.cov_weight * covariance_for(l).regularized();
    const Matrix delta = memit_layer_delta(keys, resid, c0).transpose();
    res.params.layers[static_cast<std::size_t>(l)].w_out += delta;
    res.deltas.push_back({l, delta});
  }
  return res;
}

void to_json(nlohmann::json& j, const LossTerms& t) {
  j = {{"step", t.step}, {"total", t.total}, {"nll", t.nll}, {"kl", t.kl}, {"sadr", t.sadr}, {"p_edit", t.p_edit}};
}

void to_json(nlohmann::json& j, const HeadLogEntry& h) {
  j = {{"request", h.request}, {"step", h.step}, {"context", h.context}, {"layer", h.layer}, {"head", h.head}};
}

nlohmann::json edit_result_json(const EditResult& r) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["method"] = to_string(r.method);
  j["k_star"] = nlohmann::json::array();
  for (const Vector& k : r.k_star) j["k_star"].push_back(vec(k));
  j["v_star"] = nlohmann::json::array();
  for (const Vector& v : r.v_star) j["v_star"].push_back(vec(v));
  j["deltas"] = nlohmann::json::array();
  for (const LayerDelta& d : r.deltas) {
    j["deltas"].push_back({{"layer", d.layer}, {"frobenius_norm", d.delta.norm()}});
  }
  j["loss_traces"] = r.traces;
  j["head_log"] = r.head_log;
  return j;
}

}  // namespace adrl
