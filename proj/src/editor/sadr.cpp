#include "adrl/editor/sadr.hpp"

namespace adrl {

std::vector<int> select_drift_heads(const Matrix& vanilla_rows, const Matrix& edited_rows, int subject_last) {
  require(vanilla_rows.rows() == edited_rows.rows() && vanilla_rows.cols() == edited_rows.cols(),
          "select_drift_heads: vanilla and edited attention come from different prompts");
  require(subject_last >= 0 && subject_last < vanilla_rows.cols(), "select_drift_heads: subject index out of range");
  const double bound = vanilla_rows.col(subject_last).maxCoeff() + kDriftTolerance;
  std::vector<int> heads;
  for (Eigen::Index h = 0; h < edited_rows.rows(); ++h) {
    if (edited_rows(h, subject_last) > bound) {
      heads.push_back(static_cast<int>(h));
    }
  }
  return heads;
}

Matrix last_token_rows(const ActivationCache& cache, int layer) {
  Matrix rows(cache.n_heads, cache.length);
  for (int h = 0; h < cache.n_heads; ++h) {
    rows.row(h) = cache.attention_row(layer, h, cache.length - 1);
  }
  return rows;
}

std::vector<int> select_drift_heads(const ActivationCache& vanilla, const ActivationCache& edited, int subject_last,
                                    int layer) {
  require(vanilla.length == edited.length && vanilla.n_heads == edited.n_heads,
          "select_drift_heads: vanilla and edited caches differ in shape");
  return select_drift_heads(last_token_rows(vanilla, layer), last_token_rows(edited, layer), subject_last);
}

SadrReference make_sadr_reference(const ActivationCache& vanilla, int subject_last) {
  require(subject_last >= 0 && subject_last < vanilla.length, "SADR reference: subject index out of range");
  SadrReference r;
  r.subject_last = subject_last;
  r.query = vanilla.length - 1;
  for (int l = 0; l < vanilla.n_layers; ++l) {
    r.rows.push_back(last_token_rows(vanilla, l));
  }
  return r;
}

SadrTerm sadr_term(ad::Tape& tape, const GraphOutputs& graph, const ad::Segments& segs,
                   std::span<const SadrReference> refs, const SadrOptions& options) {
  require(!refs.empty(), "SADR: no contexts");
  require(static_cast<int>(refs.size()) <= segs.count(), "SADR: more references than packed sequences");
  require(options.layer_lo >= 0 && options.layer_hi < static_cast<int>(graph.layers.size()) &&
              options.layer_lo <= options.layer_hi,
          "SADR: layer bounds out of range");
  const int n = segs.tokens();
  const Eigen::Index width = graph.layers.front().attn_weights.cols();
  SadrTerm term;
  ad::Var total;
  for (int l = options.layer_lo; l <= options.layer_hi; ++l) {
    const Matrix& weights = graph.layers[static_cast<std::size_t>(l)].attn_weights.value();
    const int heads = static_cast<int>(weights.rows()) / n;
    std::vector<int> rows;
    Matrix reference = Matrix::Zero(static_cast<Eigen::Index>(refs.size()) * heads, width);
    Eigen::Index used = 0;
    for (std::size_t j = 0; j < refs.size(); ++j) {
      const SadrReference& ref = refs[j];
      const int len = ref.query + 1;
      const int last = segs.offsets[j] + ref.query;
      require(len <= segs.length(static_cast<int>(j)), "SADR: query position beyond context " + std::to_string(j));
      require(static_cast<int>(ref.rows.size()) > l && ref.rows[l].cols() == len && ref.rows[l].rows() == heads,
              "SADR: vanilla cache does not match context " + std::to_string(j));
      Matrix edited(heads, len);
      for (int h = 0; h < heads; ++h) {
        edited.row(h) = weights.block(h * n + last, 0, 1, len);
      }
      std::vector<int> selected;
      if (options.all_heads) {
        for (int h = 0; h < heads; ++h) selected.push_back(h);
      } else {
        selected = select_drift_heads(ref.rows[l], edited, ref.subject_last);
      }
      for (int h : selected) {
        term.selected.push_back({static_cast<int>(j), l, h});
        rows.push_back(h * n + last);
        reference.block(used, 0, 1, len) = ref.rows[l].row(h);
        ++used;
      }
    }
    if (rows.empty()) {
      continue;
    }
    ad::Var kl = ad::kl_rows(tape.constant(reference.topRows(used)),
                             ad::select_rows(graph.layers[static_cast<std::size_t>(l)].attn_weights, rows));
    total = total.valid() ? ad::add(total, kl) : kl;
  }
  if (!total.valid()) {
    term.loss = tape.constant(Matrix::Zero(1, 1));
  } else {
    term.loss = ad::scale(total, 1.0 / static_cast<double>(refs.size()));
  }
  return term;
}

SadrValue sadr_loss(const ModelParams& params, const Vector& z, int layer, std::span<const TokenSequence> contexts,
                    std::span<const ActivationCache> vanilla_caches, const SadrOptions& options) {
  require(!contexts.empty(), "sadr_loss: no contexts");
  require(vanilla_caches.size() == contexts.size(), "sadr_loss: missing vanilla cache for some context");
  const ModelConfig& cfg = params.config;
  require(z.size() == cfg.d_model, "sadr_loss: z has wrong dimension");
  std::vector<int> lengths;
  std::vector<int> tokens;
  std::vector<int> rows;
  std::vector<SadrReference> refs;
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    const TokenSequence& c = contexts[j];
    validate_sequence(cfg, c);
    require(c.subject.has_value(), "sadr_loss: context without subject span");
    require(vanilla_caches[j].length == c.size(), "sadr_loss: vanilla cache length does not match its context");
    rows.push_back(static_cast<int>(tokens.size()) + c.subject->end);
    lengths.push_back(c.size());
    tokens.insert(tokens.end(), c.ids.begin(), c.ids.end());
    refs.push_back(make_sadr_reference(vanilla_caches[j], c.subject->end));
  }
  const ad::Segments segs = ad::Segments::from_lengths(lengths);
  ad::Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  const std::vector<GraphSubstitution> subs = {
      {Module::mlp_out, layer, rows, tape.constant(z.transpose()), false}};
  const GraphOutputs g = build_graph(tape, pv, cfg, tokens, segs, {}, subs);
  SadrTerm t = sadr_term(tape, g, segs, refs, options);
  return {t.loss.scalar(), std::move(t.selected)};
}

}  // namespace adrl
