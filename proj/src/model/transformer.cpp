#include "adrl/model/transformer.hpp"

#include <cmath>

namespace adrl {

std::string_view module_name(Module m) {
  switch (m) {
    case Module::attn_out: return "attn_out";
    case Module::mlp_out: return "mlp_out";
    case Module::block_out: return "block_out";
    case Module::attn_weights: return "attn_weights";
    case Module::attn_logits: return "attn_logits";
    case Module::mlp_key: return "mlp_key";
  }
  return "?";
}

Module parse_module(std::string_view name) {
  for (Module m : {Module::attn_out, Module::mlp_out, Module::block_out, Module::attn_weights, Module::attn_logits,
                   Module::mlp_key}) {
    if (module_name(m) == name) {
      return m;
    }
  }
  if (name == "attn") return Module::attn_out;
  if (name == "mlp") return Module::mlp_out;
  if (name == "block") return Module::block_out;
  throw Error("unknown module '" + std::string(name) + "'");
}

bool is_attention_module(Module m) { return m == Module::attn_weights || m == Module::attn_logits; }

HookSpec HookSpec::substitute(Module module, int layer, std::optional<int> token, Matrix payload) {
  HookSpec h;
  h.kind = HookKind::substitute;
  h.module = module;
  h.layer = layer;
  h.token = token;
  h.payload = std::move(payload);
  return h;
}

// ---------------------------------------------------------------------------

const Matrix& ActivationCache::output(Module module, int layer) const {
  require(layer >= 0 && layer < n_layers, "cache layer " + std::to_string(layer) + " out of range");
  switch (module) {
    case Module::attn_out: return attn_out[layer];
    case Module::mlp_out: return mlp_out[layer];
    case Module::block_out: return block_out[layer];
    case Module::mlp_key: return mlp_key[layer];
    case Module::attn_weights: return attn_weights[layer];
    case Module::attn_logits: return attn_logits[layer];
  }
  throw Error("unknown module");
}

RowVector ActivationCache::output(Module module, int layer, int token) const {
  require(!is_attention_module(module), "use attention_row for attention modules");
  require(token >= 0 && token < length, "cache token " + std::to_string(token) + " out of range");
  return output(module, layer).row(token);
}

Matrix ActivationCache::attention(int layer, int head) const {
  require(head >= 0 && head < n_heads, "head out of range");
  return attn_weights.at(layer).block(static_cast<Eigen::Index>(head) * length, 0, length, length);
}

RowVector ActivationCache::attention_row(int layer, int head, int token) const {
  require(head >= 0 && head < n_heads && token >= 0 && token < length, "attention index out of range");
  return attn_weights.at(layer).row(static_cast<Eigen::Index>(head) * length + token);
}

RowVector ActivationCache::logits_row(int layer, int head, int token) const {
  require(head >= 0 && head < n_heads && token >= 0 && token < length, "attention index out of range");
  return attn_logits.at(layer).row(static_cast<Eigen::Index>(head) * length + token);
}

// ---------------------------------------------------------------------------

void validate_sequence(const ModelConfig& config, const TokenSequence& seq) {
  require(!seq.empty(), "cannot run the model on an empty sequence");
  require(seq.size() <= config.max_seq_len, "sequence length " + std::to_string(seq.size()) +
                                                " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  for (int id : seq.ids) {
    require(id >= 0 && id < config.vocab_size, "token id " + std::to_string(id) + " outside vocabulary");
  }
}

void validate_hooks(const ModelConfig& config, int length, std::span<const HookSpec> hooks) {
  for (std::size_t i = 0; i < hooks.size(); ++i) {
    const HookSpec& h = hooks[i];
    const std::string where = "hook " + std::to_string(i) + " (" + std::string(module_name(h.module)) + ", layer " +
                              std::to_string(h.layer) + "): ";
    require(h.layer >= 0 && h.layer < config.n_layers, where + "layer out of range");
    if (h.token) {
      require(*h.token >= 0 && *h.token < length, where + "token out of range");
    }
    if (h.head) {
      require(is_attention_module(h.module), where + "head index only applies to attention modules");
      require(*h.head >= 0 && *h.head < config.n_heads, where + "head out of range");
    }
    if (h.key) {
      require(h.module == Module::attn_logits, where + "key index only applies to attn_logits");
      require(h.token.has_value(), where + "key substitution needs a token");
      require(*h.key >= 0 && *h.key <= *h.token, where + "key must not lie in the future of token");
    }
    if (h.kind == HookKind::capture) {
      continue;
    }
    require(h.module != Module::mlp_key, where + "mlp_key is capture-only");
    const Eigen::Index tokens = h.token ? 1 : length;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (is_attention_module(h.module)) {
      const Eigen::Index heads = h.head ? 1 : config.n_heads;
      rows = heads * tokens;
      cols = h.key ? 1 : length;
    } else {
      rows = tokens;
      cols = config.d_model;
    }
    require(h.payload.rows() == rows && h.payload.cols() == cols,
            where + "payload shape " + std::to_string(h.payload.rows()) + "x" + std::to_string(h.payload.cols()) +
                " does not match hooked tensor " + std::to_string(rows) + "x" + std::to_string(cols));
    require(all_finite(h.payload), where + "payload has non-finite entries");
  }
}

std::vector<GraphPatch> hooks_to_patches(const ModelConfig& config, int length, std::span<const HookSpec> hooks) {
  std::vector<GraphPatch> patches;
  for (const HookSpec& h : hooks) {
    if (h.kind == HookKind::capture) {
      continue;
    }
    GraphPatch p;
    p.module = h.module;
    p.layer = h.layer;
    std::vector<int> tokens;
    if (h.token) {
      tokens.push_back(*h.token);
    } else {
      for (int t = 0; t < length; ++t) {
        tokens.push_back(t);
      }
    }
    if (!is_attention_module(h.module)) {
      p.rows = tokens;
      p.values = h.payload;
    } else {
      std::vector<int> heads;
      if (h.head) {
        heads.push_back(*h.head);
      } else {
        for (int hh = 0; hh < config.n_heads; ++hh) {
          heads.push_back(hh);
        }
      }
      Eigen::Index r = 0;
      if (h.key) {
        for (int hh : heads) {
          p.entries.emplace_back(hh * length + tokens[0], *h.key);
          p.entry_values.push_back(h.payload(r++, 0));
        }
      } else {
        p.values.resize(static_cast<Eigen::Index>(heads.size() * tokens.size()), length);
        for (int hh : heads) {
          for (int t : tokens) {
            p.rows.push_back(hh * length + t);
            p.values.row(r) = h.payload.row(r);
            ++r;
          }
        }
      }
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

ParamVars bind_params(ad::Tape& tape, const ModelParams& params, bool trainable) {
  auto bind = [&](const Matrix& m) { return trainable ? tape.parameter(m) : tape.reference(m); };
  ParamVars pv;
  pv.tok_embed = bind(params.tok_embed);
  pv.pos_embed = bind(params.pos_embed);
  for (const LayerParams& lp : params.layers) {
    ParamVars::Layer l;
    l.ln1_gain = bind(lp.ln1_gain);
    l.ln1_bias = bind(lp.ln1_bias);
    l.ln2_gain = bind(lp.ln2_gain);
    l.ln2_bias = bind(lp.ln2_bias);
    l.w_q = bind(lp.w_q);
    l.w_k = bind(lp.w_k);
    l.w_v = bind(lp.w_v);
    l.w_o = bind(lp.w_o);
    l.w_in = bind(lp.w_in);
    l.b_in = bind(lp.b_in);
    l.w_out = bind(lp.w_out);
    pv.layers.push_back(l);
  }
  pv.lnf_gain = bind(params.lnf_gain);
  pv.lnf_bias = bind(params.lnf_bias);
  pv.unembed = bind(params.unembed);
  return pv;
}

namespace {

ad::Var apply_interventions(ad::Var x, Module module, int layer, std::span<const GraphPatch> patches,
                            std::span<const GraphSubstitution> subs) {
  for (const GraphPatch& p : patches) {
    if (p.module != module || p.layer != layer) {
      continue;
    }
    if (!p.rows.empty()) {
      x = ad::assign_rows(x, p.rows, p.values);
    }
    if (!p.entries.empty()) {
      x = ad::assign_entries(x, p.entries, p.entry_values);
    }
  }
  for (const GraphSubstitution& s : subs) {
    if (s.module != module || s.layer != layer) {
      continue;
    }
    x = s.additive ? ad::add_to_rows(x, s.rows, s.z) : ad::replace_rows(x, s.rows, s.z);
  }
  return x;
}

}  // namespace

GraphOutputs build_graph(ad::Tape& tape, const ParamVars& pv, const ModelConfig& config, std::span<const int> tokens,
                         const ad::Segments& segs, std::span<const GraphPatch> patches,
                         std::span<const GraphSubstitution> subs) {
  (void)tape;
  require(static_cast<int>(tokens.size()) == segs.tokens(), "build_graph: token count does not match segments");
  require(segs.max_length() <= config.max_seq_len, "build_graph: sequence exceeds max_seq_len");
  for (const GraphSubstitution& s : subs) {
    require(s.module == Module::mlp_out || s.module == Module::block_out || s.module == Module::attn_out,
            "differentiable substitution only supports attn_out, mlp_out and block_out");
  }
  const std::vector<int> positions = segs.positions();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(config.d_head()));

  GraphOutputs out;
  ad::Var h = ad::add(ad::embedding(pv.tok_embed, tokens), ad::embedding(pv.pos_embed, positions));
  for (int l = 0; l < config.n_layers; ++l) {
    const ParamVars::Layer& lp = pv.layers[static_cast<std::size_t>(l)];
    LayerVars lv;
    ad::Var x = ad::layer_norm(h, lp.ln1_gain, lp.ln1_bias);
    ad::Var q = ad::matmul(x, lp.w_q);
    ad::Var k = ad::matmul(x, lp.w_k);
    ad::Var v = ad::matmul(x, lp.w_v);
    lv.attn_logits = apply_interventions(ad::attention_scores(q, k, segs, config.n_heads, attn_scale),
                                         Module::attn_logits, l, patches, subs);
    lv.attn_weights = apply_interventions(ad::causal_softmax(lv.attn_logits, segs, config.n_heads),
                                          Module::attn_weights, l, patches, subs);
    ad::Var ctx = ad::attention_mix(lv.attn_weights, v, segs, config.n_heads);
    lv.attn_out = apply_interventions(ad::matmul(ctx, lp.w_o), Module::attn_out, l, patches, subs);

    ad::Var mlp_in;
    ad::Var resid;
    if (config.parallel_residual) {
      mlp_in = x;
      resid = h;
    } else {
      resid = ad::add(h, lv.attn_out);
      mlp_in = ad::layer_norm(resid, lp.ln2_gain, lp.ln2_bias);
    }
    lv.mlp_key = ad::gelu(ad::add_row(ad::matmul(mlp_in, lp.w_in), lp.b_in));
    lv.mlp_out = apply_interventions(ad::matmul(lv.mlp_key, lp.w_out), Module::mlp_out, l, patches, subs);
    ad::Var block = config.parallel_residual ? ad::add(ad::add(resid, lv.attn_out), lv.mlp_out)
                                             : ad::add(resid, lv.mlp_out);
    lv.block_out = apply_interventions(block, Module::block_out, l, patches, subs);
    h = lv.block_out;
    out.layers.push_back(lv);
  }
  ad::Var final_hidden = ad::layer_norm(h, pv.lnf_gain, pv.lnf_bias);
  out.logits = ad::matmul(final_hidden, pv.unembed);
  return out;
}

ForwardResult forward(const ModelParams& params, const TokenSequence& seq, std::span<const HookSpec> hooks) {
  const ModelConfig& cfg = params.config;
  validate_sequence(cfg, seq);
  validate_hooks(cfg, seq.size(), hooks);
  const std::vector<GraphPatch> patches = hooks_to_patches(cfg, seq.size(), hooks);

  ad::Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  const ad::Segments segs = ad::Segments::single(seq.size());
  const GraphOutputs g = build_graph(tape, pv, cfg, seq.ids, segs, patches);

  ForwardResult r;
  r.logits = g.logits.value();
  r.cache = slice_cache(g, cfg, segs, 0);
  return r;
}

ActivationCache slice_cache(const GraphOutputs& g, const ModelConfig& config, const ad::Segments& segs, int s) {
  const int n = segs.tokens();
  const int off = segs.offsets[s];
  const int len = segs.length(s);
  ActivationCache c;
  c.n_layers = config.n_layers;
  c.n_heads = config.n_heads;
  c.length = len;
  for (const LayerVars& lv : g.layers) {
    c.attn_out.push_back(lv.attn_out.value().middleRows(off, len));
    c.mlp_key.push_back(lv.mlp_key.value().middleRows(off, len));
    c.mlp_out.push_back(lv.mlp_out.value().middleRows(off, len));
    c.block_out.push_back(lv.block_out.value().middleRows(off, len));
    Matrix w(static_cast<Eigen::Index>(config.n_heads) * len, len);
    Matrix a(w.rows(), len);
    for (int h = 0; h < config.n_heads; ++h) {
      w.middleRows(h * len, len) = lv.attn_weights.value().block(h * n + off, 0, len, len);
      a.middleRows(h * len, len) = lv.attn_logits.value().block(h * n + off, 0, len, len);
    }
    c.attn_weights.push_back(std::move(w));
    c.attn_logits.push_back(std::move(a));
  }
  return c;
}

std::vector<ForwardResult> forward_batch(const ModelParams& params, std::span<const TokenSequence> seqs) {
  const ModelConfig& cfg = params.config;
  std::vector<ForwardResult> out;
  if (seqs.empty()) {
    return out;
  }
  std::vector<int> lengths;
  std::vector<int> tokens;
  for (const TokenSequence& s : seqs) {
    validate_sequence(cfg, s);
    lengths.push_back(s.size());
    tokens.insert(tokens.end(), s.ids.begin(), s.ids.end());
  }
  const ad::Segments segs = ad::Segments::from_lengths(lengths);
  ad::Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  const GraphOutputs g = build_graph(tape, pv, cfg, tokens, segs);
  for (int s = 0; s < segs.count(); ++s) {
    ForwardResult r;
    r.logits = g.logits.value().middleRows(segs.offsets[s], segs.length(s));
    r.cache = slice_cache(g, cfg, segs, s);
    out.push_back(std::move(r));
  }
  return out;
}

Matrix last_logits_batch(const ModelParams& params, std::span<const TokenSequence> seqs) {
  const ModelConfig& cfg = params.config;
  if (seqs.empty()) {
    return Matrix(0, cfg.vocab_size);
  }
  std::vector<int> lengths;
  std::vector<int> tokens;
  for (const TokenSequence& s : seqs) {
    validate_sequence(cfg, s);
    lengths.push_back(s.size());
    tokens.insert(tokens.end(), s.ids.begin(), s.ids.end());
  }
  const ad::Segments segs = ad::Segments::from_lengths(lengths);
  ad::Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  const GraphOutputs g = build_graph(tape, pv, cfg, tokens, segs);
  Matrix out(static_cast<Eigen::Index>(seqs.size()), cfg.vocab_size);
  for (int s = 0; s < segs.count(); ++s) {
    out.row(s) = g.logits.value().row(segs.offsets[s + 1] - 1);
  }
  return out;
}

}  // namespace adrl
