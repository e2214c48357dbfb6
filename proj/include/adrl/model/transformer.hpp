#pragma once

#include "adrl/model/params.hpp"
#include "adrl/model/vocab.hpp"
#include "adrl/numerics/autodiff.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace adrl {

enum class Module { attn_out, mlp_out, block_out, attn_weights, attn_logits, mlp_key };

std::string_view module_name(Module m);
Module parse_module(std::string_view name);
bool is_attention_module(Module m);

enum class HookKind { capture, substitute };

/// A forward-pass intervention.
///
/// Payload layouts for substitute hooks (T = sequence length, H = heads):
///   attn_out / mlp_out / block_out : [1 x d_model] for one token, [T x d_model] for all
///   attn_weights / attn_logits     : one row of length T per (head, token), head-major;
///                                    `head` narrows to one head, `token` to one query row
///   attn_logits with `key` set     : [heads x 1], replacing only the (token, key) score
/// Capture hooks carry no payload; every forward fills the whole cache anyway.
struct HookSpec {
  HookKind kind = HookKind::substitute;
  Module module = Module::mlp_out;
  int layer = 0;
  std::optional<int> token;
  std::optional<int> head;
  std::optional<int> key;
  Matrix payload;

  static HookSpec substitute(Module module, int layer, std::optional<int> token, Matrix payload);
};

/// Every intermediate of one forward pass over a single sequence.
class ActivationCache {
 public:
  int n_layers = 0;
  int n_heads = 0;
  int length = 0;

  std::vector<Matrix> attn_out;      // per layer [T x d_model]
  std::vector<Matrix> mlp_key;       // per layer [T x d_ff]
  std::vector<Matrix> mlp_out;       // per layer [T x d_model]
  std::vector<Matrix> block_out;     // per layer [T x d_model]
  std::vector<Matrix> attn_weights;  // per layer [H*T x T], head-major
  std::vector<Matrix> attn_logits;   // per layer [H*T x T], head-major; masked entries are 0

  const Matrix& output(Module module, int layer) const;
  RowVector output(Module module, int layer, int token) const;
  Matrix attention(int layer, int head) const;  // [T x T] post-softmax
  RowVector attention_row(int layer, int head, int token) const;
  RowVector logits_row(int layer, int head, int token) const;
};

struct ForwardResult {
  Matrix logits;  // [T x V]
  ActivationCache cache;
};

void validate_sequence(const ModelConfig& config, const TokenSequence& seq);
void validate_hooks(const ModelConfig& config, int length, std::span<const HookSpec> hooks);

ForwardResult forward(const ModelParams& params, const TokenSequence& seq, std::span<const HookSpec> hooks = {});

// ---------------------------------------------------------------------------
// Graph-level interface used by training and the editors. Several sequences are
// packed into one graph (see ad::Segments); row indices below are global.

struct ParamVars {
  struct Layer {
    ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias, w_q, w_k, w_v, w_o, w_in, b_in, w_out;
  };
  ad::Var tok_embed, pos_embed;
  std::vector<Layer> layers;
  ad::Var lnf_gain, lnf_bias, unembed;
};

// Binds params by reference; `params` must outlive the tape.
ParamVars bind_params(ad::Tape& tape, const ModelParams& params, bool trainable);

/// Constant override of a module output inside a packed graph.
struct GraphPatch {
  Module module = Module::mlp_out;
  int layer = 0;
  std::vector<int> rows;  // vector modules: token rows; attention: h*N + token rows
  Matrix values;          // one row per entry of `rows`
  std::vector<std::pair<int, int>> entries;  // attention score entries (row, key)
  std::vector<double> entry_values;
};

/// Differentiable substitution: rows of a vector module become (or are shifted by) z.
struct GraphSubstitution {
  Module module = Module::mlp_out;
  int layer = 0;
  std::vector<int> rows;
  ad::Var z;
  bool additive = false;
};

struct LayerVars {
  ad::Var attn_logits, attn_weights, attn_out, mlp_key, mlp_out, block_out;
};

struct GraphOutputs {
  ad::Var logits;  // [N x V]
  std::vector<LayerVars> layers;
};

GraphOutputs build_graph(ad::Tape& tape, const ParamVars& pv, const ModelConfig& config, std::span<const int> tokens,
                         const ad::Segments& segs, std::span<const GraphPatch> patches = {},
                         std::span<const GraphSubstitution> subs = {});

std::vector<GraphPatch> hooks_to_patches(const ModelConfig& config, int length, std::span<const HookSpec> hooks);

/// The activations of sequence `s` of a packed graph, in single-sequence layout.
ActivationCache slice_cache(const GraphOutputs& g, const ModelConfig& config, const ad::Segments& segs, int s);

/// Independent hook-free forward passes over several sequences in one packed graph.
std::vector<ForwardResult> forward_batch(const ModelParams& params, std::span<const TokenSequence> seqs);

/// Last-position logits of each sequence, computed in one packed pass. [B x V]
Matrix last_logits_batch(const ModelParams& params, std::span<const TokenSequence> seqs);

}  // namespace adrl
