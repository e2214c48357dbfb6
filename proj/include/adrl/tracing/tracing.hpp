#pragma once

#include "adrl/model/transformer.hpp"

#include "json.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace adrl {

/// Inclusive layer range; empty when lo > hi.
struct WindowRange {
  int lo = 0;
  int hi = -1;
  int size() const { return hi >= lo ? hi - lo + 1 : 0; }
  bool operator==(const WindowRange&) const = default;
};

/// The k layers [c - floor(k/2), c - floor(k/2) + k - 1] around centre c, clipped to [0, L-1].
WindowRange layer_window(int center, int k, int n_layers);

/// Probabilities of o_true and o_edit after `prompt` (mean per-token log-prob for multi-token objects).
struct TargetProbs {
  double p_true = 0.0;
  double p_edit = 0.0;
};

TargetProbs target_probs(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& o_true,
                         const TokenSequence& o_edit, std::span<const HookSpec> hooks = {});

/// Builds hooks for a forward pass of the given total length (prompt plus teacher-forced target).
using HookFactory = std::function<std::vector<HookSpec>(int length)>;

TargetProbs target_probs(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& o_true,
                         const TokenSequence& o_edit, const HookFactory& make_hooks);

struct TraceGrid {
  Module module = Module::mlp_out;
  int window = 0;
  Matrix effect_true;  // [L x T]: P_{vanilla with edited outputs}(o_true) - P_vanilla(o_true)
  Matrix effect_edit;  // same for o_edit
  std::vector<WindowRange> windows;  // per centre layer, after clipping
  TargetProbs base;                  // hook-free vanilla
  std::vector<int> prompt;
  std::optional<SubjectSpan> subject;
  std::vector<int> target_true, target_edit;
};

/// Transplants the edited model's `module` outputs at token t over each centre's window into
/// the vanilla forward pass, for every (centre layer, token).
TraceGrid contaminating_substitution(const ModelParams& vanilla, const ModelParams& edited,
                                     const TokenSequence& prompt, Module module, int window,
                                     const TokenSequence& o_true, const TokenSequence& o_edit);

struct PatchRow {
  int layer = 0;   // 0 is the unpatched baseline; centre layer c is reported as c + 1
  int token = -1;  // key position for value patches, -1 for whole matrices
  WindowRange window;
  TargetProbs probs;
};

struct PatchReport {
  Module module = Module::attn_weights;
  int window = 0;
  std::vector<PatchRow> rows;

  const PatchRow& baseline() const { return rows.front(); }
};

/// Runs the edited model with every head's post-softmax attention in each window replaced by
/// the vanilla matrices.
PatchReport patch_attention_matrix(const ModelParams& edited, const ActivationCache& vanilla_cache,
                                   const TokenSequence& prompt, int window, const TokenSequence& o_true,
                                   const TokenSequence& o_edit);

/// Replaces the pre-softmax (last token -> token) score with vanilla's in all heads of each
/// window (or only `head`), then renormalizes.
PatchReport patch_attention_value(const ModelParams& edited, const ActivationCache& vanilla_cache,
                                  const TokenSequence& prompt, int token, int window, const TokenSequence& o_true,
                                  const TokenSequence& o_edit, std::optional<int> head = std::nullopt);

/// Token buckets for summarizing grids: first/middle/last subject token, first subsequent
/// token, further tokens, last token. Empty buckets are omitted.
std::map<std::string, std::vector<int>> token_buckets(int length, const SubjectSpan& subject);

/// Mean effect per bucket, [L x buckets] in map order.
Matrix aggregate_grid(const Matrix& grid, const std::map<std::string, std::vector<int>>& buckets);

inline constexpr const char* kTraceCsvHeader = "layer,token,module,window,effect_true,effect_edit";

std::string trace_csv(const TraceGrid& grid);
std::string patch_csv(const PatchReport& report);
nlohmann::json trace_json(const TraceGrid& grid);
nlohmann::json patch_json(const PatchReport& report);

}  // namespace adrl
