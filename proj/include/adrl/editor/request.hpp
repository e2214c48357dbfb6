#pragma once

#include "adrl/model/params.hpp"
#include "adrl/model/vocab.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace adrl {

inline constexpr const char* kSeparatorToken = "<sep>";
inline constexpr const char* kDefaultEssencePrompt = "{} <is_a>";

/// One knowledge edit (s, r, o_true -> o_edit). Templates hold a single "{}".
struct EditRequest {
  std::string subject;
  std::string prompt;
  std::string target_new;
  std::string target_true;
  std::string essence_prompt = kDefaultEssencePrompt;

  void validate() const;
};

enum class EditMethod { rome, memit };

struct EditPlan {
  EditMethod method = EditMethod::rome;
  int layer = 2;            // rome: l*
  std::vector<int> layers;  // memit: ascending contiguous range R
  double lr = 0.5;
  int steps = 20;
  double omega = 0.0625;
  double gamma = 0.0;
  int n_prefixes = 5;
  std::uint64_t prefix_seed = 0;
  std::optional<double> clamp_norm;  // bound on ||z - z0|| relative to ||z0||
  std::optional<int> layer_lo;       // SADR layer sum bounds, inclusive
  std::optional<int> layer_hi;
  bool all_heads = false;            // restrain every head instead of H_l(S)
  double cov_weight = 1.0;           // memit: C0 = cov_weight * C
  double stop_loss = 5e-2;

  // Appendix-style defaults: 20 steps, or 80 when the SADR term is active.
  static EditPlan defaults(double gamma);

  void validate(const ModelConfig& config) const;
  int sadr_lo() const { return layer_lo.value_or(0); }
  int sadr_hi(const ModelConfig& config) const { return layer_hi.value_or(config.n_layers - 1); }
  int edit_layer() const { return method == EditMethod::rome ? layer : layers.back(); }
};

/// A prompt rendered from a template, with the subject span marked.
TokenSequence render_prompt(const Vocabulary& vocab, const std::string& tmpl, const std::string& subject);

/// Tokenized form of an EditRequest.
struct PreparedRequest {
  EditRequest source;
  TokenSequence prompt;   // (s, r); subject span set
  TokenSequence essence;  // p'; subject span set
  TokenSequence target_new;
  TokenSequence target_true;
  int separator = -1;
};

PreparedRequest prepare_request(const Vocabulary& vocab, const EditRequest& request);

std::string to_string(EditMethod m);
EditMethod parse_method(const std::string& name);

void to_json(nlohmann::json& j, const EditRequest& r);
void from_json(const nlohmann::json& j, EditRequest& r);
void to_json(nlohmann::json& j, const EditPlan& p);
void from_json(const nlohmann::json& j, EditPlan& p);

}  // namespace adrl
