#include "adrl/editor/request.hpp"

namespace adrl {

namespace {

std::size_t count_placeholders(const std::string& s) {
  std::size_t n = 0;
  for (std::size_t at = s.find("{}"); at != std::string::npos; at = s.find("{}", at + 2)) {
    ++n;
  }
  return n;
}

}  // namespace

void EditRequest::validate() const {
  require(!subject.empty(), "edit request: empty subject");
  require(count_placeholders(prompt) == 1, "edit request: prompt template must contain exactly one '{}': " + prompt);
  require(count_placeholders(essence_prompt) == 1,
          "edit request: essence prompt must contain exactly one '{}': " + essence_prompt);
  require(!target_new.empty() && !target_true.empty(), "edit request: empty target");
  require(split_whitespace(target_new) != split_whitespace(target_true),
          "edit request: target_new equals target_true ('" + target_new + "')");
}

EditPlan EditPlan::defaults(double gamma) {
  EditPlan p;
  p.gamma = gamma;
  p.steps = gamma > 0.0 ? 80 : 20;
  return p;
}

void EditPlan::validate(const ModelConfig& config) const {
  const int depth = config.n_layers;
  if (method == EditMethod::rome) {
    require(layer >= 0 && layer < depth, "edit plan: layer " + std::to_string(layer) + " outside model depth");
  } else {
    require(!layers.empty(), "edit plan: memit needs a layer range");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      require(layers[i] >= 0 && layers[i] < depth, "edit plan: layer outside model depth");
      require(i == 0 || layers[i] == layers[i - 1] + 1, "edit plan: memit layers must be ascending and contiguous");
    }
  }
  require(lr > 0.0, "edit plan: lr must be positive");
  require(steps >= 1, "edit plan: steps must be >= 1");
  require(omega >= 0.0, "edit plan: omega must be >= 0");
  require(gamma >= 0.0, "edit plan: gamma must be >= 0");
  require(n_prefixes >= 1, "edit plan: n_prefixes must be >= 1");
  require(!clamp_norm || *clamp_norm > 0.0, "edit plan: clamp_norm must be positive");
  require(sadr_lo() >= 0 && sadr_hi(config) < depth && sadr_lo() <= sadr_hi(config),
          "edit plan: SADR layer bounds outside model depth");
  require(cov_weight > 0.0, "edit plan: cov_weight must be positive");
}

TokenSequence render_prompt(const Vocabulary& vocab, const std::string& tmpl, const std::string& subject) {
  const std::size_t at = tmpl.find("{}");
  require(at != std::string::npos && count_placeholders(tmpl) == 1,
          "template must contain exactly one '{}': " + tmpl);
  const TokenSequence left = vocab.tokenize(std::string_view(tmpl).substr(0, at));
  TokenSequence subj = vocab.tokenize(subject);
  require(!subj.empty(), "empty subject");
  const TokenSequence right = vocab.tokenize(std::string_view(tmpl).substr(at + 2));
  subj.subject = SubjectSpan{0, subj.size() - 1};
  return concat(concat(left, subj), right);
}

PreparedRequest prepare_request(const Vocabulary& vocab, const EditRequest& request) {
  request.validate();
  PreparedRequest p;
  p.source = request;
  p.prompt = render_prompt(vocab, request.prompt, request.subject);
  p.essence = render_prompt(vocab, request.essence_prompt, request.subject);
  p.target_new = vocab.tokenize(request.target_new);
  p.target_true = vocab.tokenize(request.target_true);
  p.separator = vocab.id(kSeparatorToken);
  return p;
}

std::string to_string(EditMethod m) { return m == EditMethod::rome ? "rome" : "memit"; }

EditMethod parse_method(const std::string& name) {
  if (name == "rome") return EditMethod::rome;
  if (name == "memit") return EditMethod::memit;
  throw Error("unknown edit method '" + name + "' (expected rome or memit)");
}

void to_json(nlohmann::json& j, const EditRequest& r) {
  j = {{"subject", r.subject},
       {"prompt", r.prompt},
       {"target_new", r.target_new},
       {"target_true", r.target_true},
       {"essence_prompt", r.essence_prompt}};
}

void from_json(const nlohmann::json& j, EditRequest& r) {
  r.subject = j.at("subject").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.target_new = j.at("target_new").get<std::string>();
  r.target_true = j.at("target_true").get<std::string>();
  r.essence_prompt = j.value("essence_prompt", std::string(kDefaultEssencePrompt));
}

void to_json(nlohmann::json& j, const EditPlan& p) {
  j = {{"method", to_string(p.method)},
       {"layer", p.layer},
       {"layers", p.layers},
       {"lr", p.lr},
       {"steps", p.steps},
       {"omega", p.omega},
       {"gamma", p.gamma},
       {"n_prefixes", p.n_prefixes},
       {"prefix_seed", p.prefix_seed},
       {"clamp_norm", p.clamp_norm ? nlohmann::json(*p.clamp_norm) : nlohmann::json(nullptr)},
       {"layer_lo", p.layer_lo ? nlohmann::json(*p.layer_lo) : nlohmann::json(nullptr)},
       {"layer_hi", p.layer_hi ? nlohmann::json(*p.layer_hi) : nlohmann::json(nullptr)},
       {"all_heads", p.all_heads},
       {"cov_weight", p.cov_weight},
       {"stop_loss", p.stop_loss}};
}

void from_json(const nlohmann::json& j, EditPlan& p) {
  const double gamma = j.value("gamma", 0.0);
  p = EditPlan::defaults(gamma);
  if (j.contains("method")) p.method = parse_method(j.at("method").get<std::string>());
  p.layer = j.value("layer", p.layer);
  p.layers = j.value("layers", p.layers);
  p.lr = j.value("lr", p.lr);
  p.steps = j.value("steps", p.steps);
  p.omega = j.value("omega", p.omega);
  p.n_prefixes = j.value("n_prefixes", p.n_prefixes);
  p.prefix_seed = j.value("prefix_seed", p.prefix_seed);
  auto opt_double = [&j](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  auto opt_int = [&j](const char* key) -> std::optional<int> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<int>();
  };
  p.clamp_norm = opt_double("clamp_norm");
  p.layer_lo = opt_int("layer_lo");
  p.layer_hi = opt_int("layer_hi");
  p.all_heads = j.value("all_heads", p.all_heads);
  p.cov_weight = j.value("cov_weight", p.cov_weight);
  p.stop_loss = j.value("stop_loss", p.stop_loss);
}

}  // namespace adrl
