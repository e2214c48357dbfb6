#include "adrl/tracing/tracing.hpp"

#include "adrl/model/generation.hpp"

#include <iomanip>
#include <sstream>

namespace adrl {

WindowRange layer_window(int center, int k, int n_layers) {
  require(n_layers >= 1, "layer_window: no layers");
  require(center >= 0 && center < n_layers, "layer_window: centre layer out of range");
  require(k >= 0, "layer_window: window size must be >= 0");
  if (k == 0) {
    return {};
  }
  const int lo = center - k / 2;
  return {std::max(lo, 0), std::min(lo + k - 1, n_layers - 1)};
}

TargetProbs target_probs(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& o_true,
                         const TokenSequence& o_edit, std::span<const HookSpec> hooks) {
  return target_probs(params, prompt, o_true, o_edit, [&](int) { return std::vector<HookSpec>(hooks.begin(), hooks.end()); });
}

TargetProbs target_probs(const ModelParams& params, const TokenSequence& prompt, const TokenSequence& o_true,
                         const TokenSequence& o_edit, const HookFactory& make_hooks) {
  require(!o_true.empty() && !o_edit.empty(), "target_probs: empty target");
  if (o_true.size() == 1 && o_edit.size() == 1) {
    const Distribution d = next_token_distribution(params, prompt, make_hooks(prompt.size()));
    return {d[o_true.ids[0]], d[o_edit.ids[0]]};
  }
  return {sequence_prob(params, prompt, o_true, make_hooks(prompt.size() + o_true.size() - 1)),
          sequence_prob(params, prompt, o_edit, make_hooks(prompt.size() + o_edit.size() - 1))};
}

namespace {

void require_same_config(const ModelParams& a, const ModelParams& b) {
  require(a.config == b.config, "vanilla and edited models have different configurations");
}

}  // namespace

TraceGrid contaminating_substitution(const ModelParams& vanilla, const ModelParams& edited,
                                     const TokenSequence& prompt, Module module, int window,
                                     const TokenSequence& o_true, const TokenSequence& o_edit) {
  require_same_config(vanilla, edited);
  require(module == Module::attn_out || module == Module::mlp_out || module == Module::block_out,
          "contaminating substitution traces attn, mlp or block outputs");
  validate_sequence(vanilla.config, prompt);
  const int n_layers = vanilla.config.n_layers;
  const int len = prompt.size();
  const ActivationCache edited_cache = forward(edited, prompt).cache;

  TraceGrid g;
  g.module = module;
  g.window = window;
  g.prompt = prompt.ids;
  g.subject = prompt.subject;
  g.target_true = o_true.ids;
  g.target_edit = o_edit.ids;
  g.base = target_probs(vanilla, prompt, o_true, o_edit);
  g.effect_true.resize(n_layers, len);
  g.effect_edit.resize(n_layers, len);
  for (int c = 0; c < n_layers; ++c) {
    const WindowRange w = layer_window(c, window, n_layers);
    g.windows.push_back(w);
    for (int t = 0; t < len; ++t) {
      std::vector<HookSpec> hooks;
      for (int l = w.lo; l <= w.hi; ++l) {
        hooks.push_back(HookSpec::substitute(module, l, t, edited_cache.output(module, l, t)));
      }
      const TargetProbs p = target_probs(vanilla, prompt, o_true, o_edit, hooks);
      g.effect_true(c, t) = p.p_true - g.base.p_true;
      g.effect_edit(c, t) = p.p_edit - g.base.p_edit;
    }
  }
  return g;
}

namespace {

void require_cache_matches(const ActivationCache& cache, const ModelParams& params, const TokenSequence& prompt) {
  require(cache.length == prompt.size(), "vanilla cache length " + std::to_string(cache.length) +
                                             " does not match prompt length " + std::to_string(prompt.size()));
  require(cache.n_layers == params.config.n_layers && cache.n_heads == params.config.n_heads,
          "vanilla cache does not match the model configuration");
}

template <typename MakeHooks>
PatchReport sweep_windows(const ModelParams& edited, const TokenSequence& prompt, Module module, int window,
                          int token, const TokenSequence& o_true, const TokenSequence& o_edit, MakeHooks make_hooks) {
  const int n_layers = edited.config.n_layers;
  PatchReport r;
  r.module = module;
  r.window = window;
  r.rows.push_back({0, token, {}, target_probs(edited, prompt, o_true, o_edit)});
  for (int c = 0; c < n_layers; ++c) {
    const WindowRange w = layer_window(c, window, n_layers);
    const HookFactory factory = [&](int length) {
      std::vector<HookSpec> hooks;
      for (int l = w.lo; l <= w.hi; ++l) {
        make_hooks(l, length, hooks);
      }
      return hooks;
    };
    r.rows.push_back({c + 1, token, w, target_probs(edited, prompt, o_true, o_edit, factory)});
  }
  return r;
}

}  // namespace

PatchReport patch_attention_matrix(const ModelParams& edited, const ActivationCache& vanilla_cache,
                                   const TokenSequence& prompt, int window, const TokenSequence& o_true,
                                   const TokenSequence& o_edit) {
  validate_sequence(edited.config, prompt);
  require_cache_matches(vanilla_cache, edited, prompt);
  return sweep_windows(edited, prompt, Module::attn_weights, window, -1, o_true, o_edit,
                       [&](int l, int length, std::vector<HookSpec>& hooks) {
                         const int heads = edited.config.n_heads;
                         for (int t = 0; t < prompt.size(); ++t) {
                           HookSpec h;
                           h.module = Module::attn_weights;
                           h.layer = l;
                           h.token = t;
                           h.payload = Matrix::Zero(heads, length);
                           for (int hh = 0; hh < heads; ++hh) {
                             h.payload.row(hh).head(prompt.size()) = vanilla_cache.attention_row(l, hh, t);
                           }
                           hooks.push_back(std::move(h));
                         }
                       });
}

PatchReport patch_attention_value(const ModelParams& edited, const ActivationCache& vanilla_cache,
                                  const TokenSequence& prompt, int token, int window, const TokenSequence& o_true,
                                  const TokenSequence& o_edit, std::optional<int> head) {
  validate_sequence(edited.config, prompt);
  require_cache_matches(vanilla_cache, edited, prompt);
  const int last = prompt.size() - 1;
  require(token >= 0 && token < last, "patch_attention_value: token " + std::to_string(token) +
                                          " must precede the last prompt position " + std::to_string(last));
  require(!head || (*head >= 0 && *head < edited.config.n_heads), "patch_attention_value: head out of range");
  return sweep_windows(edited, prompt, Module::attn_logits, window, token, o_true, o_edit,
                       [&](int l, int, std::vector<HookSpec>& hooks) {
                         HookSpec h;
                         h.module = Module::attn_logits;
                         h.layer = l;
                         h.token = last;
                         h.key = token;
                         h.head = head;
                         const int n_heads = head ? 1 : edited.config.n_heads;
                         h.payload.resize(n_heads, 1);
                         for (int i = 0; i < n_heads; ++i) {
                           const int hh = head ? *head : i;
                           h.payload(i, 0) = vanilla_cache.logits_row(l, hh, last)(token);
                         }
                         hooks.push_back(std::move(h));
                       });
}

std::map<std::string, std::vector<int>> token_buckets(int length, const SubjectSpan& subject) {
  require(subject.start >= 0 && subject.start <= subject.end && subject.end < length,
          "token_buckets: subject span outside the prompt");
  std::map<std::string, std::vector<int>> b;
  b["1_first_subject_token"] = {subject.start};
  for (int t = subject.start + 1; t < subject.end; ++t) b["2_middle_subject_tokens"].push_back(t);
  if (subject.end > subject.start) b["3_last_subject_token"] = {subject.end};
  if (subject.end + 1 < length - 1) b["4_first_subsequent_token"] = {subject.end + 1};
  for (int t = subject.end + 2; t < length - 1; ++t) b["5_further_tokens"].push_back(t);
  for (int t = 0; t < subject.start; ++t) b["0_before_subject"].push_back(t);
  if (subject.end < length - 1) b["6_last_token"] = {length - 1};
  return b;
}

Matrix aggregate_grid(const Matrix& grid, const std::map<std::string, std::vector<int>>& buckets) {
  Matrix out(grid.rows(), static_cast<Eigen::Index>(buckets.size()));
  Eigen::Index col = 0;
  for (const auto& [name, tokens] : buckets) {
    require(!tokens.empty(), "aggregate_grid: empty bucket " + name);
    out.col(col).setZero();
    for (int t : tokens) {
      require(t >= 0 && t < grid.cols(), "aggregate_grid: bucket token outside the grid");
      out.col(col) += grid.col(t);
    }
    out.col(col) /= static_cast<double>(tokens.size());
    ++col;
  }
  return out;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os << std::setprecision(17);
  os << kTraceCsvHeader << '\n';
  return os;
}

nlohmann::json window_json(const WindowRange& w) { return {{"lo", w.lo}, {"hi", w.hi}, {"size", w.size()}}; }

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    j.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return j;
}

}  // namespace

std::string trace_csv(const TraceGrid& grid) {
  std::ostringstream os = csv_stream();
  for (Eigen::Index l = 0; l < grid.effect_true.rows(); ++l) {
    for (Eigen::Index t = 0; t < grid.effect_true.cols(); ++t) {
      os << l << ',' << t << ',' << module_name(grid.module) << ',' << grid.windows[static_cast<std::size_t>(l)].size()
         << ',' << grid.effect_true(l, t) << ',' << grid.effect_edit(l, t) << '\n';
    }
  }
  return os.str();
}

std::string patch_csv(const PatchReport& report) {
  std::ostringstream os = csv_stream();
  for (const PatchRow& r : report.rows) {
    os << r.layer << ',' << r.token << ',' << module_name(report.module) << ',' << r.window.size() << ','
       << r.probs.p_true << ',' << r.probs.p_edit << '\n';
  }
  return os.str();
}

nlohmann::json trace_json(const TraceGrid& grid) {
  nlohmann::json j;
  j["module"] = std::string(module_name(grid.module));
  j["window"] = grid.window;
  j["windows"] = nlohmann::json::array();
  for (const WindowRange& w : grid.windows) j["windows"].push_back(window_json(w));
  j["base"] = {{"p_true", grid.base.p_true}, {"p_edit", grid.base.p_edit}};
  j["prompt"] = grid.prompt;
  j["subject"] = grid.subject ? nlohmann::json{{"start", grid.subject->start}, {"end", grid.subject->end}}
                              : nlohmann::json(nullptr);
  j["target_true"] = grid.target_true;
  j["target_edit"] = grid.target_edit;
  j["effect_true"] = matrix_json(grid.effect_true);
  j["effect_edit"] = matrix_json(grid.effect_edit);
  return j;
}

nlohmann::json patch_json(const PatchReport& report) {
  nlohmann::json j;
  j["module"] = std::string(module_name(report.module));
  j["window"] = report.window;
  j["rows"] = nlohmann::json::array();
  for (const PatchRow& r : report.rows) {
    j["rows"].push_back({{"layer", r.layer},
                         {"token", r.token},
                         {"window", window_json(r.window)},
                         {"p_true", r.probs.p_true},
                         {"p_edit", r.probs.p_edit}});
  }
  return j;
}

}  // namespace adrl
