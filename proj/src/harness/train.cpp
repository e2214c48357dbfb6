#include "adrl/harness/train.hpp"

#include "adrl/model/checkpoint.hpp"
#include "adrl/model/transformer.hpp"
#include "adrl/numerics/autodiff.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

namespace adrl {

void TrainConfig::validate() const {
  require(epochs >= 0, "train: epochs must be >= 0");
  require(batch_size >= 1, "train: batch_size must be positive");
  require(lr > 0.0, "train: lr must be positive");
  require(warmup_steps >= 0, "train: warmup_steps must be >= 0");
  require(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0, "train: min_lr_ratio must lie in [0, 1]");
  require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
  require(grad_clip >= 0.0, "train: grad_clip must be >= 0");
  require(seq_len >= 0, "train: seq_len must be >= 0");
  require(eval_every >= 1, "train: eval_every must be positive");
  require(recall_threshold > 0.0 && recall_threshold <= 1.0, "train: recall_threshold must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"schedule", c.schedule == LrSchedule::cosine ? "cosine" : "constant"},
       {"warmup_steps", c.warmup_steps},
       {"min_lr_ratio", c.min_lr_ratio},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip},
       {"seq_len", c.seq_len},
       {"eval_every", c.eval_every},
       {"seed", c.seed},
       {"recall_threshold", c.recall_threshold}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  const std::string schedule = j.value("schedule", std::string("cosine"));
  require(schedule == "cosine" || schedule == "constant", "train: unknown lr schedule '" + schedule + "'");
  c.schedule = schedule == "cosine" ? LrSchedule::cosine : LrSchedule::constant;
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.min_lr_ratio = j.value("min_lr_ratio", d.min_lr_ratio);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.seed = j.value("seed", d.seed);
  c.recall_threshold = j.value("recall_threshold", d.recall_threshold);
  c.validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},       {"n_heads", c.n_heads},         {"d_model", c.d_model},
       {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
       {"parallel_residual", c.parallel_residual}, {"rng_seed", c.rng_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.parallel_residual = j.value("parallel_residual", d.parallel_residual);
  c.rng_seed = j.value("rng_seed", d.rng_seed);
}

double fact_recall(const ModelParams& params, const std::vector<std::pair<TokenSequence, int>>& probes) {
  require(!probes.empty(), "fact_recall: no probes");
  constexpr std::size_t kBatch = 256;
  long hits = 0;
  for (std::size_t start = 0; start < probes.size(); start += kBatch) {
    const std::size_t end = std::min(start + kBatch, probes.size());
    std::vector<TokenSequence> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(probes[i].first);
    const Matrix logits = last_logits_batch(params, seqs);
    for (std::size_t i = start; i < end; ++i) {
      Eigen::Index best = 0;
      logits.row(static_cast<Eigen::Index>(i - start)).maxCoeff(&best);
      hits += best == probes[i].second ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(probes.size());
}

std::vector<TokenSequence> pack_sentences(const std::vector<TokenSequence>& sentences, int separator, int seq_len) {
  std::vector<TokenSequence> out;
  TokenSequence cur;
  for (const TokenSequence& s : sentences) {
    require(!s.empty() && s.size() <= seq_len, "pack_sentences: sentence longer than the sequence length");
    const int need = cur.empty() ? s.size() : cur.size() + 1 + s.size();
    if (need > seq_len) {
      out.push_back(std::move(cur));
      cur = TokenSequence();
    }
    if (!cur.empty()) cur.ids.push_back(separator);
    cur.ids.insert(cur.ids.end(), s.ids.begin(), s.ids.end());
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

std::vector<ad::Var> param_list(const ParamVars& pv) {
  std::vector<ad::Var> v = {pv.tok_embed, pv.pos_embed};
  for (const ParamVars::Layer& l : pv.layers) {
    v.insert(v.end(), {l.ln1_gain, l.ln1_bias, l.ln2_gain, l.ln2_bias, l.w_q, l.w_k, l.w_v, l.w_o, l.w_in, l.b_in,
                       l.w_out});
  }
  v.insert(v.end(), {pv.lnf_gain, pv.lnf_bias, pv.unembed});
  return v;
}

double learning_rate(const TrainConfig& c, long step, long total_steps) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.lr * static_cast<double>(step + 1) / c.warmup_steps;
  }
  if (c.schedule == LrSchedule::constant || total_steps <= c.warmup_steps) {
    return c.lr;
  }
  const double progress =
      std::min(1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(total_steps - c.warmup_steps));
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return c.lr * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * cosine);
}

}  // namespace

TrainResult train_model(const std::vector<TokenSequence>& sentences,
                        const std::vector<std::pair<TokenSequence, int>>& probes, int separator,
                        const ModelConfig& model, const TrainConfig& train) {
  train.validate();
  model.validate();
  require(!sentences.empty(), "train_model: empty corpus");
  const int seq_len = train.seq_len > 0 ? train.seq_len : model.max_seq_len;
  require(seq_len <= model.max_seq_len, "train_model: seq_len exceeds the model's max_seq_len");

  TrainResult result;
  result.params = ModelParams::initialize(model);
  ModelParams& params = result.params;
  std::vector<Matrix*> tensors;
  params.for_each_tensor([&tensors](const std::string&, Matrix& m) { tensors.push_back(&m); });
  std::vector<Matrix> m1, m2;
  for (const Matrix* t : tensors) {
    m1.push_back(Matrix::Zero(t->rows(), t->cols()));
    m2.push_back(Matrix::Zero(t->rows(), t->cols()));
  }

  std::mt19937_64 rng(train.seed);
  std::vector<TokenSequence> order = sentences;
  const long steps_per_epoch =
      (static_cast<long>(pack_sentences(order, separator, seq_len).size()) + train.batch_size - 1) / train.batch_size;
  const long total_steps = steps_per_epoch * train.epochs;
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.98;
  constexpr double kEps = 1e-9;

  result.recall = fact_recall(params, probes);
  result.curve.push_back({0, 0, 0.0, result.recall});
  long step = 0;
  for (int epoch = 1; epoch <= train.epochs && result.recall < train.recall_threshold; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    const std::vector<TokenSequence> packed = pack_sentences(order, separator, seq_len);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < packed.size(); start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t end = std::min(start + static_cast<std::size_t>(train.batch_size), packed.size());
      std::vector<int> tokens;
      std::vector<int> targets;
      std::vector<int> lengths;
      for (std::size_t b = start; b < end; ++b) {
        const std::vector<int>& ids = packed[b].ids;
        tokens.insert(tokens.end(), ids.begin(), ids.end());
        targets.insert(targets.end(), ids.begin() + 1, ids.end());
        targets.push_back(-1);
        lengths.push_back(static_cast<int>(ids.size()));
      }
      ad::Tape tape;
      const ParamVars pv = bind_params(tape, params, true);
      const GraphOutputs g = build_graph(tape, pv, model, tokens, ad::Segments::from_lengths(lengths));
      const ad::Var loss = ad::cross_entropy(g.logits, targets);
      tape.backward(loss);
      epoch_loss += loss.scalar() * static_cast<double>(end - start);

      const std::vector<ad::Var> vars = param_list(pv);
      std::vector<Matrix> grads;
      double norm2 = 0.0;
      for (const ad::Var& v : vars) {
        grads.push_back(tape.grad(v));
        norm2 += grads.back().squaredNorm();
      }
      const double clip = train.grad_clip > 0.0 && std::sqrt(norm2) > train.grad_clip
                              ? train.grad_clip / std::sqrt(norm2)
                              : 1.0;
      const double lr = learning_rate(train, step, total_steps);
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t k = 0; k < tensors.size(); ++k) {
        const Matrix g = grads[k] * clip;
        m1[k] = kBeta1 * m1[k] + (1.0 - kBeta1) * g;
        m2[k] = kBeta2 * m2[k] + (1.0 - kBeta2) * g.cwiseProduct(g);
        Matrix& w = *tensors[k];
        if (train.weight_decay > 0.0 && w.rows() > 1) {
          w *= 1.0 - lr * train.weight_decay;
        }
        w.array() -= lr * (m1[k].array() / c1) / ((m2[k].array() / c2).sqrt() + kEps);
      }
    }
    result.epochs_run = epoch;
    const bool last = epoch == train.epochs;
    if (epoch % train.eval_every == 0 || last) {
      result.recall = fact_recall(params, probes);
      result.curve.push_back({epoch, step, epoch_loss / static_cast<double>(packed.size()), result.recall});
    }
  }
  result.warning = result.recall < train.recall_threshold;
  return result;
}

TrainResult train_model(const FactWorld& world, ModelConfig model, const TrainConfig& train) {
  const Vocabulary vocab = world.vocabulary();
  model.vocab_size = vocab.size();
  std::vector<TokenSequence> sentences;
  for (const std::string& s : world.sentences()) sentences.push_back(vocab.tokenize(s));
  return train_model(sentences, world.recall_probes(vocab), vocab.id(kSeparatorToken), model, train);
}

nlohmann::json train_report_json(const TrainResult& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const RecallPoint& p : r.curve) {
    curve.push_back({{"epoch", p.epoch}, {"step", p.step}, {"loss", p.loss}, {"recall", p.recall}});
  }
  return {{"recall", r.recall}, {"epochs_run", r.epochs_run}, {"warning", r.warning}, {"curve", curve}};
}

std::string train_report_path(const std::string& checkpoint_path) { return checkpoint_path + ".train.json"; }

void save_trained(const TrainResult& r, const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  save_checkpoint(r.params, path);
  std::ofstream f(train_report_path(path));
  require(f.good(), "cannot write " + train_report_path(path));
  f << train_report_json(r).dump(1) << '\n';
}

}  // namespace adrl
