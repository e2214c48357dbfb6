#pragma once

#include "adrl/harness/world.hpp"
#include "adrl/model/params.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace adrl {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int epochs = 120;
  int batch_size = 16;  // packed sequences per step
  double lr = 3e-3;
  LrSchedule schedule = LrSchedule::cosine;
  int warmup_steps = 50;
  double min_lr_ratio = 0.1;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  int seq_len = 0;         // packed sequence length; 0 uses the model's max_seq_len
  int eval_every = 5;      // epochs between recall checks
  std::uint64_t seed = 0;
  double recall_threshold = 0.95;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct RecallPoint {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;  // mean training loss over the epoch; 0 before training
  double recall = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<RecallPoint> curve;
  double recall = 0.0;
  int epochs_run = 0;
  bool warning = false;  // recall below threshold when the epoch budget ran out
};

/// Fraction of probes whose greedy next token is the expected object.
double fact_recall(const ModelParams& params, const std::vector<std::pair<TokenSequence, int>>& probes);

/// Sentences joined by the separator into sequences of at most `seq_len` tokens, in order.
std::vector<TokenSequence> pack_sentences(const std::vector<TokenSequence>& sentences, int separator, int seq_len);

/// Next-token cross-entropy training on shuffled packed sentences with Adam; stops once recall
/// on `probes` reaches the threshold.
TrainResult train_model(const std::vector<TokenSequence>& sentences,
                        const std::vector<std::pair<TokenSequence, int>>& probes, int separator,
                        const ModelConfig& model, const TrainConfig& train);

TrainResult train_model(const FactWorld& world, ModelConfig model, const TrainConfig& train);

nlohmann::json train_report_json(const TrainResult& r);

/// `path` holds the checkpoint, `path + ".train.json"` the recall curve and warning flag.
void save_trained(const TrainResult& r, const std::string& path);
std::string train_report_path(const std::string& checkpoint_path);

}  // namespace adrl
