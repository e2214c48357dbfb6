#pragma once

#include "adrl/evaluation/case.hpp"
#include "adrl/model/params.hpp"
#include "adrl/model/vocab.hpp"

#include <string>
#include <vector>

namespace adrl {

/// Vocabulary file stored next to a checkpoint.
std::string vocab_sidecar_path(const std::string& checkpoint_path);

void save_model(const ModelParams& params, const Vocabulary& vocab, const std::string& checkpoint_path);

struct LoadedModel {
  ModelParams params;
  Vocabulary vocab;
};

/// Loads the checkpoint and its vocabulary sidecar; the sizes must agree.
LoadedModel load_model(const std::string& checkpoint_path);

/// A single JSON case, a JSON array of cases, or JSON lines.
std::vector<EvalCase> load_case_file(const std::string& path);

}  // namespace adrl
