#include "adrl/harness/files.hpp"

#include "adrl/model/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace adrl {

std::string vocab_sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".vocab.txt"; }

void save_model(const ModelParams& params, const Vocabulary& vocab, const std::string& checkpoint_path) {
  require(params.config.vocab_size == vocab.size(), "save_model: vocabulary size does not match the model");
  save_checkpoint(params, checkpoint_path);
  vocab.save(vocab_sidecar_path(checkpoint_path));
}

LoadedModel load_model(const std::string& checkpoint_path) {
  LoadedModel m{load_checkpoint(checkpoint_path), Vocabulary::load(vocab_sidecar_path(checkpoint_path))};
  require(m.params.config.vocab_size == m.vocab.size(),
          checkpoint_path + ": vocabulary sidecar has " + std::to_string(m.vocab.size()) + " symbols, model expects " +
              std::to_string(m.params.config.vocab_size));
  return m;
}

std::vector<EvalCase> load_case_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open case file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) return read_cases(path);
  try {
    if (j.is_array()) return j.get<std::vector<EvalCase>>();
    return {j.get<EvalCase>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace adrl
