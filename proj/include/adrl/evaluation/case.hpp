#pragma once

#include "adrl/editor/request.hpp"
#include "adrl/model/vocab.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace adrl {

/// A prompt about another subject (neighborhood) or another relation of the edited
/// subject, with the object it should still produce.
struct TestPrompt {
  std::string subject;  // empty for relation prompts: the case subject is used
  std::string prompt;   // template with one "{}"
  std::string target_true;
};

/// Everything needed to score one edit. Templates hold a single "{}" for the subject.
struct EvalCase {
  std::string case_id;
  std::string subject;
  std::string prompt;
  std::vector<std::string> paraphrase_prompts;
  std::vector<TestPrompt> neighborhood_prompts;
  std::vector<TestPrompt> relation_prompts;
  std::string target_true;
  std::string target_new;
  std::vector<std::string> generation_prompts;
  std::string essence_prompt = kDefaultEssencePrompt;

  void validate(const Vocabulary& vocab) const;
  EditRequest request() const;
};

void to_json(nlohmann::json& j, const TestPrompt& p);
void from_json(const nlohmann::json& j, TestPrompt& p);
void to_json(nlohmann::json& j, const EvalCase& c);
void from_json(const nlohmann::json& j, EvalCase& c);

std::vector<EvalCase> read_cases(const std::string& path);  // JSON Lines
void write_cases(const std::vector<EvalCase>& cases, const std::string& path);

/// The edited sentence (s, r, o_edit), a separator, then the neighbor prompt (s', r).
struct DistractPrompt {
  TokenSequence tokens;  // subject span marks the neighbor subject
  int edit_subject_last = 0;
};

DistractPrompt distract_prompt(const Vocabulary& vocab, const EvalCase& c, const TestPrompt& neighbor);

}  // namespace adrl
