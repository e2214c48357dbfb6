#include "adrl/evaluation/case.hpp"

#include <fstream>

namespace adrl {

namespace {

void require_tokenizes(const Vocabulary& vocab, const std::string& text, const std::string& what) {
  try {
    require(!vocab.tokenize(text).empty(), what + " is empty");
  } catch (const Error& e) {
    throw Error(what + ": " + e.what());
  }
}

void require_renders(const Vocabulary& vocab, const std::string& tmpl, const std::string& subject,
                     const std::string& what) {
  try {
    render_prompt(vocab, tmpl, subject);
  } catch (const Error& e) {
    throw Error(what + ": " + e.what());
  }
}

}  // namespace

void EvalCase::validate(const Vocabulary& vocab) const {
  const std::string where = "case '" + case_id + "'";
  require(!case_id.empty(), "eval case without case_id");
  request().validate();
  require_renders(vocab, prompt, subject, where + " prompt");
  require_renders(vocab, essence_prompt, subject, where + " essence prompt");
  require_tokenizes(vocab, target_true, where + " target_true");
  require_tokenizes(vocab, target_new, where + " target_new");
  for (const std::string& p : paraphrase_prompts) {
    require_renders(vocab, p, subject, where + " paraphrase prompt");
  }
  for (const TestPrompt& n : neighborhood_prompts) {
    require(!n.subject.empty(), where + ": neighborhood prompt without a subject");
    require(split_whitespace(n.subject) != split_whitespace(subject),
            where + ": neighborhood subject equals the edited subject");
    require_renders(vocab, n.prompt, n.subject, where + " neighborhood prompt");
    require_tokenizes(vocab, n.target_true, where + " neighborhood target");
  }
  for (const TestPrompt& r : relation_prompts) {
    require(r.prompt != prompt, where + ": relation prompt repeats the edited relation");
    require_renders(vocab, r.prompt, subject, where + " relation prompt");
    require_tokenizes(vocab, r.target_true, where + " relation target");
  }
  for (const std::string& g : generation_prompts) {
    require_renders(vocab, g, subject, where + " generation prompt");
  }
  vocab.id(kSeparatorToken);
}

EditRequest EvalCase::request() const {
  EditRequest r;
  r.subject = subject;
  r.prompt = prompt;
  r.target_new = target_new;
  r.target_true = target_true;
  r.essence_prompt = essence_prompt;
  return r;
}

void to_json(nlohmann::json& j, const TestPrompt& p) {
  j = {{"prompt", p.prompt}, {"target_true", p.target_true}};
  if (!p.subject.empty()) {
    j["subject"] = p.subject;
  }
}

void from_json(const nlohmann::json& j, TestPrompt& p) {
  p.subject = j.value("subject", std::string());
  p.prompt = j.at("prompt").get<std::string>();
  p.target_true = j.at("target_true").get<std::string>();
}

void to_json(nlohmann::json& j, const EvalCase& c) {
  j = {{"case_id", c.case_id},
       {"subject", c.subject},
       {"prompt", c.prompt},
       {"paraphrase_prompts", c.paraphrase_prompts},
       {"neighborhood_prompts", c.neighborhood_prompts},
       {"relation_prompts", c.relation_prompts},
       {"target_true", c.target_true},
       {"target_new", c.target_new},
       {"generation_prompts", c.generation_prompts},
       {"essence_prompt", c.essence_prompt}};
}

void from_json(const nlohmann::json& j, EvalCase& c) {
  c.case_id = j.at("case_id").get<std::string>();
  c.subject = j.at("subject").get<std::string>();
  c.prompt = j.at("prompt").get<std::string>();
  c.paraphrase_prompts = j.value("paraphrase_prompts", std::vector<std::string>());
  c.neighborhood_prompts = j.value("neighborhood_prompts", std::vector<TestPrompt>());
  c.relation_prompts = j.value("relation_prompts", std::vector<TestPrompt>());
  c.target_true = j.at("target_true").get<std::string>();
  c.target_new = j.at("target_new").get<std::string>();
  c.generation_prompts = j.value("generation_prompts", std::vector<std::string>());
  c.essence_prompt = j.value("essence_prompt", std::string(kDefaultEssencePrompt));
}

std::vector<EvalCase> read_cases(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open case file: " + path);
  std::vector<EvalCase> cases;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      cases.push_back(nlohmann::json::parse(line).get<EvalCase>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

void write_cases(const std::vector<EvalCase>& cases, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "cannot open case file for writing: " + path);
  for (const EvalCase& c : cases) {
    f << nlohmann::json(c).dump() << '\n';
  }
  require(f.good(), "failed writing case file: " + path);
}

DistractPrompt distract_prompt(const Vocabulary& vocab, const EvalCase& c, const TestPrompt& neighbor) {
  const TokenSequence edit = render_prompt(vocab, c.prompt, c.subject);
  TokenSequence sentence = concat(edit, vocab.tokenize(c.target_new));
  sentence.ids.push_back(vocab.id(kSeparatorToken));
  DistractPrompt d;
  d.edit_subject_last = edit.subject->end;
  d.tokens = concat(sentence, render_prompt(vocab, neighbor.prompt, neighbor.subject));
  return d;
}

}  // namespace adrl
