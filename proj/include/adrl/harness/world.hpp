#pragma once

#include "adrl/evaluation/case.hpp"
#include "adrl/model/vocab.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace adrl {

struct WorldSizes {
  int subjects = 200;
  int relations = 6;
  int objects = 12;  // per relation
  int templates = 2;  // paraphrase templates per relation
  int kinds = 8;      // essence attribute values
  int subject_tokens = 2;  // 1: "s<i>"; 2: a distinct pair of name parts
  bool profiles = true;    // corpus also lists each subject's objects right after it
};

struct Relation {
  std::string name;
  std::vector<std::string> templates;  // each with one "{}"
  std::vector<std::string> objects;
};

struct Fact {
  int subject = 0;
  int relation = 0;
  int object = 0;  // index into the relation's object pool
  bool operator==(const Fact&) const = default;
};

/// A synthetic knowledge graph: every subject holds one object under every relation and one
/// essence kind.
struct FactWorld {
  std::uint64_t seed = 0;
  WorldSizes sizes;
  std::vector<std::string> subjects;
  std::vector<Relation> relations;
  std::vector<std::string> kinds;
  std::vector<int> essence;  // kind index per subject
  std::vector<Fact> facts;   // subject-major, relation-minor

  const Fact& fact(int subject, int relation) const;
  std::string object_name(const Fact& f) const;
  /// Subjects sharing object `object` under `relation`.
  std::vector<int> group(int relation, int object) const;

  Vocabulary vocabulary() const;
  /// Every fact rendered with every template, then every essence sentence, then (optionally)
  /// one profile line per subject: the subject followed by its objects in relation order.
  std::vector<std::string> sentences() const;
  /// (prompt tokens, object token) for every fact and template.
  std::vector<std::pair<TokenSequence, int>> recall_probes(const Vocabulary& vocab) const;

  void validate() const;
};

inline constexpr const char* kEssenceRelation = "<is_a>";

/// Rejects sizes that cannot satisfy the world invariants.
void validate_sizes(const WorldSizes& sizes);

FactWorld generate_world(std::uint64_t seed, const WorldSizes& sizes = {});

/// Counterfactual cases: one fact each, o_edit drawn from the same relation's pool.
std::vector<EvalCase> generate_cases(const FactWorld& world, int count, std::uint64_t seed, int max_neighbors = 3,
                                     int max_relations = 3);

void to_json(nlohmann::json& j, const FactWorld& w);
void from_json(const nlohmann::json& j, FactWorld& w);

/// world.json, vocab.txt, corpus.txt, cases.jsonl under `dir`.
struct WorldFiles {
  std::string world, vocab, corpus, cases;
  static WorldFiles in(const std::string& dir);
};

void write_world(const FactWorld& world, const std::vector<EvalCase>& cases, const std::string& dir);
FactWorld read_world(const std::string& dir);

}  // namespace adrl
