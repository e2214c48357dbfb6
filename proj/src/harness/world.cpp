#include "adrl/harness/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace adrl {

namespace {

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  // Fisher-Yates with explicit draws so the order does not depend on the standard library.
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::size_t draw(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::string relation_template(int r, int t) {
  const std::string rel = "r" + std::to_string(r);
  const std::string alt = rel + "_v" + std::to_string(t);
  switch (t) {
    case 0: return "{} " + rel;
    case 1: return "the {} " + alt;
    case 2: return "{} the " + alt;
    default: return "the {} the " + alt;
  }
}

}  // namespace

void validate_sizes(const WorldSizes& s) {
  require(s.subjects >= 20, "world needs at least 20 subjects");
  require(s.relations >= 4, "world needs at least 4 relations");
  require(s.objects >= 5, "world needs at least 5 objects per relation");
  require(s.templates >= 2, "world needs at least 2 templates per relation");
  require(s.kinds >= 2, "world needs at least 2 essence kinds");
  require(s.subjects >= 2 * s.objects, "every (relation, object) group needs 2 subjects: subjects must be >= 2 * objects");
  require(s.templates <= 4, "at most 4 templates per relation");
  require(s.subject_tokens == 1 || s.subject_tokens == 2, "subjects have 1 or 2 tokens");
}

const Fact& FactWorld::fact(int subject, int relation) const {
  require(subject >= 0 && subject < static_cast<int>(subjects.size()), "fact: subject out of range");
  require(relation >= 0 && relation < static_cast<int>(relations.size()), "fact: relation out of range");
  return facts[static_cast<std::size_t>(subject) * relations.size() + static_cast<std::size_t>(relation)];
}

std::string FactWorld::object_name(const Fact& f) const {
  return relations[static_cast<std::size_t>(f.relation)].objects[static_cast<std::size_t>(f.object)];
}

std::vector<int> FactWorld::group(int relation, int object) const {
  std::vector<int> out;
  for (int s = 0; s < static_cast<int>(subjects.size()); ++s) {
    if (fact(s, relation).object == object) {
      out.push_back(s);
    }
  }
  return out;
}

Vocabulary FactWorld::vocabulary() const {
  std::vector<std::string> symbols = {"<sep>", kEssenceRelation, "the"};
  std::set<std::string> seen(symbols.begin(), symbols.end());
  auto add = [&](const std::string& s) {
    if (seen.insert(s).second) {
      symbols.push_back(s);
    }
  };
  for (const Relation& r : relations) {
    for (const std::string& t : r.templates) {
      for (const std::string& w : split_whitespace(t)) {
        if (w != "{}") add(w);
      }
    }
  }
  for (const std::string& k : kinds) add(k);
  for (const Relation& r : relations) {
    for (const std::string& o : r.objects) add(o);
  }
  for (const std::string& s : subjects) {
    for (const std::string& part : split_whitespace(s)) add(part);
  }
  return Vocabulary(std::move(symbols));
}

namespace {

std::string fill(const std::string& tmpl, const std::string& subject) {
  const std::size_t at = tmpl.find("{}");
  return tmpl.substr(0, at) + subject + tmpl.substr(at + 2);
}

}  // namespace

std::vector<std::string> FactWorld::sentences() const {
  std::vector<std::string> out;
  for (const Fact& f : facts) {
    for (const std::string& t : relations[static_cast<std::size_t>(f.relation)].templates) {
      out.push_back(fill(t, subjects[static_cast<std::size_t>(f.subject)]) + " " + object_name(f));
    }
  }
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    out.push_back(subjects[s] + " " + kEssenceRelation + " " + kinds[static_cast<std::size_t>(essence[s])]);
  }
  if (sizes.profiles) {
    for (std::size_t s = 0; s < subjects.size(); ++s) {
      std::string line = subjects[s];
      for (std::size_t r = 0; r < relations.size(); ++r) {
        line += " " + object_name(fact(static_cast<int>(s), static_cast<int>(r)));
      }
      out.push_back(line);
    }
  }
  return out;
}

std::vector<std::pair<TokenSequence, int>> FactWorld::recall_probes(const Vocabulary& vocab) const {
  std::vector<std::pair<TokenSequence, int>> out;
  for (const Fact& f : facts) {
    for (const std::string& t : relations[static_cast<std::size_t>(f.relation)].templates) {
      out.emplace_back(vocab.tokenize(fill(t, subjects[static_cast<std::size_t>(f.subject)])),
                       vocab.id(object_name(f)));
    }
  }
  return out;
}

void FactWorld::validate() const {
  validate_sizes(sizes);
  require(static_cast<int>(subjects.size()) == sizes.subjects, "world: subject count mismatch");
  require(static_cast<int>(relations.size()) == sizes.relations, "world: relation count mismatch");
  require(essence.size() == subjects.size(), "world: essence count mismatch");
  require(facts.size() == subjects.size() * relations.size(), "world: every subject needs one fact per relation");
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const Fact& f = facts[i];
    require(f.subject == static_cast<int>(i / relations.size()) && f.relation == static_cast<int>(i % relations.size()),
            "world: facts are not in subject-major order");
    require(f.object >= 0 && f.object < static_cast<int>(relations[static_cast<std::size_t>(f.relation)].objects.size()),
            "world: object out of range");
  }
  for (int r = 0; r < static_cast<int>(relations.size()); ++r) {
    require(relations[static_cast<std::size_t>(r)].templates.size() >= 2, "world: relation needs 2 templates");
    for (int o = 0; o < static_cast<int>(relations[static_cast<std::size_t>(r)].objects.size()); ++o) {
      require(group(r, o).size() >= 2, "world: group (" + relations[static_cast<std::size_t>(r)].name + ", " +
                                           relations[static_cast<std::size_t>(r)].objects[static_cast<std::size_t>(o)] +
                                           ") has fewer than 2 subjects");
    }
  }
}

FactWorld generate_world(std::uint64_t seed, const WorldSizes& sizes) {
  validate_sizes(sizes);
  std::mt19937_64 rng(seed);
  FactWorld w;
  w.seed = seed;
  w.sizes = sizes;
  if (sizes.subject_tokens == 1) {
    for (int s = 0; s < sizes.subjects; ++s) w.subjects.push_back("s" + std::to_string(s));
  } else {
    const int pool = static_cast<int>(std::ceil(std::sqrt(2.0 * sizes.subjects)));
    std::vector<int> pairs(static_cast<std::size_t>(pool * pool));
    std::iota(pairs.begin(), pairs.end(), 0);
    shuffle(pairs, rng);
    for (int s = 0; s < sizes.subjects; ++s) {
      const int p = pairs[static_cast<std::size_t>(s)];
      w.subjects.push_back("sa" + std::to_string(p / pool) + " sb" + std::to_string(p % pool));
    }
  }
  for (int k = 0; k < sizes.kinds; ++k) w.kinds.push_back("kind" + std::to_string(k));
  for (int r = 0; r < sizes.relations; ++r) {
    Relation rel;
    rel.name = "r" + std::to_string(r);
    for (int t = 0; t < sizes.templates; ++t) rel.templates.push_back(relation_template(r, t));
    for (int o = 0; o < sizes.objects; ++o) rel.objects.push_back("o" + std::to_string(r) + "_" + std::to_string(o));
    w.relations.push_back(std::move(rel));
  }
  std::vector<int> assignment(static_cast<std::size_t>(sizes.subjects * sizes.relations));
  for (int r = 0; r < sizes.relations; ++r) {
    std::vector<int> order(static_cast<std::size_t>(sizes.subjects));
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    for (int i = 0; i < sizes.subjects; ++i) {
      assignment[static_cast<std::size_t>(order[static_cast<std::size_t>(i)] * sizes.relations + r)] = i % sizes.objects;
    }
  }
  for (int s = 0; s < sizes.subjects; ++s) {
    for (int r = 0; r < sizes.relations; ++r) {
      w.facts.push_back({s, r, assignment[static_cast<std::size_t>(s * sizes.relations + r)]});
    }
    w.essence.push_back(static_cast<int>(draw(rng, static_cast<std::size_t>(sizes.kinds))));
  }
  w.validate();
  return w;
}

std::vector<EvalCase> generate_cases(const FactWorld& world, int count, std::uint64_t seed, int max_neighbors,
                                     int max_relations) {
  require(count >= 0, "generate_cases: negative count");
  require(max_neighbors >= 1 && max_relations >= 1, "generate_cases: need at least one neighbor and relation prompt");
  std::mt19937_64 rng(seed);
  const int n_subjects = static_cast<int>(world.subjects.size());
  const int n_relations = static_cast<int>(world.relations.size());
  std::vector<int> subject_order(static_cast<std::size_t>(n_subjects));
  std::iota(subject_order.begin(), subject_order.end(), 0);
  shuffle(subject_order, rng);
  std::vector<EvalCase> cases;
  for (int i = 0; i < count; ++i) {
    const int s = subject_order[static_cast<std::size_t>(i % n_subjects)];
    const int r = static_cast<int>(draw(rng, static_cast<std::size_t>(n_relations)));
    const Fact& f = world.fact(s, r);
    const Relation& rel = world.relations[static_cast<std::size_t>(r)];
    int o_edit = static_cast<int>(draw(rng, rel.objects.size() - 1));
    if (o_edit >= f.object) ++o_edit;

    EvalCase c;
    c.case_id = "case" + std::to_string(i);
    c.subject = world.subjects[static_cast<std::size_t>(s)];
    c.prompt = rel.templates[0];
    c.paraphrase_prompts.assign(rel.templates.begin() + 1, rel.templates.end());
    c.target_true = rel.objects[static_cast<std::size_t>(f.object)];
    c.target_new = rel.objects[static_cast<std::size_t>(o_edit)];

    std::vector<int> neighbors = world.group(r, f.object);
    std::erase(neighbors, s);
    shuffle(neighbors, rng);
    neighbors.resize(std::min<std::size_t>(neighbors.size(), static_cast<std::size_t>(max_neighbors)));
    for (int n : neighbors) {
      c.neighborhood_prompts.push_back({world.subjects[static_cast<std::size_t>(n)], rel.templates[0], c.target_true});
    }
    std::vector<int> others;
    for (int r2 = 0; r2 < n_relations; ++r2) {
      if (r2 != r) others.push_back(r2);
    }
    shuffle(others, rng);
    others.resize(std::min<std::size_t>(others.size(), static_cast<std::size_t>(max_relations)));
    for (int r2 : others) {
      c.relation_prompts.push_back(
          {"", world.relations[static_cast<std::size_t>(r2)].templates[0], world.object_name(world.fact(s, r2))});
    }
    c.generation_prompts = {"{}", "the {}"};
    cases.push_back(std::move(c));
  }
  return cases;
}

void to_json(nlohmann::json& j, const FactWorld& w) {
  nlohmann::json rels = nlohmann::json::array();
  for (const Relation& r : w.relations) {
    rels.push_back({{"name", r.name}, {"templates", r.templates}, {"objects", r.objects}});
  }
  nlohmann::json facts = nlohmann::json::array();
  for (const Fact& f : w.facts) {
    facts.push_back({f.subject, f.relation, f.object});
  }
  j = {{"seed", w.seed},
       {"sizes",
        {{"subjects", w.sizes.subjects},
         {"relations", w.sizes.relations},
         {"objects", w.sizes.objects},
         {"templates", w.sizes.templates},
         {"kinds", w.sizes.kinds},
         {"subject_tokens", w.sizes.subject_tokens},
         {"profiles", w.sizes.profiles}}},
       {"subjects", w.subjects},
       {"relations", rels},
       {"kinds", w.kinds},
       {"essence", w.essence},
       {"facts", facts}};
}

void from_json(const nlohmann::json& j, FactWorld& w) {
  w.seed = j.at("seed").get<std::uint64_t>();
  const nlohmann::json& s = j.at("sizes");
  w.sizes = {s.at("subjects").get<int>(), s.at("relations").get<int>(), s.at("objects").get<int>(),
             s.at("templates").get<int>(), s.at("kinds").get<int>(), s.value("subject_tokens", 1), s.value("profiles", false)};
  w.subjects = j.at("subjects").get<std::vector<std::string>>();
  w.relations.clear();
  for (const nlohmann::json& r : j.at("relations")) {
    w.relations.push_back({r.at("name").get<std::string>(), r.at("templates").get<std::vector<std::string>>(),
                           r.at("objects").get<std::vector<std::string>>()});
  }
  w.kinds = j.at("kinds").get<std::vector<std::string>>();
  w.essence = j.at("essence").get<std::vector<int>>();
  w.facts.clear();
  for (const nlohmann::json& f : j.at("facts")) {
    w.facts.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
  }
  w.validate();
}

WorldFiles WorldFiles::in(const std::string& dir) {
  const std::filesystem::path d(dir);
  return {(d / "world.json").string(), (d / "vocab.txt").string(), (d / "corpus.txt").string(),
          (d / "cases.jsonl").string()};
}

void write_world(const FactWorld& world, const std::vector<EvalCase>& cases, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const WorldFiles files = WorldFiles::in(dir);
  {
    std::ofstream f(files.world);
    require(f.good(), "cannot write " + files.world);
    f << nlohmann::json(world).dump(1) << '\n';
  }
  world.vocabulary().save(files.vocab);
  {
    std::ofstream f(files.corpus);
    require(f.good(), "cannot write " + files.corpus);
    for (const std::string& s : world.sentences()) f << s << '\n';
  }
  write_cases(cases, files.cases);
}

FactWorld read_world(const std::string& dir) {
  const WorldFiles files = WorldFiles::in(dir);
  std::ifstream f(files.world);
  require(f.good(), "cannot open world file: " + files.world);
  try {
    return nlohmann::json::parse(f).get<FactWorld>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(files.world + ": " + e.what());
  }
}

}  // namespace adrl
