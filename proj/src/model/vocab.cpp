#include "adrl/model/vocab.hpp"

#include "adrl/common.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace adrl {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
      ++j;
    }
    if (j > i) {
      out.emplace_back(text.substr(i, j - i));
    }
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    require(!symbols_[i].empty(), "vocabulary symbol " + std::to_string(i) + " is empty");
    require(split_whitespace(symbols_[i]).size() == 1, "vocabulary symbol contains whitespace: '" + symbols_[i] + "'");
    const bool inserted = index_.emplace(symbols_[i], static_cast<int>(i)).second;
    require(inserted, "duplicate vocabulary symbol '" + symbols_[i] + "'");
  }
}

const std::string& Vocabulary::symbol(int id) const {
  require(id >= 0 && id < size(), "token id " + std::to_string(id) + " out of vocabulary range");
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) {
    return std::nullopt;
  }
  return it->second;
}

int Vocabulary::id(std::string_view symbol) const {
  auto found = find(symbol);
  require(found.has_value(), "out-of-vocabulary symbol '" + std::string(symbol) + "'");
  return *found;
}

TokenSequence Vocabulary::tokenize(std::string_view text) const {
  TokenSequence seq;
  for (const std::string& sym : split_whitespace(text)) {
    seq.ids.push_back(id(sym));
  }
  return seq;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) {
      out += ' ';
    }
    out += symbol(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  require(f.good(), "cannot write vocabulary file " + path);
  for (const auto& s : symbols_) {
    f << s << '\n';
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot read vocabulary file " + path);
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) {
      symbols.push_back(line);
    }
  }
  return Vocabulary(std::move(symbols));
}

SubjectSpan locate_subject_span(const TokenSequence& seq, const TokenSequence& subject) {
  require(!subject.empty(), "subject is empty");
  const int n = seq.size();
  const int m = subject.size();
  for (int start = n - m; start >= 0; --start) {
    bool match = true;
    for (int k = 0; k < m && match; ++k) {
      match = seq.ids[static_cast<std::size_t>(start + k)] == subject.ids[static_cast<std::size_t>(k)];
    }
    if (match) {
      return SubjectSpan{start, start + m - 1};
    }
  }
  throw Error("subject does not occur in the sequence");
}

SubjectSpan locate_subject_span(const Vocabulary& vocab, const TokenSequence& seq, std::string_view subject) {
  try {
    return locate_subject_span(seq, vocab.tokenize(subject));
  } catch (const Error& e) {
    throw Error("cannot locate subject '" + std::string(subject) + "' in '" + vocab.detokenize(seq.ids) +
                "': " + e.what());
  }
}

TokenSequence concat(const TokenSequence& a, const TokenSequence& b) {
  TokenSequence out;
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  if (b.subject) {
    out.subject = SubjectSpan{b.subject->start + a.size(), b.subject->end + a.size()};
  } else {
    out.subject = a.subject;
  }
  return out;
}

}  // namespace adrl
