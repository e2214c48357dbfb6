#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adrl {

struct SubjectSpan {
  int start = 0;
  int end = 0;  // inclusive; the subject's last token

  bool operator==(const SubjectSpan&) const = default;
};

struct TokenSequence {
  std::vector<int> ids;
  std::optional<SubjectSpan> subject;

  int size() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }
};

/// Closed-vocabulary whitespace tokenizer.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> symbols);

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const;
  std::optional<int> find(std::string_view symbol) const;
  int id(std::string_view symbol) const;  // throws on unknown symbol
  const std::vector<std::string>& symbols() const { return symbols_; }

  TokenSequence tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  void save(const std::string& path) const;  // one symbol per line
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_whitespace(std::string_view text);

/// Span of the last occurrence of `subject` in `seq`.
SubjectSpan locate_subject_span(const TokenSequence& seq, const TokenSequence& subject);
SubjectSpan locate_subject_span(const Vocabulary& vocab, const TokenSequence& seq, std::string_view subject);

TokenSequence concat(const TokenSequence& a, const TokenSequence& b);

}  // namespace adrl
