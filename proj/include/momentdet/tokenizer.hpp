#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace momentdet {

/// One token with its byte range [begin, end) in the source text.
struct Token {
  int id = 0;
  size_t begin = 0;
  size_t end = 0;
};

/// Hash-vocabulary word tokenizer standing in for a real text backbone's
/// tokenizer: lowercases, splits into alphanumeric runs and single
/// punctuation marks, and maps each piece into a fixed id space by stable
/// string hashing. "." is the prompt separator and always maps to
/// kSeparatorId. Deterministic; offsets are round-trippable.
class Tokenizer {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kSeparatorId = 1;
  static constexpr int kReservedIds = 2;

  explicit Tokenizer(int vocab_size = 8192);

  std::vector<Token> encode(const std::string& text) const;

  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_;
};

}  // namespace momentdet
