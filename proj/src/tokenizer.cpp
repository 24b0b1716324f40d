#include "momentdet/tokenizer.hpp"

#include <cctype>
#include <stdexcept>

namespace momentdet {

namespace {

bool is_word_byte(unsigned char c) {
  // Non-ASCII bytes count as word characters so UTF-8 text stays in one piece.
  return std::isalnum(c) != 0 || c >= 0x80;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(c)));
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Tokenizer::Tokenizer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size_ <= kReservedIds) {
    throw std::invalid_argument("Tokenizer: vocab_size must exceed the reserved ids");
  }
}

std::vector<Token> Tokenizer::encode(const std::string& text) const {
  std::vector<Token> out;
  const size_t n = text.size();
  size_t i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_byte(c)) {
      size_t j = i + 1;
      while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      const uint64_t h = fnv1a(text.substr(i, j - i));
      const int id = kReservedIds + static_cast<int>(h % static_cast<uint64_t>(vocab_size_ - kReservedIds));
      out.push_back(Token{id, i, j});
      i = j;
    } else {
      int id;
      if (c == '.') {
        id = kSeparatorId;
      } else {
        const uint64_t h = fnv1a(std::string(1, static_cast<char>(c)));
        id = kReservedIds + static_cast<int>(h % static_cast<uint64_t>(vocab_size_ - kReservedIds));
      }
      out.push_back(Token{id, i, i + 1});
      ++i;
    }
  }
  return out;
}

}  // namespace momentdet
