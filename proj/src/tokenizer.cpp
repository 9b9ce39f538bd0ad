#include <cctype>

#include "irk/model.hpp"

namespace irk {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(char(std::tolower(u)));
    } else if (ch == '\'' || ch == '-') {
      // keep in-word apostrophes and hyphens ("don't", "t-shirt")
      if (!cur.empty()) cur.push_back(ch);
    } else {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::vector<int> tokenize(const std::string& text, int vocab_size) {
  std::vector<int> ids;
  for (const auto& w : split_words(text))
    ids.push_back(int(fnv1a64(w) % uint64_t(vocab_size)));
  return ids;
}

std::vector<int> tokenize(const std::vector<std::string>& sentences, int vocab_size) {
  std::vector<int> ids;
  for (const auto& s : sentences) {
    auto part = tokenize(s, vocab_size);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

}  // namespace irk
