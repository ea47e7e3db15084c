#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "zsvqa/common.hpp"

namespace zsvqa {

// ---------------------------------------------------------------------------
// Tokenization
//
// Rules: lowercase, strip the punctuation set .,!?'"()[]{}; and the em-dash,
// split on whitespace runs, drop empty tokens. Digits, colons and hyphens
// survive inside tokens so answers like "12:09" stay intact.
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_stripped_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case '!':
    case '?':
    case '\'':
    case '"':
    case '(':
    case ')':
    case '[':
    case ']':
    case '{':
    case '}':
    case ';':
      return true;
    default:
      return false;
  }
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    // em-dash U+2014 (0xE2 0x80 0x94)
    if (c == 0xE2 && i + 2 < text.size() &&
        static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x94) {
      i += 2;
      continue;
    }
    if (std::isspace(c)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      continue;
    }
    if (c < 0x80 && detail::is_stripped_punct(static_cast<char>(c))) continue;
    current.push_back(static_cast<char>(std::tolower(c)));
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// ---------------------------------------------------------------------------
// Porter stemmer
//
// Port of the canonical reference implementation of the 1980 algorithm,
// including its published corrections (the bli/logi rules and the two-letter
// word guard), so that output matches the reference vocabulary list exactly.
// ---------------------------------------------------------------------------

namespace detail {

class PorterStemmer {
 public:
  std::string stem(std::string_view word) {
    if (word.size() <= 2) return std::string(word);
    b_.assign(word.begin(), word.end());
    k_ = static_cast<int>(b_.size()) - 1;
    step1ab();
    step1c();
    step2();
    step3();
    step4();
    step5();
    return std::string(b_.data(), static_cast<std::size_t>(k_ + 1));
  }

 private:
  std::vector<char> b_;
  int k_ = 0;  // offset of the last letter of the current word
  int j_ = 0;  // offset set by ends()

  bool cons(int i) const {
    switch (b_[static_cast<std::size_t>(i)]) {
      case 'a':
      case 'e':
      case 'i':
      case 'o':
      case 'u':
        return false;
      case 'y':
        return (i == 0) ? true : !cons(i - 1);
      default:
        return true;
    }
  }

  // Number of consonant sequences in b[0..j].
  int m() const {
    int n = 0;
    int i = 0;
    while (true) {
      if (i > j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    while (true) {
      while (true) {
        if (i > j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      while (true) {
        if (i > j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (int i = 0; i <= j_; ++i) {
      if (!cons(i)) return true;
    }
    return false;
  }

  bool double_cons(int j) const {
    if (j < 1) return false;
    if (b_[static_cast<std::size_t>(j)] != b_[static_cast<std::size_t>(j - 1)])
      return false;
    return cons(j);
  }

  // cvc(i) is true when i-2,i-1,i is consonant-vowel-consonant and the final
  // consonant is not w, x or y.
  bool cvc(int i) const {
    if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    char ch = b_[static_cast<std::size_t>(i)];
    return ch != 'w' && ch != 'x' && ch != 'y';
  }

  bool ends(std::string_view s) {
    int len = static_cast<int>(s.size());
    if (len > k_ + 1) return false;
    if (std::string_view(b_.data() + (k_ - len + 1),
                         static_cast<std::size_t>(len)) != s)
      return false;
    j_ = k_ - len;
    return true;
  }

  void set_to(std::string_view s) {
    b_.resize(static_cast<std::size_t>(j_ + 1));
    b_.insert(b_.end(), s.begin(), s.end());
    k_ = j_ + static_cast<int>(s.size());
  }

  void replace_if_m(std::string_view s) {
    if (m() > 0) set_to(s);
  }

  void step1ab() {
    if (b_[static_cast<std::size_t>(k_)] == 's') {
      if (ends("sses")) {
        k_ -= 2;
      } else if (ends("ies")) {
        set_to("i");
      } else if (b_[static_cast<std::size_t>(k_ - 1)] != 's') {
        --k_;
      }
    }
    if (ends("eed")) {
      if (m() > 0) --k_;
    } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
      k_ = j_;
      if (ends("at")) {
        set_to("ate");
      } else if (ends("bl")) {
        set_to("ble");
      } else if (ends("iz")) {
        set_to("ize");
      } else if (double_cons(k_)) {
        --k_;
        char ch = b_[static_cast<std::size_t>(k_)];
        if (ch == 'l' || ch == 's' || ch == 'z') ++k_;
      } else if (m() == 1 && cvc(k_)) {
        set_to("e");
      }
    }
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_[static_cast<std::size_t>(k_)] = 'i';
  }

  void step2() {
    if (k_ < 1) return;
    switch (b_[static_cast<std::size_t>(k_ - 1)]) {
      case 'a':
        if (ends("ational")) {
          replace_if_m("ate");
        } else if (ends("tional")) {
          replace_if_m("tion");
        }
        break;
      case 'c':
        if (ends("enci")) {
          replace_if_m("ence");
        } else if (ends("anci")) {
          replace_if_m("ance");
        }
        break;
      case 'e':
        if (ends("izer")) replace_if_m("ize");
        break;
      case 'l':
        if (ends("bli")) {
          replace_if_m("ble");
        } else if (ends("alli")) {
          replace_if_m("al");
        } else if (ends("entli")) {
          replace_if_m("ent");
        } else if (ends("eli")) {
          replace_if_m("e");
        } else if (ends("ousli")) {
          replace_if_m("ous");
        }
        break;
      case 'o':
        if (ends("ization")) {
          replace_if_m("ize");
        } else if (ends("ation")) {
          replace_if_m("ate");
        } else if (ends("ator")) {
          replace_if_m("ate");
        }
        break;
      case 's':
        if (ends("alism")) {
          replace_if_m("al");
        } else if (ends("iveness")) {
          replace_if_m("ive");
        } else if (ends("fulness")) {
          replace_if_m("ful");
        } else if (ends("ousness")) {
          replace_if_m("ous");
        }
        break;
      case 't':
        if (ends("aliti")) {
          replace_if_m("al");
        } else if (ends("iviti")) {
          replace_if_m("ive");
        } else if (ends("biliti")) {
          replace_if_m("ble");
        }
        break;
      case 'g':
        if (ends("logi")) replace_if_m("log");
        break;
      default:
        break;
    }
  }

  void step3() {
    switch (b_[static_cast<std::size_t>(k_)]) {
      case 'e':
        if (ends("icate")) {
          replace_if_m("ic");
        } else if (ends("ative")) {
          replace_if_m("");
        } else if (ends("alize")) {
          replace_if_m("al");
        }
        break;
      case 'i':
        if (ends("iciti")) replace_if_m("ic");
        break;
      case 'l':
        if (ends("ical")) {
          replace_if_m("ic");
        } else if (ends("ful")) {
          replace_if_m("");
        }
        break;
      case 's':
        if (ends("ness")) replace_if_m("");
        break;
      default:
        break;
    }
  }

  void step4() {
    if (k_ < 1) return;
    switch (b_[static_cast<std::size_t>(k_ - 1)]) {
      case 'a':
        if (ends("al")) break;
        return;
      case 'c':
        if (ends("ance") || ends("ence")) break;
        return;
      case 'e':
        if (ends("er")) break;
        return;
      case 'i':
        if (ends("ic")) break;
        return;
      case 'l':
        if (ends("able") || ends("ible")) break;
        return;
      case 'n':
        if (ends("ant") || ends("ement") || ends("ment") || ends("ent")) break;
        return;
      case 'o':
        if (ends("ion") && j_ >= 0 &&
            (b_[static_cast<std::size_t>(j_)] == 's' ||
             b_[static_cast<std::size_t>(j_)] == 't'))
          break;
        if (ends("ou")) break;
        return;
      case 's':
        if (ends("ism")) break;
        return;
      case 't':
        if (ends("ate") || ends("iti")) break;
        return;
      case 'u':
        if (ends("ous")) break;
        return;
      case 'v':
        if (ends("ive")) break;
        return;
      case 'z':
        if (ends("ize")) break;
        return;
      default:
        return;
    }
    if (m() > 1) k_ = j_;
  }

  void step5() {
    j_ = k_;
    if (b_[static_cast<std::size_t>(k_)] == 'e') {
      int a = m();
      if (a > 1 || (a == 1 && !cvc(k_ - 1))) --k_;
    }
    if (b_[static_cast<std::size_t>(k_)] == 'l' && double_cons(k_) && m() > 1)
      --k_;
  }
};

}  // namespace detail

inline std::string porter_stem(std::string_view token) {
  detail::PorterStemmer stemmer;
  return stemmer.stem(token);
}

// ---------------------------------------------------------------------------
// Stem maps
// ---------------------------------------------------------------------------

enum class StemAlgorithm { porter, identity };

inline StemAlgorithm parse_stem_algorithm(std::string_view tag) {
  if (tag == "porter") return StemAlgorithm::porter;
  if (tag == "identity" || tag == "none") return StemAlgorithm::identity;
  throw ConfigError("unknown stem algorithm tag: '" + std::string(tag) +
                    "' (expected 'porter' or 'identity')");
}

inline std::string_view to_string(StemAlgorithm a) {
  return a == StemAlgorithm::porter ? "porter" : "identity";
}

/// Surface-form -> stem mapping, total over the vocabulary it was built
/// from. Words outside that vocabulary are stemmed on the fly with the
/// same algorithm, so apply() is total over all inputs.
struct StemMap {
  StemAlgorithm algorithm = StemAlgorithm::identity;
  std::unordered_map<std::string, std::string> entries;

  std::string apply(const std::string& word) const {
    auto it = entries.find(word);
    if (it != entries.end()) return it->second;
    return algorithm == StemAlgorithm::porter ? porter_stem(word) : word;
  }

  std::size_t distinct_stems() const {
    std::unordered_set<std::string_view> stems;
    for (const auto& [word, stem] : entries) stems.insert(stem);
    return stems.size();
  }

  /// The distinct stems, sorted for deterministic table construction.
  std::vector<std::string> stem_keys() const {
    std::vector<std::string> stems;
    stems.reserve(entries.size());
    for (const auto& [word, stem] : entries) stems.push_back(stem);
    std::sort(stems.begin(), stems.end());
    stems.erase(std::unique(stems.begin(), stems.end()), stems.end());
    return stems;
  }
};

inline StemMap build_stem_map(const std::vector<std::string>& vocab,
                              StemAlgorithm algorithm) {
  StemMap map;
  map.algorithm = algorithm;
  map.entries.reserve(vocab.size());
  for (const std::string& word : vocab) {
    map.entries.emplace(
        word, algorithm == StemAlgorithm::porter ? porter_stem(word) : word);
  }
  return map;
}

}  // namespace zsvqa
