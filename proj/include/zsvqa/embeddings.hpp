#pragma once

#include <Eigen/Core>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "zsvqa/common.hpp"
#include "zsvqa/textproc.hpp"

namespace zsvqa {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class KeyMode { surface, stem };
enum class TableScope { question, answer, shared };

/// Dense word/stem -> vector table. Vectors are stored as columns of one
/// matrix so the whole table can be updated as a single optimizer tensor.
struct EmbeddingTable {
  int dim = 0;
  bool trainable = false;
  double relative_lr = 1.0;  // lambda, scales optimizer updates
  KeyMode key_mode = KeyMode::surface;
  TableScope scope = TableScope::shared;
  std::vector<std::string> keys;
  Mat data;  // dim x keys.size()
  std::unordered_map<std::string, int> column_of;

  std::size_t size() const { return keys.size(); }

  int find(const std::string& key) const {
    auto it = column_of.find(key);
    return it == column_of.end() ? -1 : it->second;
  }

  Vec row(int column) const { return data.col(column); }

  /// Appends one vector. Intended for construction and for lazily
  /// registering detection classes; not for bulk loading.
  int add(const std::string& key, const Vec& v) {
    if (column_of.count(key))
      throw ConfigError("duplicate embedding key: " + key);
    if (dim == 0) dim = static_cast<int>(v.size());
    if (v.size() != dim)
      throw ConfigError("embedding dimension mismatch for key '" + key + "'");
    int col = static_cast<int>(keys.size());
    keys.push_back(key);
    data.conservativeResize(dim, col + 1);
    data.col(col) = v;
    column_of.emplace(key, col);
    return col;
  }

  void validate() const {
    if (relative_lr < 0.0 || relative_lr > 1.0)
      throw ConfigError("relative learning rate must lie in [0, 1]");
    if (!data.allFinite())
      throw NumericError("embedding table contains non-finite values");
  }
};

/// Glorot-uniform learned table: entries uniform in +-sqrt(6/(|vocab|+d)).
inline EmbeddingTable init_learned(const std::vector<std::string>& vocab,
                                   int dim, Rng& rng) {
  if (dim <= 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingTable table;
  table.dim = dim;
  table.trainable = true;
  table.relative_lr = 1.0;
  table.keys = vocab;
  table.data.resize(dim, static_cast<Eigen::Index>(vocab.size()));
  const double bound =
      std::sqrt(6.0 / (static_cast<double>(vocab.size()) + dim));
  for (Eigen::Index c = 0; c < table.data.cols(); ++c) {
    for (Eigen::Index r = 0; r < table.data.rows(); ++r) {
      table.data(r, c) = rng.uniform(-bound, bound);
    }
  }
  table.column_of.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (!table.column_of.emplace(vocab[i], static_cast<int>(i)).second)
      throw ConfigError("duplicate key in vocabulary: " + vocab[i]);
  }
  return table;
}

struct GloveLoadResult {
  EmbeddingTable table;
  std::size_t words_found = 0;  // vocab words present in the file
};

/// Reads the GloVe text format ("word v1 v2 ... vd" per line) keeping only
/// rows for words in `vocab`. Dimension is inferred from the first line and
/// enforced on every later line.
inline GloveLoadResult load_pretrained(const std::string& path,
                                       const std::vector<std::string>& vocab) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file: " + path);

  std::unordered_set<std::string_view> wanted;
  wanted.reserve(vocab.size());
  for (const std::string& w : vocab) wanted.insert(w);

  GloveLoadResult result;
  EmbeddingTable& table = result.table;
  table.trainable = false;

  std::vector<std::string> found_keys;
  std::vector<Vec> found_vectors;

  std::string line;
  std::size_t line_no = 0;
  int dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::size_t pos = line.find(' ');
    if (pos == std::string::npos || pos == 0)
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected 'word v1 ... vd'");
    std::string word = line.substr(0, pos);

    std::vector<double> values;
    if (dim > 0) values.reserve(static_cast<std::size_t>(dim));
    const char* p = line.data() + pos;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (next < end && *next != ' '))
        throw FormatError(path + ":" + std::to_string(line_no) +
                          ": non-numeric field");
      if (!std::isfinite(v))
        throw FormatError(path + ":" + std::to_string(line_no) +
                          ": non-finite value");
      values.push_back(v);
      p = next;
    }
    if (values.empty())
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": line has no vector values");
    if (dim == 0) {
      dim = static_cast<int>(values.size());
    } else if (static_cast<int>(values.size()) != dim) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values, got " +
                        std::to_string(values.size()));
    }
    if (wanted.count(word) && !table.column_of.count(word)) {
      found_keys.push_back(word);
      found_vectors.emplace_back(
          Eigen::Map<const Vec>(values.data(), dim));
      table.column_of.emplace(found_keys.back(), 0);  // placeholder index
    }
  }
  if (dim == 0) throw FormatError(path + ": file contains no vectors");

  table.dim = dim;
  table.keys = std::move(found_keys);
  table.data.resize(dim, static_cast<Eigen::Index>(table.keys.size()));
  table.column_of.clear();
  for (std::size_t i = 0; i < table.keys.size(); ++i) {
    table.data.col(static_cast<Eigen::Index>(i)) = found_vectors[i];
    table.column_of.emplace(table.keys[i], static_cast<int>(i));
  }
  result.words_found = table.keys.size();
  return result;
}

/// Bag of words: mean over the table rows of the in-vocabulary words.
/// Unknown words are excluded from both numerator and denominator; if no
/// word is known the result is the zero vector.
inline Vec bow(const std::vector<std::string>& words,
               const EmbeddingTable& table) {
  Vec sum = Vec::Zero(table.dim);
  int known = 0;
  for (const std::string& w : words) {
    int col = table.find(w);
    if (col < 0) continue;
    sum += table.data.col(col);
    ++known;
  }
  if (known > 0) sum /= static_cast<double>(known);
  return sum;
}

/// Maps tokens to table keys: identity in surface mode, stem-mapped in stem
/// mode (stems computed on the fly for words outside the stem map).
inline std::vector<std::string> lookup_keys(
    const std::vector<std::string>& tokens, const EmbeddingTable& table,
    const StemMap& stem_map) {
  if (table.key_mode == KeyMode::surface) return tokens;
  std::vector<std::string> keys;
  keys.reserve(tokens.size());
  for (const std::string& t : tokens) keys.push_back(stem_map.apply(t));
  return keys;
}

}  // namespace zsvqa
