#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "zsvqa/common.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/embeddings.hpp"
#include "zsvqa/textproc.hpp"

namespace zsvqa {

/// Precomputed CNN features keyed by image id.
struct ImageFeatureStore {
  int dim = 0;
  std::unordered_map<std::string, Vec> features;

  const Vec& get(const std::string& image_id) const {
    auto it = features.find(image_id);
    if (it == features.end())
      throw LookupError("no image features for id '" + image_id + "'");
    return it->second;
  }

  void add(const std::string& image_id, Vec v) {
    if (dim == 0) dim = static_cast<int>(v.size());
    if (v.size() != dim)
      throw FormatError("feature dimension mismatch for image '" + image_id +
                        "'");
    if (!v.allFinite())
      throw FormatError("non-finite feature for image '" + image_id + "'");
    features.emplace(image_id, std::move(v));
  }
};

struct Detection {
  std::string class_name;
  double score = 0.0;  // in [0, 1]
};

struct DetectionStore {
  std::unordered_map<std::string, std::vector<Detection>> by_image;

  const std::vector<Detection>& get(const std::string& image_id) const {
    static const std::vector<Detection> empty;
    auto it = by_image.find(image_id);
    return it == by_image.end() ? empty : it->second;
  }
};

/// Per-word exemplar CNN features (precomputed image-retrieval results).
struct ExemplarStore {
  int dim = 0;
  std::unordered_map<std::string, std::vector<Vec>> by_word;
};

namespace detail {
inline Vec parse_vec(const nlohmann::json& arr) {
  Vec v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
}
}  // namespace detail

inline ImageFeatureStore load_image_features(const std::string& path) {
  ImageFeatureStore store;
  detail::for_each_jsonl(path, [&store](const nlohmann::json& rec) {
    store.add(rec.at("id").get<std::string>(), detail::parse_vec(rec.at("v")));
  });
  return store;
}

inline DetectionStore load_detections(const std::string& path) {
  DetectionStore store;
  detail::for_each_jsonl(path, [&store](const nlohmann::json& rec) {
    std::vector<Detection> dets;
    for (const auto& d : rec.at("detections")) {
      Detection det;
      det.class_name = d.at("class").get<std::string>();
      det.score = d.at("score").get<double>();
      if (det.score < 0.0 || det.score > 1.0)
        throw FormatError("detection score outside [0,1]");
      dets.push_back(std::move(det));
    }
    store.by_image.emplace(rec.at("image_id").get<std::string>(),
                           std::move(dets));
  });
  return store;
}

inline ExemplarStore load_exemplars(const std::string& path) {
  ExemplarStore store;
  detail::for_each_jsonl(path, [&store](const nlohmann::json& rec) {
    std::vector<Vec> vecs;
    for (const auto& arr : rec.at("vectors")) {
      vecs.push_back(detail::parse_vec(arr));
      if (store.dim == 0) store.dim = static_cast<int>(vecs.back().size());
      if (vecs.back().size() != store.dim)
        throw FormatError("exemplar dimension mismatch");
    }
    store.by_word.emplace(rec.at("word").get<std::string>(), std::move(vecs));
  });
  return store;
}

struct FeatureStores {
  ImageFeatureStore images;
  DetectionStore detections;
  ExemplarStore exemplars;
};

enum class DetectionMode { learned, semantic };

inline DetectionMode parse_detection_mode(const std::string& s) {
  if (s == "learned") return DetectionMode::learned;
  if (s == "semantic") return DetectionMode::semantic;
  throw ConfigError("unknown detection mode: '" + s + "'");
}

inline const char* to_string(DetectionMode m) {
  return m == DetectionMode::learned ? "learned" : "semantic";
}

struct FeatureConfig {
  bool question_visual = false;  // exemplar embedding on the question side
  bool answer_visual = false;    // exemplar embedding on the answer side
  int exemplar_k = 1;
  bool use_detections = false;
  double detection_threshold = 0.5;
  DetectionMode detection_mode = DetectionMode::learned;
};

/// One (column, coefficient) term of a linear combination of table columns.
/// Keeping features in this form lets the training graph differentiate
/// through the embedding tables.
using EmbedTerm = std::pair<int, double>;

inline Vec materialize_terms(const std::vector<EmbedTerm>& terms,
                             const EmbeddingTable& table) {
  Vec v = Vec::Zero(table.dim);
  for (const auto& [col, coeff] : terms) v += coeff * table.data.col(col);
  return v;
}

/// Mean of the known words' columns: coefficient 1/n_known on each.
inline std::vector<EmbedTerm> bow_terms(const std::vector<std::string>& keys,
                                        const EmbeddingTable& table) {
  std::vector<int> cols;
  for (const std::string& k : keys) {
    int col = table.find(k);
    if (col >= 0) cols.push_back(col);
  }
  std::vector<EmbedTerm> terms;
  terms.reserve(cols.size());
  for (int col : cols)
    terms.emplace_back(col, 1.0 / static_cast<double>(cols.size()));
  return terms;
}

/// Detections at or above the threshold as table terms: learned mode keys
/// the whole class name (rows created on first sight, zero-initialized);
/// semantic mode averages the pretrained vectors of the class-name words.
inline std::vector<EmbedTerm> detection_terms(
    const std::vector<Detection>& detections, double threshold,
    EmbeddingTable& class_table, DetectionMode mode) {
  std::vector<EmbedTerm> terms;
  std::vector<std::string> missing;
  for (const Detection& det : detections) {
    if (det.score < threshold) continue;
    if (mode == DetectionMode::learned) {
      int col = class_table.find(det.class_name);
      if (col < 0) col = class_table.add(det.class_name,
                                         Vec::Zero(class_table.dim));
      terms.emplace_back(col, 1.0);
    } else {
      std::vector<std::string> words = tokenize(det.class_name);
      std::vector<int> cols;
      bool complete = !words.empty();
      for (const std::string& w : words) {
        int col = class_table.find(w);
        if (col < 0) {
          complete = false;
          break;
        }
        cols.push_back(col);
      }
      if (!complete) {
        if (std::find(missing.begin(), missing.end(), det.class_name) ==
            missing.end())
          missing.push_back(det.class_name);
        continue;
      }
      for (int col : cols)
        terms.emplace_back(col, 1.0 / static_cast<double>(cols.size()));
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const std::string& c : missing) {
      if (!list.empty()) list += ", ";
      list += "'" + c + "'";
    }
    throw ConfigError("detection classes missing from pretrained vectors: " +
                      list);
  }
  return terms;
}

/// Sum (not mean) of class embeddings over surviving detections.
inline Vec detection_bow(const std::vector<Detection>& detections,
                         double threshold, EmbeddingTable& class_table,
                         DetectionMode mode) {
  return materialize_terms(
      detection_terms(detections, threshold, class_table, mode), class_table);
}

/// Flat mean over the first k exemplar vectors of every word found in the
/// store; zero vector when no word has exemplars.
inline Vec visual_embedding(const std::vector<std::string>& words,
                            const ExemplarStore& store, int k) {
  if (k < 1) throw ConfigError("exemplar count k must be >= 1");
  Vec sum = Vec::Zero(store.dim);
  int n = 0;
  for (const std::string& w : words) {
    auto it = store.by_word.find(w);
    if (it == store.by_word.end()) continue;
    int take = std::min<int>(k, static_cast<int>(it->second.size()));
    for (int i = 0; i < take; ++i) {
      sum += it->second[i];
      ++n;
    }
  }
  if (n > 0) sum /= static_cast<double>(n);
  return sum;
}

inline int question_dim(const EmbeddingTable& table,
                        const FeatureStores& stores,
                        const FeatureConfig& config) {
  return table.dim + (config.question_visual ? stores.exemplars.dim : 0);
}

inline int answer_dim(const EmbeddingTable& table, const FeatureStores& stores,
                      const FeatureConfig& config) {
  return table.dim + (config.answer_visual ? stores.exemplars.dim : 0);
}

inline int image_dim(const EmbeddingTable& class_table,
                     const FeatureStores& stores,
                     const FeatureConfig& config) {
  return stores.images.dim + (config.use_detections ? class_table.dim : 0);
}

inline Vec concat2(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  if (a.size() > 0) out.head(a.size()) = a;
  if (b.size() > 0) out.tail(b.size()) = b;
  return out;
}

/// x^Q: word BoW always, exemplar visual embedding optionally appended.
inline Vec assemble_question(const Instance& inst,
                             const EmbeddingTable& q_table,
                             const StemMap& stem_map,
                             const FeatureStores& stores,
                             const FeatureConfig& config) {
  Vec text = bow(lookup_keys(inst.question, q_table, stem_map), q_table);
  if (!config.question_visual) return text;
  return concat2(text, visual_embedding(inst.question, stores.exemplars,
                                        config.exemplar_k));
}

/// x^A for one candidate answer; same layout as the question side.
inline Vec assemble_answer(const std::vector<std::string>& choice,
                           const EmbeddingTable& a_table,
                           const StemMap& stem_map, const FeatureStores& stores,
                           const FeatureConfig& config) {
  Vec text = bow(lookup_keys(choice, a_table, stem_map), a_table);
  if (!config.answer_visual) return text;
  return concat2(text,
                 visual_embedding(choice, stores.exemplars, config.exemplar_k));
}

/// x^I: CNN features always, detection BoW optionally appended.
inline Vec assemble_image(const std::string& image_id,
                          const FeatureStores& stores,
                          EmbeddingTable& class_table,
                          const FeatureConfig& config) {
  const Vec& cnn = stores.images.get(image_id);
  if (!config.use_detections) return cnn;
  return concat2(cnn, detection_bow(stores.detections.get(image_id),
                                    config.detection_threshold, class_table,
                                    config.detection_mode));
}

// ---------------------------------------------------------------------------
// Prepared (graph-ready) per-question features

struct PreparedCandidate {
  std::string raw;               // original answer string
  std::vector<EmbedTerm> terms;  // answer-table columns
  Vec constant;                  // exemplar block; size 0 when disabled
  double label = 0.0;
};

struct PreparedInstance {
  std::string id;
  QuestionType type = QuestionType::what;
  int correct_index = 0;
  std::vector<EmbedTerm> q_terms;
  Vec q_const;  // size 0 when disabled
  Vec i_cnn;
  std::vector<EmbedTerm> det_terms;  // empty when detections disabled
  std::vector<PreparedCandidate> candidates;
};

inline PreparedInstance prepare_instance(
    const Instance& inst, const EmbeddingTable& q_table,
    const EmbeddingTable& a_table, EmbeddingTable& class_table,
    const StemMap& stem_map, const FeatureStores& stores,
    const FeatureConfig& config) {
  PreparedInstance p;
  p.id = inst.id;
  p.type = inst.type;
  p.correct_index = inst.correct_index;
  p.q_terms = bow_terms(lookup_keys(inst.question, q_table, stem_map), q_table);
  if (config.question_visual)
    p.q_const =
        visual_embedding(inst.question, stores.exemplars, config.exemplar_k);
  p.i_cnn = stores.images.get(inst.image_id);
  if (config.use_detections)
    p.det_terms =
        detection_terms(stores.detections.get(inst.image_id),
                        config.detection_threshold, class_table,
                        config.detection_mode);
  for (int i = 0; i < 4; ++i) {
    PreparedCandidate c;
    c.raw = inst.choices_raw[i];
    c.terms = bow_terms(lookup_keys(inst.choices[i], a_table, stem_map),
                        a_table);
    if (config.answer_visual)
      c.constant = visual_embedding(inst.choices[i], stores.exemplars,
                                    config.exemplar_k);
    c.label = (i == inst.correct_index) ? 1.0 : 0.0;
    p.candidates.push_back(std::move(c));
  }
  return p;
}

}  // namespace zsvqa
