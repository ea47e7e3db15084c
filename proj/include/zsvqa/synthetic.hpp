#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsvqa/common.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/features.hpp"

namespace zsvqa {

/// A self-contained synthetic corpus: instances plus every feature file the
/// pipeline can consume, including pretrained-style vectors.
struct SyntheticData {
  std::vector<Instance> instances;
  FeatureStores stores;
  std::map<std::string, Vec> glove;  // ordered for deterministic output
  int glove_dim = 0;
};

namespace detail {
inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

inline Vec random_unit_box(int dim, Rng& rng) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.uniform01();
  return v;
}
}  // namespace detail

struct CorpusOptions {
  std::size_t n_instances = 5000;
  std::size_t n_images = 0;       // default: n_instances / 3
  std::size_t n_common_words = 40;
  std::size_t n_rare_words = 0;   // default: n_instances / 8
  double rare_in_question = 0.30;
  double rare_in_choice = 0.10;
  int cnn_dim = 32;
  int glove_dim = 16;
  std::uint64_t seed = 1;
};

/// Mixed-frequency corpus for split construction: a small common vocabulary
/// that clears any sane rarity threshold plus a long tail of rare words
/// sprinkled into questions and answers. Images carry several questions
/// each so the image-disjointness rule has work to do.
inline SyntheticData make_corpus(CorpusOptions opt) {
  if (opt.n_images == 0) opt.n_images = std::max<std::size_t>(1, opt.n_instances / 3);
  if (opt.n_rare_words == 0)
    opt.n_rare_words = std::max<std::size_t>(8, opt.n_instances / 8);
  Rng rng(opt.seed);
  SyntheticData data;

  std::vector<std::string> common, rare, classes;
  for (std::size_t i = 0; i < opt.n_common_words; ++i)
    common.push_back("cw" + std::to_string(i));
  for (std::size_t i = 0; i < opt.n_rare_words; ++i)
    rare.push_back("rw" + std::to_string(i));
  classes = {"cat",    "dog",          "tree",          "car",
             "person", "potted plant", "traffic light", "bench"};

  auto common_word = [&]() { return common[rng.index(common.size())]; };
  auto rare_word = [&]() { return rare[rng.index(rare.size())]; };

  for (std::size_t i = 0; i < opt.n_instances; ++i) {
    Instance inst;
    inst.id = "q" + std::to_string(i);
    inst.image_id = "img" + std::to_string(rng.index(opt.n_images));
    inst.type = kQuestionTypes[i % kQuestionTypes.size()];

    std::vector<std::string> q{to_string(inst.type)};
    std::size_t q_len = 2 + rng.index(3);
    for (std::size_t w = 0; w < q_len; ++w) q.push_back(common_word());
    if (rng.uniform01() < opt.rare_in_question) q.push_back(rare_word());
    inst.question = q;
    inst.question_raw = detail::join(q);

    inst.correct_index = static_cast<int>(rng.index(4));
    for (int c = 0; c < 4; ++c) {
      std::vector<std::string> a{common_word()};
      if (rng.uniform01() < 0.4) a.push_back(common_word());
      if (rng.uniform01() < opt.rare_in_choice) a.push_back(rare_word());
      inst.choices[c] = a;
      inst.choices_raw[c] = detail::join(a);
    }
    data.instances.push_back(std::move(inst));
  }

  for (std::size_t i = 0; i < opt.n_images; ++i) {
    std::string id = "img" + std::to_string(i);
    data.stores.images.add(id, detail::random_unit_box(opt.cnn_dim, rng));
    std::vector<Detection> dets;
    std::size_t n_det = rng.index(4);
    for (std::size_t d = 0; d < n_det; ++d)
      dets.push_back({classes[rng.index(classes.size())], rng.uniform01()});
    data.stores.detections.by_image.emplace(id, std::move(dets));
  }

  std::vector<std::string> glove_words = common;
  glove_words.insert(glove_words.end(), rare.begin(), rare.end());
  for (QuestionType t : kQuestionTypes) glove_words.push_back(to_string(t));
  for (const std::string& c : classes)
    for (const std::string& w : tokenize(c)) glove_words.push_back(w);
  data.glove_dim = opt.glove_dim;
  for (const std::string& w : glove_words) {
    if (data.glove.count(w)) continue;
    Vec v(opt.glove_dim);
    for (int d = 0; d < opt.glove_dim; ++d) v[d] = rng.uniform(-0.5, 0.5);
    data.glove.emplace(w, std::move(v));
  }

  data.stores.exemplars.dim = opt.cnn_dim;
  for (const std::string& w : common) {
    std::vector<Vec> vecs;
    std::size_t n = 1 + rng.index(4);
    for (std::size_t e = 0; e < n; ++e)
      vecs.push_back(detail::random_unit_box(opt.cnn_dim, rng));
    data.stores.exemplars.by_word.emplace(w, std::move(vecs));
  }
  return data;
}

struct AssociativeOptions {
  std::size_t n_questions = 50;
  std::size_t n_concepts = 10;  // question word k pairs with answer word k
  int cnn_dim = 16;
  int glove_dim = 16;
  std::uint64_t seed = 1;
};

/// Bias-free separable task: question word "qw<k>" determines answer word
/// "aw<k>"; distractors are other answer words, the correct slot is
/// uniform, and images are uninformative noise. A model that sees the
/// question can solve it; a blind one faces pure chance.
inline SyntheticData make_associative(AssociativeOptions opt) {
  if (opt.n_concepts < 4)
    throw ConfigError("associative task needs >= 4 concepts");
  Rng rng(opt.seed);
  SyntheticData data;
  for (std::size_t i = 0; i < opt.n_questions; ++i) {
    std::size_t k = rng.index(opt.n_concepts);
    Instance inst;
    inst.id = "q" + std::to_string(i);
    inst.image_id = "img" + std::to_string(i);
    inst.type = kQuestionTypes[i % kQuestionTypes.size()];
    inst.question = {"qw" + std::to_string(k)};
    inst.question_raw = inst.question[0];
    inst.correct_index = static_cast<int>(rng.index(4));

    std::vector<std::size_t> distractors;
    while (distractors.size() < 3) {
      std::size_t j = rng.index(opt.n_concepts);
      if (j == k) continue;
      bool dup = false;
      for (std::size_t seen : distractors) dup = dup || seen == j;
      if (!dup) distractors.push_back(j);
    }
    std::size_t next_distractor = 0;
    for (int c = 0; c < 4; ++c) {
      std::size_t pair_id =
          c == inst.correct_index ? k : distractors[next_distractor++];
      inst.choices[c] = {"aw" + std::to_string(pair_id)};
      inst.choices_raw[c] = inst.choices[c][0];
    }
    data.instances.push_back(std::move(inst));
    data.stores.images.add("img" + std::to_string(i),
                           detail::random_unit_box(opt.cnn_dim, rng));
  }

  data.glove_dim = opt.glove_dim;
  for (std::size_t k = 0; k < opt.n_concepts; ++k) {
    for (const std::string& w :
         {"qw" + std::to_string(k), "aw" + std::to_string(k)}) {
      Vec v(opt.glove_dim);
      for (int d = 0; d < opt.glove_dim; ++d) v[d] = rng.uniform(-0.5, 0.5);
      data.glove.emplace(w, std::move(v));
    }
  }
  data.stores.exemplars.dim = opt.cnn_dim;
  return data;
}

/// Splits where train and val are the same instances; used for overfitting
/// experiments that monitor training-set accuracy.
inline ZeroShotSplits trivial_splits(const std::vector<Instance>& instances) {
  ZeroShotSplits splits;
  splits.train = instances;
  splits.val = instances;
  splits.test = instances;
  for (const Instance& inst : instances)
    splits.annotations.emplace(inst.id, ZsFlags{});
  return splits;
}

// ---------------------------------------------------------------------------
// Writers (deterministic byte output)

inline void save_dataset(const std::vector<Instance>& instances,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write dataset: " + path);
  for (const Instance& inst : instances) {
    nlohmann::json rec;
    rec["id"] = inst.id;
    rec["image_id"] = inst.image_id;
    rec["type"] = to_string(inst.type);
    rec["question"] = inst.question_raw;
    rec["choices"] = inst.choices_raw;
    rec["answer_index"] = inst.correct_index;
    out << rec.dump() << "\n";
  }
}

namespace detail {
inline nlohmann::json vec_json(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}
}  // namespace detail

inline void save_image_features(const ImageFeatureStore& store,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write features: " + path);
  std::map<std::string, const Vec*> sorted;
  for (const auto& [id, v] : store.features) sorted.emplace(id, &v);
  for (const auto& [id, v] : sorted) {
    nlohmann::json rec;
    rec["id"] = id;
    rec["v"] = detail::vec_json(*v);
    out << rec.dump() << "\n";
  }
}

inline void save_detections(const DetectionStore& store,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write detections: " + path);
  std::map<std::string, const std::vector<Detection>*> sorted;
  for (const auto& [id, dets] : store.by_image) sorted.emplace(id, &dets);
  for (const auto& [id, dets] : sorted) {
    nlohmann::json rec;
    rec["image_id"] = id;
    rec["detections"] = nlohmann::json::array();
    for (const Detection& d : *dets)
      rec["detections"].push_back(
          {{"class", d.class_name}, {"score", d.score}});
    out << rec.dump() << "\n";
  }
}

inline void save_exemplars(const ExemplarStore& store,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write exemplars: " + path);
  std::map<std::string, const std::vector<Vec>*> sorted;
  for (const auto& [word, vecs] : store.by_word) sorted.emplace(word, &vecs);
  for (const auto& [word, vecs] : sorted) {
    nlohmann::json rec;
    rec["word"] = word;
    rec["vectors"] = nlohmann::json::array();
    for (const Vec& v : *vecs) rec["vectors"].push_back(detail::vec_json(v));
    out << rec.dump() << "\n";
  }
}

inline void save_glove(const std::map<std::string, Vec>& glove,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write vectors: " + path);
  char buf[32];
  for (const auto& [word, v] : glove) {
    out << word;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), " %.9g", v[i]);
      out << buf;
    }
    out << "\n";
  }
}

/// Writes the full corpus into a directory using the standard file names.
inline void save_synthetic(const SyntheticData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(data.instances, dir + "/dataset.jsonl");
  save_image_features(data.stores.images, dir + "/features.jsonl");
  save_detections(data.stores.detections, dir + "/detections.jsonl");
  save_exemplars(data.stores.exemplars, dir + "/exemplars.jsonl");
  save_glove(data.glove, dir + "/glove.txt");
}

}  // namespace zsvqa
