#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <filesystem>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "zsvqa/common.hpp"
#include "zsvqa/textproc.hpp"

namespace zsvqa {

enum class QuestionType { what, where, when, who, why, how };

inline constexpr std::array<QuestionType, 6> kQuestionTypes = {
    QuestionType::what, QuestionType::where, QuestionType::when,
    QuestionType::who,  QuestionType::why,   QuestionType::how};

inline const char* to_string(QuestionType t) {
  switch (t) {
    case QuestionType::what: return "what";
    case QuestionType::where: return "where";
    case QuestionType::when: return "when";
    case QuestionType::who: return "who";
    case QuestionType::why: return "why";
    case QuestionType::how: return "how";
  }
  throw ConfigError("invalid question type value");
}

inline QuestionType parse_question_type(const std::string& s) {
  for (QuestionType t : kQuestionTypes)
    if (s == to_string(t)) return t;
  throw FormatError("unknown question type: '" + s + "'");
}

/// One multiple-choice question. Raw strings are kept alongside the token
/// lists; augmentation and file round-trips need the original spellings.
struct Instance {
  std::string id;
  std::string image_id;
  QuestionType type = QuestionType::what;
  std::string question_raw;
  std::vector<std::string> question;               // tokens
  std::array<std::string, 4> choices_raw;
  std::array<std::vector<std::string>, 4> choices;  // tokens
  int correct_index = 0;
};

inline Instance parse_instance(const nlohmann::json& rec) {
  Instance inst;
  inst.id = rec.at("id").get<std::string>();
  inst.image_id = rec.at("image_id").get<std::string>();
  inst.type = parse_question_type(rec.at("type").get<std::string>());
  inst.question_raw = rec.at("question").get<std::string>();
  inst.question = tokenize(inst.question_raw);
  if (inst.question.empty())
    throw FormatError("question tokenizes to nothing");
  const auto& choices = rec.at("choices");
  if (!choices.is_array() || choices.size() != 4)
    throw FormatError("expected exactly 4 choices, got " +
                      std::to_string(choices.size()));
  for (int i = 0; i < 4; ++i) {
    inst.choices_raw[i] = choices[i].get<std::string>();
    inst.choices[i] = tokenize(inst.choices_raw[i]);
  }
  inst.correct_index = rec.at("answer_index").get<int>();
  if (inst.correct_index < 0 || inst.correct_index > 3)
    throw FormatError("answer_index out of range: " +
                      std::to_string(inst.correct_index));
  return inst;
}

/// Newline-delimited JSON records, one instance per line.
inline std::vector<Instance> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset file: " + path);
  std::vector<Instance> out;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(parse_instance(nlohmann::json::parse(line)));
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
    if (!seen_ids.insert(out.back().id).second)
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": duplicate id '" + out.back().id + "'");
  }
  return out;
}

/// Counts every token occurrence in questions and all four choices.
inline std::unordered_map<std::string, std::size_t> count_word_frequencies(
    const std::vector<Instance>& dataset) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const Instance& inst : dataset) {
    for (const std::string& w : inst.question) ++counts[w];
    for (const auto& choice : inst.choices)
      for (const std::string& w : choice) ++counts[w];
  }
  return counts;
}

/// Draws two disjoint random word sets from the pool of words occurring
/// strictly fewer than `threshold` times. When sizes are not given the
/// whole eligible pool is consumed, split 50/50 (val gets the odd word).
inline std::pair<std::set<std::string>, std::set<std::string>>
select_heldout_words(
    const std::unordered_map<std::string, std::size_t>& counts,
    std::size_t threshold, std::optional<std::pair<std::size_t, std::size_t>> sizes,
    Rng& rng) {
  std::vector<std::string> pool;
  for (const auto& [word, count] : counts)
    if (count < threshold) pool.push_back(word);
  std::sort(pool.begin(), pool.end());

  std::size_t n_val, n_test;
  if (sizes) {
    n_val = sizes->first;
    n_test = sizes->second;
  } else {
    n_val = (pool.size() + 1) / 2;
    n_test = pool.size() - n_val;
  }
  if (pool.size() < n_val + n_test)
    throw ConfigError("held-out pool too small: " +
                      std::to_string(pool.size()) + " words below threshold, " +
                      std::to_string(n_val + n_test) + " requested");
  rng.shuffle(pool);
  std::pair<std::set<std::string>, std::set<std::string>> out;
  for (std::size_t i = 0; i < n_val; ++i) out.first.insert(pool[i]);
  for (std::size_t i = n_val; i < n_val + n_test; ++i)
    out.second.insert(pool[i]);
  return out;
}

struct ZsFlags {
  bool zs_in_question = false;
  bool zs_in_correct = false;
  bool zs_in_other = false;
  bool any() const { return zs_in_question || zs_in_correct || zs_in_other; }
  bool operator==(const ZsFlags&) const = default;
};

/// Per-instance unseen-word locations relative to one held-out set.
inline ZsFlags annotate(const Instance& inst,
                        const std::set<std::string>& heldout) {
  auto hits = [&heldout](const std::vector<std::string>& words) {
    for (const std::string& w : words)
      if (heldout.count(w)) return true;
    return false;
  };
  ZsFlags flags;
  flags.zs_in_question = hits(inst.question);
  flags.zs_in_correct = hits(inst.choices[inst.correct_index]);
  for (int i = 0; i < 4; ++i) {
    if (i == inst.correct_index) continue;
    if (hits(inst.choices[i])) {
      flags.zs_in_other = true;
      break;
    }
  }
  return flags;
}

struct ZeroShotSplits {
  std::vector<Instance> train, val, test;
  std::set<std::string> heldout_val, heldout_test;
  std::unordered_map<std::string, ZsFlags> annotations;  // val/test ids only
  std::size_t dropped_image_rule = 0;
  std::size_t dual_membership = 0;  // held words from both sets; routed to test

  const ZsFlags& flags_of(const std::string& id) const {
    auto it = annotations.find(id);
    if (it == annotations.end())
      throw LookupError("no annotation for instance '" + id + "'");
    return it->second;
  }
};

/// Routing rule: test wins over val when an instance touches both held-out
/// sets; train instances sharing an image with val/test are dropped.
inline ZeroShotSplits build_splits(const std::vector<Instance>& dataset,
                                   std::set<std::string> heldout_val,
                                   std::set<std::string> heldout_test) {
  for (const std::string& w : heldout_val)
    if (heldout_test.count(w))
      throw ConfigError("held-out sets must be disjoint; both contain '" + w +
                        "'");
  ZeroShotSplits splits;
  splits.heldout_val = std::move(heldout_val);
  splits.heldout_test = std::move(heldout_test);

  auto touches = [](const Instance& inst, const std::set<std::string>& set) {
    for (const std::string& w : inst.question)
      if (set.count(w)) return true;
    for (const auto& choice : inst.choices)
      for (const std::string& w : choice)
        if (set.count(w)) return true;
    return false;
  };

  std::vector<const Instance*> train_candidates;
  std::unordered_set<std::string> eval_images;
  for (const Instance& inst : dataset) {
    bool in_test = touches(inst, splits.heldout_test);
    bool in_val = touches(inst, splits.heldout_val);
    if (in_test) {
      if (in_val) ++splits.dual_membership;
      splits.test.push_back(inst);
      eval_images.insert(inst.image_id);
    } else if (in_val) {
      splits.val.push_back(inst);
      eval_images.insert(inst.image_id);
    } else {
      train_candidates.push_back(&inst);
    }
  }
  for (const Instance* inst : train_candidates) {
    if (eval_images.count(inst->image_id))
      ++splits.dropped_image_rule;
    else
      splits.train.push_back(*inst);
  }

  if (splits.train.empty()) throw StateError("empty split: train");
  if (splits.val.empty()) throw StateError("empty split: val");
  if (splits.test.empty()) throw StateError("empty split: test");

  for (const Instance& inst : splits.val)
    splits.annotations.emplace(inst.id, annotate(inst, splits.heldout_val));
  for (const Instance& inst : splits.test)
    splits.annotations.emplace(inst.id, annotate(inst, splits.heldout_test));
  return splits;
}

// ---------------------------------------------------------------------------
// Statistics (Table-1-style rows)

struct SplitStats {
  std::string name;
  std::size_t n_questions = 0;
  std::size_t n_images = 0;
  std::array<std::size_t, 6> type_counts{};  // indexed as kQuestionTypes
  std::size_t n_heldout_words = 0;
  std::size_t n_zs_any = 0;
  std::size_t n_zs_question = 0;
  std::size_t n_zs_correct = 0;
  std::size_t n_zs_other = 0;
};

struct SplitStatistics {
  std::array<SplitStats, 3> splits;  // train, val, test
  std::size_t dropped_image_rule = 0;
  std::size_t dual_membership = 0;
};

inline SplitStats compute_split_stats(
    const std::string& name, const std::vector<Instance>& instances,
    const std::set<std::string>* heldout,
    const std::unordered_map<std::string, ZsFlags>* annotations) {
  SplitStats s;
  s.name = name;
  s.n_questions = instances.size();
  std::unordered_set<std::string> images;
  for (const Instance& inst : instances) {
    images.insert(inst.image_id);
    ++s.type_counts[static_cast<std::size_t>(inst.type)];
    if (annotations) {
      const ZsFlags& f = annotations->at(inst.id);
      if (f.any()) ++s.n_zs_any;
      if (f.zs_in_question) ++s.n_zs_question;
      if (f.zs_in_correct) ++s.n_zs_correct;
      if (f.zs_in_other) ++s.n_zs_other;
    }
  }
  s.n_images = images.size();
  s.n_heldout_words = heldout ? heldout->size() : 0;
  return s;
}

inline SplitStatistics split_statistics(const ZeroShotSplits& splits) {
  SplitStatistics stats;
  stats.splits[0] = compute_split_stats("train", splits.train, nullptr, nullptr);
  stats.splits[1] = compute_split_stats("val", splits.val, &splits.heldout_val,
                                        &splits.annotations);
  stats.splits[2] = compute_split_stats("test", splits.test,
                                        &splits.heldout_test,
                                        &splits.annotations);
  stats.dropped_image_rule = splits.dropped_image_rule;
  stats.dual_membership = splits.dual_membership;
  return stats;
}

/// Percentage with 1 decimal, matching the table formatting of reports.
inline std::string format_pct(std::size_t part, std::size_t whole) {
  double pct = whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) /
                                       static_cast<double>(whole);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", pct);
  return buf;
}

inline std::string format_statistics(const SplitStatistics& stats) {
  std::ostringstream out;
  auto row = [&out](const std::string& label, const std::string& a,
                    const std::string& b, const std::string& c) {
    out << "  " << label;
    for (std::size_t i = label.size(); i < 34; ++i) out << ' ';
    auto cell = [&out](const std::string& v) {
      for (std::size_t i = v.size(); i < 16; ++i) out << ' ';
      out << v;
    };
    cell(a);
    cell(b);
    cell(c);
    out << "\n";
  };
  const SplitStats& tr = stats.splits[0];
  const SplitStats& va = stats.splits[1];
  const SplitStats& te = stats.splits[2];
  auto n3 = [](std::size_t v) { return std::to_string(v); };
  auto count_pct = [](std::size_t part, std::size_t whole) {
    return std::to_string(part) + " (" + format_pct(part, whole) + ")";
  };

  out << "Split statistics\n";
  row("", "train", "val", "test");
  row("questions", n3(tr.n_questions), n3(va.n_questions), n3(te.n_questions));
  row("images", n3(tr.n_images), n3(va.n_images), n3(te.n_images));
  for (std::size_t t = 0; t < kQuestionTypes.size(); ++t) {
    row(std::string("type ") + to_string(kQuestionTypes[t]) + " (%)",
        format_pct(tr.type_counts[t], tr.n_questions),
        format_pct(va.type_counts[t], va.n_questions),
        format_pct(te.type_counts[t], te.n_questions));
  }
  row("unseen words", n3(tr.n_heldout_words), n3(va.n_heldout_words),
      n3(te.n_heldout_words));
  row("questions w/ unseen words (%)", count_pct(0, tr.n_questions),
      count_pct(va.n_zs_any, va.n_questions),
      count_pct(te.n_zs_any, te.n_questions));
  row("... in question (%)", count_pct(0, tr.n_questions),
      count_pct(va.n_zs_question, va.n_questions),
      count_pct(te.n_zs_question, te.n_questions));
  row("... in correct answer (%)", count_pct(0, tr.n_questions),
      count_pct(va.n_zs_correct, va.n_questions),
      count_pct(te.n_zs_correct, te.n_questions));
  row("... in other answers (%)", count_pct(0, tr.n_questions),
      count_pct(va.n_zs_other, va.n_questions),
      count_pct(te.n_zs_other, te.n_questions));
  out << "  dropped by image rule: " << stats.dropped_image_rule << "\n";
  out << "  dual-membership instances (routed to test): "
      << stats.dual_membership << "\n";
  return out.str();
}

inline nlohmann::json statistics_json(const SplitStatistics& stats) {
  nlohmann::json out;
  for (const SplitStats& s : stats.splits) {
    nlohmann::json j;
    j["questions"] = s.n_questions;
    j["images"] = s.n_images;
    for (std::size_t t = 0; t < kQuestionTypes.size(); ++t)
      j["type_counts"][to_string(kQuestionTypes[t])] = s.type_counts[t];
    j["unseen_words"] = s.n_heldout_words;
    j["zs_any"] = s.n_zs_any;
    j["zs_in_question"] = s.n_zs_question;
    j["zs_in_correct"] = s.n_zs_correct;
    j["zs_in_other"] = s.n_zs_other;
    out[s.name] = j;
  }
  out["dropped_image_rule"] = stats.dropped_image_rule;
  out["dual_membership"] = stats.dual_membership;
  return out;
}

// ---------------------------------------------------------------------------
// Split files: three id lists plus one sidecar with held-out words and flags.

inline void write_lines(const std::string& path,
                        const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write file: " + path);
  for (const std::string& line : lines) out << line << "\n";
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

inline void save_splits(const ZeroShotSplits& splits, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto ids_of = [](const std::vector<Instance>& v) {
    std::vector<std::string> ids;
    ids.reserve(v.size());
    for (const Instance& inst : v) ids.push_back(inst.id);
    return ids;
  };
  write_lines(dir + "/train.ids", ids_of(splits.train));
  write_lines(dir + "/val.ids", ids_of(splits.val));
  write_lines(dir + "/test.ids", ids_of(splits.test));

  nlohmann::json side;
  side["heldout_val"] = std::vector<std::string>(splits.heldout_val.begin(),
                                                 splits.heldout_val.end());
  side["heldout_test"] = std::vector<std::string>(splits.heldout_test.begin(),
                                                  splits.heldout_test.end());
  side["dropped_image_rule"] = splits.dropped_image_rule;
  side["dual_membership"] = splits.dual_membership;
  nlohmann::json ann = nlohmann::json::array();
  auto push_flags = [&ann, &splits](const std::vector<Instance>& v) {
    for (const Instance& inst : v) {
      const ZsFlags& f = splits.annotations.at(inst.id);
      ann.push_back({{"id", inst.id},
                     {"zs_in_question", f.zs_in_question},
                     {"zs_in_correct", f.zs_in_correct},
                     {"zs_in_other", f.zs_in_other}});
    }
  };
  push_flags(splits.val);
  push_flags(splits.test);
  side["annotations"] = std::move(ann);

  std::ofstream out(dir + "/sidecar.json", std::ios::binary);
  if (!out) throw StateError("cannot write file: " + dir + "/sidecar.json");
  out << side.dump(2) << "\n";
}

inline ZeroShotSplits load_splits(const std::vector<Instance>& dataset,
                                  const std::string& dir) {
  std::unordered_map<std::string, const Instance*> by_id;
  for (const Instance& inst : dataset) by_id.emplace(inst.id, &inst);
  auto instances_of = [&by_id, &dir](const std::string& file) {
    std::vector<Instance> out;
    for (const std::string& id : read_lines(dir + "/" + file)) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw FormatError(dir + "/" + file + ": unknown instance id '" + id +
                          "'");
      out.push_back(*it->second);
    }
    return out;
  };
  ZeroShotSplits splits;
  splits.train = instances_of("train.ids");
  splits.val = instances_of("val.ids");
  splits.test = instances_of("test.ids");

  std::ifstream in(dir + "/sidecar.json");
  if (!in) throw FormatError("cannot open file: " + dir + "/sidecar.json");
  nlohmann::json side = nlohmann::json::parse(in);
  for (const auto& w : side.at("heldout_val"))
    splits.heldout_val.insert(w.get<std::string>());
  for (const auto& w : side.at("heldout_test"))
    splits.heldout_test.insert(w.get<std::string>());
  splits.dropped_image_rule = side.at("dropped_image_rule").get<std::size_t>();
  splits.dual_membership = side.at("dual_membership").get<std::size_t>();
  for (const auto& rec : side.at("annotations")) {
    ZsFlags f;
    f.zs_in_question = rec.at("zs_in_question").get<bool>();
    f.zs_in_correct = rec.at("zs_in_correct").get<bool>();
    f.zs_in_other = rec.at("zs_in_other").get<bool>();
    splits.annotations.emplace(rec.at("id").get<std::string>(), f);
  }
  return splits;
}

}  // namespace zsvqa
