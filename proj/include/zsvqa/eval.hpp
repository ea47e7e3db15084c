#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsvqa/common.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/features.hpp"
#include "zsvqa/model.hpp"
#include "zsvqa/training.hpp"

namespace zsvqa {

struct SubsetAcc {
  std::size_t count = 0;
  std::size_t correct = 0;

  double accuracy() const {
    return count == 0 ? 0.0
                      : static_cast<double>(correct) /
                            static_cast<double>(count);
  }
  void tally(bool hit) {
    ++count;
    if (hit) ++correct;
  }
};

/// Table-2-style rows: overall accuracy plus the three non-disjoint
/// zero-shot subsets and per-question-type accuracies.
struct EvalReport {
  SubsetAcc all;
  SubsetAcc zs_question;  // instances with an unseen word in the question
  SubsetAcc zs_answer;    // ... in the correct answer
  SubsetAcc zs_choices;   // ... in at least one incorrect answer
  std::map<QuestionType, SubsetAcc> per_type;

  double accuracy_all() const { return all.accuracy(); }
  double accuracy_zs_question() const { return zs_question.accuracy(); }
  double accuracy_zs_answer() const { return zs_answer.accuracy(); }
  double accuracy_zs_choices() const { return zs_choices.accuracy(); }
};

/// Accuracy without subset breakdowns (no annotations required).
inline double accuracy(const ModelParams& params,
                       const std::vector<Instance>& instances,
                       const FeatureStores& stores) {
  if (instances.empty()) throw StateError("empty split: nothing to evaluate");
  ModelParams view = params;  // lazy class rows stay local
  StemMap stem_map{params.stem_algorithm};
  std::size_t correct = 0;
  for (const Instance& inst : instances) {
    PreparedInstance prep = prepare_for(inst, view, stem_map, stores);
    if (predict_prepared(view, prep) == inst.correct_index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

inline EvalReport evaluate(
    const ModelParams& params, const std::vector<Instance>& instances,
    const std::unordered_map<std::string, ZsFlags>& annotations,
    const FeatureStores& stores) {
  std::string missing;
  for (const Instance& inst : instances)
    if (!stores.images.features.count(inst.image_id)) {
      if (!missing.empty()) missing += ", ";
      missing += "'" + inst.image_id + "'";
    }
  if (!missing.empty())
    throw LookupError("missing image features for: " + missing);

  ModelParams view = params;  // lazy class rows stay local
  StemMap stem_map{params.stem_algorithm};
  EvalReport report;
  for (const Instance& inst : instances) {
    auto it = annotations.find(inst.id);
    if (it == annotations.end())
      throw LookupError("no annotation for instance '" + inst.id + "'");
    const ZsFlags& flags = it->second;
    PreparedInstance prep = prepare_for(inst, view, stem_map, stores);
    bool hit = predict_prepared(view, prep) == inst.correct_index;
    report.all.tally(hit);
    if (flags.zs_in_question) report.zs_question.tally(hit);
    if (flags.zs_in_correct) report.zs_answer.tally(hit);
    if (flags.zs_in_other) report.zs_choices.tally(hit);
    report.per_type[inst.type].tally(hit);
  }
  return report;
}

inline std::string format_accuracy(const SubsetAcc& acc) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.1f (n=%zu)", 100.0 * acc.accuracy(),
                acc.count);
  return buf;
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out << "Accuracy (%)\n";
  auto row = [&out](const std::string& label, const SubsetAcc& acc) {
    out << "  " << label;
    for (std::size_t i = label.size(); i < 24; ++i) out << ' ';
    out << format_accuracy(acc) << "\n";
  };
  row("all", r.all);
  row("zs in question", r.zs_question);
  row("zs in correct answer", r.zs_answer);
  row("zs in other answers", r.zs_choices);
  for (const auto& [type, acc] : r.per_type)
    row(std::string("type ") + to_string(type), acc);
  return out.str();
}

inline std::string report_csv_header() {
  return "subset,count,correct,accuracy_pct";
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << report_csv_header() << "\n";
  auto row = [&out](const std::string& name, const SubsetAcc& acc) {
    char pct[16];
    std::snprintf(pct, sizeof(pct), "%.1f", 100.0 * acc.accuracy());
    out << name << "," << acc.count << "," << acc.correct << "," << pct
        << "\n";
  };
  row("all", r.all);
  row("zs_question", r.zs_question);
  row("zs_answer", r.zs_answer);
  row("zs_choices", r.zs_choices);
  for (const auto& [type, acc] : r.per_type)
    row(std::string("type_") + to_string(type), acc);
  return out.str();
}

inline nlohmann::json report_json(const EvalReport& r) {
  auto subset = [](const SubsetAcc& acc) {
    return nlohmann::json{{"count", acc.count},
                          {"correct", acc.correct},
                          {"accuracy", acc.accuracy()}};
  };
  nlohmann::json out;
  out["all"] = subset(r.all);
  out["zs_question"] = subset(r.zs_question);
  out["zs_answer"] = subset(r.zs_answer);
  out["zs_choices"] = subset(r.zs_choices);
  for (const auto& [type, acc] : r.per_type)
    out["per_type"][to_string(type)] = subset(acc);
  return out;
}

// ---------------------------------------------------------------------------
// Experiments and sweeps

/// Everything one seeded training run needs.
struct ExperimentSetup {
  TrainConfig train;
  ModelBuildConfig model;
  double train_fraction = 1.0;
  bool eval_on_test = false;  // default: report on the validation split
};

struct ExperimentResult {
  ModelParams params;
  std::vector<HistoryRow> history;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  EvalReport report;
};

inline ExperimentResult run_experiment(const ExperimentSetup& setup,
                                       const ZeroShotSplits& splits,
                                       const FeatureStores& stores) {
  if (setup.train_fraction <= 0.0 || setup.train_fraction > 1.0)
    throw ConfigError("train_fraction must lie in (0, 1]");
  ModelBuildConfig mc = setup.model;
  mc.interaction = setup.train.interaction;
  mc.finetune_lr = setup.train.finetune_lr;

  ZeroShotSplits working = splits;
  Rng rng(setup.train.seed);
  if (setup.train_fraction < 1.0) {
    rng.shuffle(working.train);
    std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::floor(setup.train_fraction *
                              static_cast<double>(working.train.size()) +
                          0.5)));
    working.train.resize(keep);
  }

  ModelParams params = build_model(working.train, mc, stores, rng);
  TrainResult trained = train(setup.train, working, stores, std::move(params));

  ExperimentResult result;
  result.history = std::move(trained.history);
  result.best_epoch = trained.best_epoch;
  result.best_val_accuracy = trained.best_val_accuracy;
  const std::vector<Instance>& eval_split =
      setup.eval_on_test ? splits.test : splits.val;
  result.report =
      evaluate(trained.best, eval_split, splits.annotations, stores);
  result.params = std::move(trained.best);
  return result;
}

enum class SweepAxis {
  embedding_dim,
  finetune_lr,
  stem_algorithm,
  exemplar_k,
  detection_threshold,
  aug_ratio,
  interaction_mode,
  mask_config,
  train_fraction
};

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "embedding_dim") return SweepAxis::embedding_dim;
  if (s == "finetune_lr") return SweepAxis::finetune_lr;
  if (s == "stem_algorithm") return SweepAxis::stem_algorithm;
  if (s == "exemplar_k") return SweepAxis::exemplar_k;
  if (s == "detection_threshold") return SweepAxis::detection_threshold;
  if (s == "aug_ratio") return SweepAxis::aug_ratio;
  if (s == "interaction_mode") return SweepAxis::interaction_mode;
  if (s == "mask_config") return SweepAxis::mask_config;
  if (s == "train_fraction") return SweepAxis::train_fraction;
  throw ConfigError("unknown sweep axis: '" + s + "'");
}

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::embedding_dim: return "embedding_dim";
    case SweepAxis::finetune_lr: return "finetune_lr";
    case SweepAxis::stem_algorithm: return "stem_algorithm";
    case SweepAxis::exemplar_k: return "exemplar_k";
    case SweepAxis::detection_threshold: return "detection_threshold";
    case SweepAxis::aug_ratio: return "aug_ratio";
    case SweepAxis::interaction_mode: return "interaction_mode";
    case SweepAxis::mask_config: return "mask_config";
    case SweepAxis::train_fraction: return "train_fraction";
  }
  return "?";
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::embedding_dim;
  std::vector<std::string> values;
  ExperimentSetup base;

  void validate() const {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
  }
};

namespace detail {
inline double parse_real(const std::string& v) {
  std::size_t used = 0;
  double x = std::stod(v, &used);
  if (used != v.size()) throw ConfigError("bad numeric value: '" + v + "'");
  return x;
}
inline int parse_int(const std::string& v) {
  std::size_t used = 0;
  int x = std::stoi(v, &used);
  if (used != v.size()) throw ConfigError("bad integer value: '" + v + "'");
  return x;
}
}  // namespace detail

inline ExperimentSetup apply_axis_value(const ExperimentSetup& base,
                                        SweepAxis axis,
                                        const std::string& value) {
  ExperimentSetup setup = base;
  switch (axis) {
    case SweepAxis::embedding_dim:
      if (setup.model.pretrained)
        throw ConfigError(
            "embedding_dim sweeps apply to learned embeddings only");
      setup.model.learned_dim = detail::parse_int(value);
      break;
    case SweepAxis::finetune_lr:
      setup.train.finetune_lr = detail::parse_real(value);
      break;
    case SweepAxis::stem_algorithm:
      setup.model.stem_algorithm = parse_stem_algorithm(value);
      break;
    case SweepAxis::exemplar_k:
      setup.model.features.exemplar_k = detail::parse_int(value);
      break;
    case SweepAxis::detection_threshold:
      setup.model.features.detection_threshold = detail::parse_real(value);
      break;
    case SweepAxis::aug_ratio:
      setup.train.aug_ratio = detail::parse_real(value);
      break;
    case SweepAxis::interaction_mode:
      setup.train.interaction = parse_interaction(value);
      break;
    case SweepAxis::mask_config:
      setup.train.mask = parse_mask(value);
      break;
    case SweepAxis::train_fraction:
      setup.train_fraction = detail::parse_real(value);
      break;
  }
  return setup;
}

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  EvalReport report;
  double best_val_accuracy = 0.0;
  int best_epoch = 0;
};

/// One independent seeded training per value (seed_i = base_seed + i);
/// failures are recorded per row and the sweep continues.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec,
                                       const ZeroShotSplits& splits,
                                       const FeatureStores& stores) {
  spec.validate();
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    SweepRow row;
    row.value = spec.values[i];
    try {
      ExperimentSetup setup =
          apply_axis_value(spec.base, spec.axis, spec.values[i]);
      setup.train.seed = spec.base.train.seed + i;
      ExperimentResult result = run_experiment(setup, splits, stores);
      row.ok = true;
      row.report = std::move(result.report);
      row.best_val_accuracy = result.best_val_accuracy;
      row.best_epoch = result.best_epoch;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_csv(const SweepSpec& spec,
                             const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << to_string(spec.axis)
      << ",status,accuracy_all,accuracy_zs_question,accuracy_zs_answer,"
         "accuracy_zs_choices,best_val_accuracy,best_epoch\n";
  for (const SweepRow& row : rows) {
    out << row.value << ",";
    if (!row.ok) {
      out << "error,,,,,,\n";
      continue;
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "ok,%.1f,%.1f,%.1f,%.1f,%.1f,%d",
                  100.0 * row.report.accuracy_all(),
                  100.0 * row.report.accuracy_zs_question(),
                  100.0 * row.report.accuracy_zs_answer(),
                  100.0 * row.report.accuracy_zs_choices(),
                  100.0 * row.best_val_accuracy, row.best_epoch);
    out << buf << "\n";
  }
  return out.str();
}

inline nlohmann::json sweep_json(const SweepSpec& spec,
                                 const std::vector<SweepRow>& rows) {
  nlohmann::json out;
  out["axis"] = to_string(spec.axis);
  out["rows"] = nlohmann::json::array();
  for (const SweepRow& row : rows) {
    nlohmann::json j;
    j["value"] = row.value;
    j["ok"] = row.ok;
    if (row.ok) {
      j["report"] = report_json(row.report);
      j["best_val_accuracy"] = row.best_val_accuracy;
      j["best_epoch"] = row.best_epoch;
    } else {
      j["error"] = row.error;
    }
    out["rows"].push_back(std::move(j));
  }
  return out;
}

}  // namespace zsvqa
