// Command-line front end for the zero-shot VQA toolkit.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "zsvqa/eval.hpp"
#include "zsvqa/synthetic.hpp"

namespace {

using nlohmann::json;

void print_summary(const json& summary) {
  std::cout << summary.dump() << std::endl;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw zsvqa::StateError("cannot write file: " + path);
  out << text;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty())
    std::cout << text;
  else
    write_text(path, text);
}

struct DataArgs {
  std::string dataset;
  std::string features;
  std::string detections;
  std::string exemplars;
  std::string glove;
  std::string splits_dir;
};

void add_data_flags(CLI::App* cmd, DataArgs& d, bool need_features) {
  cmd->add_option("--dataset", d.dataset, "instances (JSONL)")->required();
  auto* feat = cmd->add_option("--features", d.features, "image features (JSONL)");
  if (need_features) feat->required();
  cmd->add_option("--detections", d.detections, "object detections (JSONL)");
  cmd->add_option("--exemplars", d.exemplars, "exemplar image features (JSONL)");
  cmd->add_option("--glove", d.glove, "pretrained word vectors (text)");
  cmd->add_option("--splits", d.splits_dir, "split directory")->required();
}

zsvqa::FeatureStores load_stores(const DataArgs& d) {
  zsvqa::FeatureStores stores;
  if (!d.features.empty()) stores.images = zsvqa::load_image_features(d.features);
  if (!d.detections.empty())
    stores.detections = zsvqa::load_detections(d.detections);
  if (!d.exemplars.empty()) stores.exemplars = zsvqa::load_exemplars(d.exemplars);
  return stores;
}

struct ModelArgs {
  std::string mode = "multiplicative";
  int h = 64;
  int h2 = 64;
  int dim = 64;
  bool share_qa = true;
  std::string stem = "identity";
  double finetune_lr = 1.0;
  bool question_visual = false;
  bool answer_visual = false;
  int exemplar_k = 1;
  bool use_detections = false;
  std::string detection_mode = "learned";
  double detection_threshold = 0.5;
};

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--mode", m.mode,
                  "interaction: multiplicative|order|order_reversed");
  cmd->add_option("--hidden", m.h, "first hidden width");
  cmd->add_option("--hidden2", m.h2, "second hidden width");
  cmd->add_option("--dim", m.dim, "learned embedding dimension");
  cmd->add_flag("--share-qa,!--no-share-qa", m.share_qa,
                "share question/answer embeddings");
  cmd->add_option("--stem", m.stem, "stemming: identity|porter");
  cmd->add_option("--finetune-lr", m.finetune_lr,
                  "relative learning rate for pretrained embeddings");
  cmd->add_flag("--question-visual", m.question_visual,
                "append exemplar visual embedding to questions");
  cmd->add_flag("--answer-visual", m.answer_visual,
                "append exemplar visual embedding to answers");
  cmd->add_option("--exemplar-k", m.exemplar_k, "exemplars per word");
  cmd->add_flag("--use-detections", m.use_detections,
                "append detection bag-of-words to the image");
  cmd->add_option("--detection-mode", m.detection_mode,
                  "detection embeddings: learned|semantic");
  cmd->add_option("--detection-threshold", m.detection_threshold,
                  "minimum detection score");
}

std::vector<std::string> dataset_vocab(
    const std::vector<zsvqa::Instance>& instances,
    const zsvqa::FeatureStores& stores) {
  std::set<std::string> words;
  for (const auto& [word, count] : zsvqa::count_word_frequencies(instances))
    words.insert(word);
  for (const auto& [image, dets] : stores.detections.by_image)
    for (const zsvqa::Detection& det : dets)
      for (const std::string& w : zsvqa::tokenize(det.class_name))
        words.insert(w);
  return {words.begin(), words.end()};
}

zsvqa::ModelBuildConfig build_config(const ModelArgs& m, const DataArgs& d,
                                     const std::vector<zsvqa::Instance>& instances,
                                     const zsvqa::FeatureStores& stores,
                                     json& summary) {
  zsvqa::ModelBuildConfig mc;
  mc.interaction = zsvqa::parse_interaction(m.mode);
  mc.h = m.h;
  mc.h2 = m.h2;
  mc.learned_dim = m.dim;
  mc.share_qa = m.share_qa;
  mc.stem_algorithm = zsvqa::parse_stem_algorithm(m.stem);
  mc.finetune_lr = m.finetune_lr;
  mc.features.question_visual = m.question_visual;
  mc.features.answer_visual = m.answer_visual;
  mc.features.exemplar_k = m.exemplar_k;
  mc.features.use_detections = m.use_detections;
  mc.features.detection_mode = zsvqa::parse_detection_mode(m.detection_mode);
  mc.features.detection_threshold = m.detection_threshold;
  if (!d.glove.empty()) {
    zsvqa::GloveLoadResult glove =
        zsvqa::load_pretrained(d.glove, dataset_vocab(instances, stores));
    summary["glove_words"] = glove.table.keys.size();
    mc.pretrained = std::move(glove.table);
  }
  return mc;
}

struct TrainArgs {
  int batch_size = 512;
  int epochs = 20;
  int patience = 5;
  double aug_ratio = 0.0;
  std::string mask = "none";
  double rho = 0.95;
  double epsilon = 1e-6;
  double train_fraction = 1.0;
  bool eval_on_test = false;
};

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--batch-size", t.batch_size, "mini-batch size");
  cmd->add_option("--epochs", t.epochs, "maximum epochs");
  cmd->add_option("--patience", t.patience, "early-stopping patience");
  cmd->add_option("--aug-ratio", t.aug_ratio,
                  "negative answer augmentation ratio");
  cmd->add_option("--mask", t.mask, "input masking: none|q|i|qi");
  cmd->add_option("--rho", t.rho, "Adadelta decay rate");
  cmd->add_option("--epsilon", t.epsilon, "Adadelta conditioning constant");
  cmd->add_option("--train-fraction", t.train_fraction,
                  "random fraction of the training split to use");
  cmd->add_flag("--eval-on-test", t.eval_on_test,
                "report on the test split instead of val");
}

zsvqa::ExperimentSetup build_setup(const ModelArgs& m, const TrainArgs& t,
                                   const DataArgs& d,
                                   const std::vector<zsvqa::Instance>& instances,
                                   const zsvqa::FeatureStores& stores,
                                   std::uint64_t seed, json& summary) {
  zsvqa::ExperimentSetup setup;
  setup.model = build_config(m, d, instances, stores, summary);
  setup.train.batch_size = t.batch_size;
  setup.train.max_epochs = t.epochs;
  setup.train.patience = t.patience;
  setup.train.aug_ratio = t.aug_ratio;
  setup.train.finetune_lr = m.finetune_lr;
  setup.train.mask = zsvqa::parse_mask(t.mask);
  setup.train.interaction = setup.model.interaction;
  setup.train.seed = seed;
  setup.train.rho = t.rho;
  setup.train.epsilon = t.epsilon;
  setup.train_fraction = t.train_fraction;
  setup.eval_on_test = t.eval_on_test;
  return setup;
}

std::string render_report(const zsvqa::EvalReport& report,
                          const std::string& format) {
  if (format == "text") return zsvqa::report_text(report);
  if (format == "csv") return zsvqa::report_csv(report);
  if (format == "json") return zsvqa::report_json(report).dump(2) + "\n";
  throw zsvqa::ConfigError("unknown report format: '" + format +
                           "' (expected text, csv, or json)");
}

int run_gradcheck(int dims, const std::string& mode, double eps,
                  std::uint64_t seed) {
  if (dims < 2) throw zsvqa::ConfigError("--dims must be at least 2");
  zsvqa::AssociativeOptions gen;
  gen.n_questions = 3;
  gen.n_concepts = 5;
  gen.cnn_dim = dims;
  gen.seed = seed + 1;
  zsvqa::SyntheticData data = zsvqa::make_associative(gen);
  zsvqa::ModelBuildConfig mc;
  mc.interaction = zsvqa::parse_interaction(mode);
  mc.h = dims;
  mc.h2 = dims;
  mc.learned_dim = dims;

  double max_rel = -1.0;
  std::string worst;
  int attempts = 0;
  for (int attempt = 0; attempt < 500; ++attempt) {
    zsvqa::Rng rng(seed * 1000 + static_cast<std::uint64_t>(attempt));
    zsvqa::ModelParams params =
        zsvqa::build_model(data.instances, mc, data.stores, rng);
    // Shift relu pre-activations away from their kinks so central
    // differences stay on one side of every hinge.
    params.b1.array() += 0.3;
    params.b2.array() += 0.3;
    params.b3.array() += 0.3;
    params.b4.array() += 0.3;
    zsvqa::StemMap stems;
    stems.algorithm = params.stem_algorithm;
    std::vector<zsvqa::PreparedInstance> batch;
    for (const zsvqa::Instance& inst : data.instances)
      batch.push_back(zsvqa::prepare_for(inst, params, stems, data.stores));
    zsvqa::Graph g;
    zsvqa::ModelSlots slots = zsvqa::register_model_slots(g, params);
    zsvqa::build_batch_loss(g, slots, params, batch);
    g.forward();
    attempts = attempt + 1;
    if (g.min_kink_distance() < 20.0 * eps) continue;
    zsvqa::GradCheckResult res = zsvqa::grad_check(g, eps);
    max_rel = res.max_rel_error;
    worst = res.worst;
    break;
  }
  if (max_rel < 0.0)
    throw zsvqa::StateError(
        "no kink-free configuration found; try a different --seed");
  std::printf("max relative error %.6e (mode=%s, eps=%g, worst=%s)\n", max_rel,
              mode.c_str(), eps, worst.c_str());
  bool ok = max_rel < 1e-4;
  json summary{{"command", "gradcheck"}, {"mode", mode},
               {"dims", dims},           {"eps", eps},
               {"attempts", attempts},   {"max_rel_error", max_rel},
               {"ok", ok}};
  print_summary(summary);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot VQA: splits, training, evaluation, sweeps"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_kind = "corpus";
  std::string synth_out;
  std::size_t synth_n = 5000, synth_concepts = 10;
  int synth_cnn = 32, synth_glove = 16;
  std::uint64_t synth_seed = 1;
  synth->add_option("--kind", synth_kind, "corpus|associative");
  synth->add_option("--n", synth_n, "number of instances");
  synth->add_option("--concepts", synth_concepts,
                    "concept count (associative only)");
  synth->add_option("--cnn-dim", synth_cnn, "image feature dimension");
  synth->add_option("--glove-dim", synth_glove, "word vector dimension");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // split
  auto* split = app.add_subcommand("split", "build zero-shot splits");
  std::string split_dataset, split_out;
  std::size_t split_threshold = 20;
  std::int64_t split_val_words = -1, split_test_words = -1;
  std::uint64_t split_seed = 0;
  split->add_option("--dataset", split_dataset, "instances (JSONL)")->required();
  split->add_option("--threshold", split_threshold,
                    "words with count < threshold are held out");
  split->add_option("--val-words", split_val_words,
                    "held-out word count for val (default: half the pool)");
  split->add_option("--test-words", split_test_words,
                    "held-out word count for test (default: half the pool)");
  split->add_option("--seed", split_seed, "shuffle seed");
  split->add_option("--out", split_out, "output directory")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "split statistics table");
  std::string stats_dataset, stats_splits, stats_out;
  std::uint64_t stats_seed = 0;
  bool stats_json_fmt = false;
  stats->add_option("--dataset", stats_dataset, "instances (JSONL)")->required();
  stats->add_option("--splits", stats_splits, "split directory")->required();
  stats->add_option("--out", stats_out, "write the table here (default: stdout)");
  stats->add_flag("--json", stats_json_fmt, "emit JSON instead of text");
  stats->add_option("--seed", stats_seed, "accepted for interface uniformity");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a scorer");
  DataArgs train_data;
  ModelArgs train_model;
  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  std::string ckpt_out, history_out, train_report_out;
  std::string train_report_format = "text";
  add_data_flags(train_cmd, train_data, true);
  add_model_flags(train_cmd, train_model);
  add_train_flags(train_cmd, train_args);
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--checkpoint-out", ckpt_out, "model checkpoint path");
  train_cmd->add_option("--history-out", history_out,
                        "per-epoch history path (JSONL)");
  train_cmd->add_option("--report-out", train_report_out,
                        "evaluation report path");
  train_cmd->add_option("--report-format", train_report_format,
                        "report format: text|csv|json");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  DataArgs eval_data;
  std::string eval_ckpt, eval_split = "test", eval_report_out;
  std::string eval_format = "text";
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  add_data_flags(eval_cmd, eval_data, true);
  eval_cmd->add_option("--split", eval_split, "which split: train|val|test");
  eval_cmd->add_option("--report-out", eval_report_out, "report path");
  eval_cmd->add_option("--format", eval_format, "report format: text|csv|json");
  eval_cmd->add_option("--seed", eval_seed, "accepted for interface uniformity");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check");
  int grad_dims = 8;
  std::string grad_mode = "multiplicative";
  double grad_eps = 1e-4;
  std::uint64_t grad_seed = 1;
  grad_cmd->add_option("--dims", grad_dims, "layer and embedding width");
  grad_cmd->add_option("--mode", grad_mode,
                       "interaction: multiplicative|order|order_reversed");
  grad_cmd->add_option("--eps", grad_eps, "central-difference step");
  grad_cmd->add_option("--seed", grad_seed, "configuration seed");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "one-axis experiment sweep");
  DataArgs sweep_data;
  ModelArgs sweep_model;
  TrainArgs sweep_args;
  std::uint64_t sweep_seed = 0;
  std::string sweep_axis, sweep_values, sweep_csv_out, sweep_json_out;
  add_data_flags(sweep_cmd, sweep_data, true);
  add_model_flags(sweep_cmd, sweep_model);
  add_train_flags(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--axis", sweep_axis, "swept axis")->required();
  sweep_cmd->add_option("--values", sweep_values,
                        "comma-separated axis values")->required();
  sweep_cmd->add_option("--seed", sweep_seed, "base seed (run i uses seed+i)");
  sweep_cmd->add_option("--csv-out", sweep_csv_out, "sweep curve (CSV)");
  sweep_cmd->add_option("--json-out", sweep_json_out, "sweep table (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (app.got_subcommand(synth)) {
      zsvqa::SyntheticData data;
      if (synth_kind == "corpus") {
        zsvqa::CorpusOptions opt;
        opt.n_instances = synth_n;
        opt.cnn_dim = synth_cnn;
        opt.glove_dim = synth_glove;
        opt.seed = synth_seed;
        data = zsvqa::make_corpus(opt);
      } else if (synth_kind == "associative") {
        zsvqa::AssociativeOptions opt;
        opt.n_questions = synth_n;
        opt.n_concepts = synth_concepts;
        opt.cnn_dim = synth_cnn;
        opt.glove_dim = synth_glove;
        opt.seed = synth_seed;
        data = zsvqa::make_associative(opt);
      } else {
        throw zsvqa::ConfigError("unknown --kind: '" + synth_kind +
                                 "' (expected corpus or associative)");
      }
      zsvqa::save_synthetic(data, synth_out);
      print_summary({{"command", "synth"},
                     {"kind", synth_kind},
                     {"instances", data.instances.size()},
                     {"images", data.stores.images.features.size()},
                     {"out", synth_out}});
    } else if (app.got_subcommand(split)) {
      auto instances = zsvqa::load_dataset(split_dataset);
      auto counts = zsvqa::count_word_frequencies(instances);
      if ((split_val_words < 0) != (split_test_words < 0))
        throw zsvqa::ConfigError(
            "--val-words and --test-words must be given together");
      std::optional<std::pair<std::size_t, std::size_t>> sizes;
      if (split_val_words >= 0)
        sizes = {static_cast<std::size_t>(split_val_words),
                 static_cast<std::size_t>(split_test_words)};
      zsvqa::Rng rng(split_seed);
      auto heldout =
          zsvqa::select_heldout_words(counts, split_threshold, sizes, rng);
      auto splits =
          zsvqa::build_splits(instances, heldout.first, heldout.second);
      zsvqa::save_splits(splits, split_out);
      print_summary({{"command", "split"},
                     {"train", splits.train.size()},
                     {"val", splits.val.size()},
                     {"test", splits.test.size()},
                     {"heldout_val_words", splits.heldout_val.size()},
                     {"heldout_test_words", splits.heldout_test.size()},
                     {"dropped_image_rule", splits.dropped_image_rule},
                     {"dual_membership", splits.dual_membership},
                     {"out", split_out}});
    } else if (app.got_subcommand(stats)) {
      auto instances = zsvqa::load_dataset(stats_dataset);
      auto splits = zsvqa::load_splits(instances, stats_splits);
      auto table = zsvqa::split_statistics(splits);
      std::string text = stats_json_fmt
                             ? zsvqa::statistics_json(table).dump(2) + "\n"
                             : zsvqa::format_statistics(table);
      emit(stats_out, text);
      print_summary({{"command", "stats"},
                     {"train", splits.train.size()},
                     {"val", splits.val.size()},
                     {"test", splits.test.size()}});
    } else if (app.got_subcommand(train_cmd)) {
      json summary{{"command", "train"}};
      auto instances = zsvqa::load_dataset(train_data.dataset);
      auto splits = zsvqa::load_splits(instances, train_data.splits_dir);
      auto stores = load_stores(train_data);
      auto setup = build_setup(train_model, train_args, train_data, instances,
                               stores, train_seed, summary);
      zsvqa::ExperimentResult result =
          zsvqa::run_experiment(setup, splits, stores);
      if (!ckpt_out.empty()) zsvqa::save_checkpoint(result.params, ckpt_out);
      if (!history_out.empty()) zsvqa::write_history(result.history, history_out);
      if (!train_report_out.empty())
        write_text(train_report_out,
                   render_report(result.report, train_report_format));
      summary["epochs_run"] = result.history.size();
      summary["best_epoch"] = result.best_epoch;
      summary["best_val_accuracy"] = result.best_val_accuracy;
      summary["eval_split"] = setup.eval_on_test ? "test" : "val";
      summary["accuracy_all"] = result.report.all.accuracy();
      if (!ckpt_out.empty()) summary["checkpoint"] = ckpt_out;
      print_summary(summary);
    } else if (app.got_subcommand(eval_cmd)) {
      auto params = zsvqa::load_checkpoint(eval_ckpt);
      auto instances = zsvqa::load_dataset(eval_data.dataset);
      auto splits = zsvqa::load_splits(instances, eval_data.splits_dir);
      auto stores = load_stores(eval_data);
      const std::vector<zsvqa::Instance>* subset = nullptr;
      if (eval_split == "train")
        subset = &splits.train;
      else if (eval_split == "val")
        subset = &splits.val;
      else if (eval_split == "test")
        subset = &splits.test;
      else
        throw zsvqa::ConfigError("unknown --split: '" + eval_split +
                                 "' (expected train, val, or test)");
      zsvqa::EvalReport report;
      if (eval_split == "train") {
        // The train split carries no zero-shot annotations by construction.
        for (const zsvqa::Instance& inst : splits.train)
          splits.annotations.emplace(inst.id, zsvqa::ZsFlags{});
      }
      report = zsvqa::evaluate(params, *subset, splits.annotations, stores);
      emit(eval_report_out, render_report(report, eval_format));
      print_summary({{"command", "eval"},
                     {"split", eval_split},
                     {"count", report.all.count},
                     {"accuracy_all", report.all.accuracy()},
                     {"accuracy_zs_question", report.zs_question.accuracy()},
                     {"accuracy_zs_answer", report.zs_answer.accuracy()},
                     {"accuracy_zs_choices", report.zs_choices.accuracy()}});
    } else if (app.got_subcommand(grad_cmd)) {
      return run_gradcheck(grad_dims, grad_mode, grad_eps, grad_seed);
    } else if (app.got_subcommand(sweep_cmd)) {
      json summary{{"command", "sweep"}};
      auto instances = zsvqa::load_dataset(sweep_data.dataset);
      auto splits = zsvqa::load_splits(instances, sweep_data.splits_dir);
      auto stores = load_stores(sweep_data);
      zsvqa::SweepSpec spec;
      spec.axis = zsvqa::parse_sweep_axis(sweep_axis);
      for (std::size_t start = 0; start <= sweep_values.size();) {
        std::size_t comma = sweep_values.find(',', start);
        if (comma == std::string::npos) comma = sweep_values.size();
        std::string v = sweep_values.substr(start, comma - start);
        if (!v.empty()) spec.values.push_back(v);
        start = comma + 1;
      }
      spec.base = build_setup(sweep_model, sweep_args, sweep_data, instances,
                              stores, sweep_seed, summary);
      auto rows = zsvqa::run_sweep(spec, splits, stores);
      if (!sweep_csv_out.empty())
        write_text(sweep_csv_out, zsvqa::sweep_csv(spec, rows));
      if (!sweep_json_out.empty())
        write_text(sweep_json_out, zsvqa::sweep_json(spec, rows).dump(2) + "\n");
      std::size_t failed = 0;
      for (const auto& row : rows) failed += row.ok ? 0 : 1;
      summary["axis"] = sweep_axis;
      summary["rows"] = rows.size();
      summary["failed"] = failed;
      print_summary(summary);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
