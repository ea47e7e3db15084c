// Acceptance gate: ten independent checks, one PASS/FAIL line each.
// Exits 0 only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "porter_reference.hpp"
#include "zsvqa/autodiff.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/eval.hpp"
#include "zsvqa/model.hpp"
#include "zsvqa/synthetic.hpp"
#include "zsvqa/textproc.hpp"
#include "zsvqa/training.hpp"

using namespace zsvqa;

namespace {

int g_failures = 0;

void report(int idx, const char* name, bool ok, const std::string& detail) {
  if (!ok) ++g_failures;
  std::printf("%s  %2d. %-26s %s\n", ok ? "PASS" : "FAIL", idx, name,
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* pattern, ...) {
  char buf[256];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return buf;
}

// Mirrors the gradcheck CLI path: tiny associative task, kink-shifted
// biases, resample until every hinge is at least 20*eps away.
double gradcheck_once(Interaction mode, int dims, double eps,
                      std::uint64_t seed) {
  AssociativeOptions gen;
  gen.n_questions = 3;
  gen.n_concepts = 5;
  gen.cnn_dim = dims;
  gen.seed = seed + 1;
  SyntheticData data = make_associative(gen);
  ModelBuildConfig mc;
  mc.interaction = mode;
  mc.h = dims;
  mc.h2 = dims;
  mc.learned_dim = dims;
  for (int attempt = 0; attempt < 500; ++attempt) {
    Rng rng(seed * 1000 + static_cast<std::uint64_t>(attempt));
    ModelParams params = build_model(data.instances, mc, data.stores, rng);
    params.b1.array() += 0.3;
    params.b2.array() += 0.3;
    params.b3.array() += 0.3;
    params.b4.array() += 0.3;
    StemMap stems;
    stems.algorithm = params.stem_algorithm;
    std::vector<PreparedInstance> batch;
    for (const Instance& inst : data.instances)
      batch.push_back(prepare_for(inst, params, stems, data.stores));
    Graph g;
    ModelSlots slots = register_model_slots(g, params);
    build_batch_loss(g, slots, params, batch);
    g.forward();
    if (g.min_kink_distance() < 20.0 * eps) continue;
    return grad_check(g, eps).max_rel_error;
  }
  return 1.0;  // no kink-free draw found; guaranteed failure
}

void criterion_1_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  const double eps = 1e-4;
  double worst = 0.0;
  int runs = 0;
  for (Interaction mode : {Interaction::multiplicative, Interaction::order})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      worst = std::max(worst, gradcheck_once(mode, 8, eps, seed));
      ++runs;
    }
  double elapsed = seconds_since(t0);
  report(1, "gradient correctness", worst < 1e-4 && elapsed < 10.0,
         fmt("max rel err %.2e over %d mode/seed runs (%.2f s)", worst, runs,
             elapsed));
}

void criterion_2_chance() {
  AssociativeOptions gen;
  gen.n_questions = 10000;
  gen.n_concepts = 100;
  gen.cnn_dim = 8;
  gen.seed = 17;
  SyntheticData data = make_associative(gen);
  ModelBuildConfig mc;
  mc.h = 16;
  mc.h2 = 16;
  mc.learned_dim = 16;
  Rng rng(3);
  ModelParams params = build_model(data.instances, mc, data.stores, rng);
  double acc = accuracy(params, data.instances, data.stores);
  report(2, "chance floor", std::abs(acc - 0.25) <= 0.03,
         fmt("untrained accuracy %.4f on %zu instances (target 0.25 +/- 0.03)",
             acc, data.instances.size()));
}

void criterion_3_overfit() {
  auto t0 = std::chrono::steady_clock::now();
  AssociativeOptions gen;
  gen.n_questions = 50;
  gen.n_concepts = 10;
  gen.seed = 5;
  SyntheticData data = make_associative(gen);
  ZeroShotSplits splits = trivial_splits(data.instances);
  ModelBuildConfig mc;
  mc.h = 64;
  mc.h2 = 64;
  mc.learned_dim = 32;
  Rng rng(11);
  ModelParams params = build_model(data.instances, mc, data.stores, rng);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 200;
  tc.patience = 200;
  tc.seed = 11;
  TrainResult result = train(tc, splits, data.stores, params);
  double elapsed = seconds_since(t0);
  report(3, "synthetic overfit",
         result.best_val_accuracy >= 0.95 && elapsed < 60.0,
         fmt("train accuracy %.3f at epoch %d (%.2f s)",
             result.best_val_accuracy, result.best_epoch, elapsed));
}

bool touches(const Instance& inst, const std::set<std::string>& words) {
  for (const std::string& w : inst.question)
    if (words.count(w)) return true;
  for (const auto& choice : inst.choices)
    for (const std::string& w : choice)
      if (words.count(w)) return true;
  return false;
}

void criterion_4_splits() {
  SyntheticData data = make_corpus({.n_instances = 5000, .seed = 42});
  auto counts = count_word_frequencies(data.instances);
  Rng rng(7);
  auto [hv, ht] = select_heldout_words(counts, 20, std::nullopt, rng);
  ZeroShotSplits splits = build_splits(data.instances, hv, ht);

  std::size_t violations = 0;
  std::vector<std::string> overlap;
  std::set_intersection(hv.begin(), hv.end(), ht.begin(), ht.end(),
                        std::back_inserter(overlap));
  violations += overlap.size();
  for (const Instance& inst : splits.val) violations += !touches(inst, hv);
  for (const Instance& inst : splits.test) violations += !touches(inst, ht);
  std::set<std::string> all_heldout = hv;
  all_heldout.insert(ht.begin(), ht.end());
  std::set<std::string> eval_images;
  for (const Instance& inst : splits.val) eval_images.insert(inst.image_id);
  for (const Instance& inst : splits.test) eval_images.insert(inst.image_id);
  for (const Instance& inst : splits.train) {
    violations += touches(inst, all_heldout);
    violations += eval_images.count(inst.image_id) != 0;
  }
  violations += splits.train.size() + splits.val.size() + splits.test.size() +
                    splits.dropped_image_rule !=
                data.instances.size();
  std::set<std::string> seen;
  for (const auto* part : {&splits.train, &splits.val, &splits.test})
    for (const Instance& inst : *part) violations += !seen.insert(inst.id).second;

  std::size_t flagged = 0, eval_total = splits.val.size() + splits.test.size();
  for (const auto* part : {&splits.val, &splits.test})
    for (const Instance& inst : *part)
      flagged += splits.annotations.at(inst.id).any();

  report(4, "split invariants", violations == 0 && flagged == eval_total,
         fmt("%zu violations, annotation coverage %zu/%zu", violations,
             flagged, eval_total));
}

void criterion_5_porter() {
  std::size_t mismatches = 0;
  const auto& pairs = porter_reference_pairs();
  for (const auto& [word, expected] : pairs)
    mismatches += porter_stem(word) != expected;
  report(5, "porter fidelity", pairs.size() >= 100 && mismatches == 0,
         fmt("%zu/%zu reference words agree", pairs.size() - mismatches,
             pairs.size()));
}

void criterion_6_adadelta() {
  double x = 0.0, g = 1.0;
  Eigen::ArrayXd Eg2 = Eigen::ArrayXd::Zero(1), Edx2 = Eigen::ArrayXd::Zero(1);
  adadelta_step(&x, &g, 1, Eg2, Edx2, 0.95, 1e-6, 1.0);
  double err = std::abs(x - -0.0044720912343108364);
  err = std::max(err, std::abs(Eg2[0] - 0.050000000000000044));
  err = std::max(err, std::abs(Edx2[0] - 9.9998000039999187e-07));
  double x1 = x;
  g = 0.5;
  adadelta_step(&x, &g, 1, Eg2, Edx2, 0.95, 1e-6, 1.0);
  err = std::max(err, std::abs((x - x1) - -0.0028867128566037446));
  err = std::max(err, std::abs(Eg2[0] - 0.060000000000000053));

  double frozen = 0.123456789;
  const double before = frozen;
  Eigen::ArrayXd fg2 = Eigen::ArrayXd::Zero(1), fdx2 = Eigen::ArrayXd::Zero(1);
  for (int step = 0; step < 25; ++step) {
    double grad = 0.1 * (step + 1);
    adadelta_step(&frozen, &grad, 1, fg2, fdx2, 0.95, 1e-6, 0.0);
  }
  bool bit_exact = std::memcmp(&frozen, &before, sizeof(double)) == 0;
  report(6, "adadelta fidelity", err < 1e-12 && bit_exact,
         fmt("max deviation %.2e from hand values; lambda=0 freeze %s", err,
             bit_exact ? "bit-exact" : "DRIFTED"));
}

void criterion_7_annihilation() {
  const int dim = 6;
  ModelParams p;
  p.W3 = Mat::Identity(dim, dim);
  p.W4 = Mat::Identity(dim, dim);
  p.b3 = Vec::Zero(dim);
  p.b4 = Vec::Zero(dim);
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> mag(0.0, 2.0), frac(0.0, 1.0);
  std::size_t zero_count = 0;
  const std::size_t trials = 1000;
  for (std::size_t t = 0; t < trials; ++t) {
    Vec xqi(dim), xa(dim);
    for (int j = 0; j < dim; ++j) {
      xqi[j] = mag(gen);
      xa[j] = xqi[j] * frac(gen);
      if (gen() % 4 == 0) xa[j] = -mag(gen);  // relu clips to 0 <= xqi[j]
    }
    Vec fused = fuse_qia_order(xqi, xa, p, false);
    zero_count += (fused.array() == 0.0).all();
  }
  report(7, "order annihilation", zero_count == trials,
         fmt("%zu/%zu dominated inputs fused to the exact zero vector",
             zero_count, trials));
}

void criterion_8_masking() {
  AssociativeOptions gen;
  gen.n_questions = 1792;
  gen.n_concepts = 64;
  gen.seed = 9;
  SyntheticData data = make_associative(gen);
  ZeroShotSplits splits;
  splits.train.assign(data.instances.begin(), data.instances.begin() + 512);
  splits.val.assign(data.instances.begin() + 512,
                    data.instances.begin() + 768);
  splits.test.assign(data.instances.begin() + 768, data.instances.end());
  for (const Instance& inst : data.instances)
    splits.annotations.emplace(inst.id, ZsFlags{});

  auto run = [&](MaskConfig mask) {
    ModelBuildConfig mc;
    mc.h = 64;
    mc.h2 = 64;
    mc.learned_dim = 32;
    Rng rng(21);
    ModelParams params = build_model(data.instances, mc, data.stores, rng);
    TrainConfig tc;
    tc.batch_size = 32;
    tc.max_epochs = 120;
    tc.patience = 120;
    tc.seed = 11;
    tc.mask = mask;
    TrainResult result = train(tc, splits, data.stores, params);
    return accuracy(result.best, splits.test, data.stores);
  };
  double open = run({false, false});
  double masked = run({true, true});
  report(8, "masking effect", open > 0.60 && std::abs(masked - 0.25) <= 0.05,
         fmt("unmasked %.3f, fully masked %.3f (chance 0.25)", open, masked));
}

void criterion_9_determinism() {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "zsvqa_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cli = [&dir](const std::string& args) {
    std::string cmd = std::string(ZSVQA_CLI_PATH) + " " + args + " >" +
                      (dir / "out.txt").string() + " 2>" +
                      (dir / "err.txt").string();
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  auto slurp = [](const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };

  std::string data_dir = (dir / "data").string();
  std::string splits_dir = (dir / "splits").string();
  int rc = cli("synth --kind corpus --n 800 --seed 5 --out " + data_dir);
  if (rc == 0)
    rc = cli("split --dataset " + data_dir +
             "/dataset.jsonl --threshold 20 --seed 3 --out " + splits_dir);
  for (const char* run : {"one", "two"}) {
    if (rc != 0) break;
    fs::create_directories(dir / run);
    rc = cli("train --dataset " + data_dir + "/dataset.jsonl --features " +
             data_dir + "/features.jsonl --splits " + splits_dir +
             " --hidden 8 --hidden2 8 --dim 8 --batch-size 64 --epochs 3"
             " --patience 3 --seed 7 --checkpoint-out " +
             (dir / run / "model.ckpt").string() + " --history-out " +
             (dir / run / "history.jsonl").string());
  }
  bool history_same = false, ckpt_same = false;
  if (rc == 0) {
    std::string h1 = slurp(dir / "one" / "history.jsonl");
    history_same = !h1.empty() && h1 == slurp(dir / "two" / "history.jsonl");
    std::string c1 = slurp(dir / "one" / "model.ckpt");
    ckpt_same = !c1.empty() && c1 == slurp(dir / "two" / "model.ckpt");
  }
  report(9, "determinism", rc == 0 && history_same && ckpt_same,
         fmt("two identical train runs: history %s, checkpoint %s",
             history_same ? "byte-identical" : "DIFFER",
             ckpt_same ? "byte-identical" : "DIFFER"));
}

void criterion_10_statistics() {
  SyntheticData data = make_corpus({.n_instances = 2000, .seed = 13});
  auto counts = count_word_frequencies(data.instances);
  Rng rng(5);
  auto [hv, ht] = select_heldout_words(counts, 20, std::nullopt, rng);
  ZeroShotSplits splits = build_splits(data.instances, hv, ht);
  SplitStatistics stats = split_statistics(splits);
  std::string table = format_statistics(stats);

  std::size_t mismatches = 0;
  const std::set<std::string>* heldout[3] = {nullptr, &hv, &ht};
  const std::vector<Instance>* parts[3] = {&splits.train, &splits.val,
                                           &splits.test};
  auto pct = [](std::size_t part, std::size_t whole) {
    double p = whole == 0 ? 0.0
                          : 100.0 * static_cast<double>(part) /
                                static_cast<double>(whole);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", p);
    return std::string(buf);
  };
  for (int s = 0; s < 3; ++s) {
    const SplitStats& st = stats.splits[s];
    const auto& part = *parts[s];
    mismatches += st.n_questions != part.size();
    std::set<std::string> images;
    for (const Instance& inst : part) images.insert(inst.image_id);
    mismatches += st.n_images != images.size();
    std::array<std::size_t, 6> types{};
    for (const Instance& inst : part)
      ++types[static_cast<std::size_t>(inst.type)];
    for (std::size_t t = 0; t < 6; ++t) {
      mismatches += st.type_counts[t] != types[t];
      mismatches += table.find(pct(types[t], part.size())) ==
                    std::string::npos;
    }
    if (heldout[s]) {
      std::size_t any = 0, in_q = 0, in_correct = 0, in_other = 0;
      for (const Instance& inst : part) {
        ZsFlags f = annotate(inst, *heldout[s]);
        any += f.any();
        in_q += f.zs_in_question;
        in_correct += f.zs_in_correct;
        in_other += f.zs_in_other;
      }
      mismatches += st.n_zs_any != any;
      mismatches += st.n_zs_question != in_q;
      mismatches += st.n_zs_correct != in_correct;
      mismatches += st.n_zs_other != in_other;
      mismatches += st.n_heldout_words != heldout[s]->size();
      for (std::size_t n : {any, in_q, in_correct, in_other})
        mismatches += table.find(std::to_string(n) + " (" +
                                 pct(n, part.size()) + ")") ==
                      std::string::npos;
    }
  }
  mismatches += statistics_json(stats).at("val").at("questions") !=
                splits.val.size();
  report(10, "statistics fidelity", mismatches == 0,
         fmt("%zu field mismatches against independent recount", mismatches));
}

}  // namespace

int main() {
  criterion_1_gradients();
  criterion_2_chance();
  criterion_3_overfit();
  criterion_4_splits();
  criterion_5_porter();
  criterion_6_adadelta();
  criterion_7_annihilation();
  criterion_8_masking();
  criterion_9_determinism();
  criterion_10_statistics();
  if (g_failures == 0) {
    std::printf("acceptance: all 10 criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}
