#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "zsvqa/autodiff.hpp"
#include "zsvqa/common.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/features.hpp"
#include "zsvqa/model.hpp"

namespace zsvqa {

/// -(y ln s + (1-y) ln(1-s)) with the same clamp the graph applies.
inline double bce_loss(double s, double y) {
  s = std::min(kBceClampHi, std::max(kBceClampLo, s));
  return -(y * std::log(s) + (1.0 - y) * std::log1p(-s));
}

// ---------------------------------------------------------------------------
// Adadelta

struct AdadeltaState {
  double rho = 0.95;
  double epsilon = 1e-6;
  std::vector<Eigen::ArrayXd> Eg2;   // decayed mean of g^2, one per slot
  std::vector<Eigen::ArrayXd> Edx2;  // decayed mean of update^2

  AdadeltaState() = default;
  AdadeltaState(const std::vector<ParamSlot>& slots, double rho_ = 0.95,
                double epsilon_ = 1e-6)
      : rho(rho_), epsilon(epsilon_) {
    for (const ParamSlot& s : slots) {
      Eg2.push_back(Eigen::ArrayXd::Zero(s.size()));
      Edx2.push_back(Eigen::ArrayXd::Zero(s.size()));
    }
  }
};

/// One Adadelta update. lambda scales the applied update only, so lambda=0
/// freezes the parameter bit-exactly while the accumulators keep decaying.
inline void adadelta_step(double* param, const double* grad,
                          Eigen::Index size, Eigen::ArrayXd& Eg2,
                          Eigen::ArrayXd& Edx2, double rho, double epsilon,
                          double lambda) {
  Eigen::Map<Eigen::ArrayXd> x(param, size);
  Eigen::Map<const Eigen::ArrayXd> g(grad, size);
  if (!g.isFinite().all())
    throw NumericError("non-finite gradient in adadelta_step");
  Eg2 = rho * Eg2 + (1.0 - rho) * g.square();
  Eigen::ArrayXd dx = -((Edx2 + epsilon).sqrt() / (Eg2 + epsilon).sqrt()) * g;
  Edx2 = rho * Edx2 + (1.0 - rho) * dx.square();
  if (lambda != 0.0) x += lambda * dx;
}

/// Applies one optimizer step to every slot registered with the graph,
/// using the gradients of the last backward pass. Each slot's relative
/// learning rate provides its lambda.
inline void apply_adadelta(Graph& graph, AdadeltaState& state) {
  const std::vector<ParamSlot>& slots = graph.slots();
  if (state.Eg2.size() != slots.size())
    throw StateError("optimizer state does not match slot count");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const ParamSlot& s = slots[i];
    try {
      adadelta_step(s.data, graph.slot_grad(static_cast<int>(i)).data(),
                    s.size(), state.Eg2[i], state.Edx2[i], state.rho,
                    state.epsilon, s.relative_lr);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (slot " + s.name + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Negative-answer augmentation

inline int extra_negatives(double ratio) {
  if (ratio < 0.0) throw ConfigError("augmentation ratio must be >= 0");
  return static_cast<int>(std::floor(ratio * 4.0 + 0.5));
}

/// Appends round(ratio*4) label-0 candidates per question, drawn uniformly
/// from the other questions' original candidates, never reusing a string
/// equal to one of the question's own four answers.
inline void augment_batch(std::vector<PreparedInstance>& batch, double ratio,
                          Rng& rng) {
  int extras = extra_negatives(ratio);
  if (extras == 0) return;
  if (batch.size() < 2)
    throw ConfigError("augmentation needs a batch of >= 2 questions");

  struct Donor {
    std::size_t question;
    int candidate;
  };
  std::vector<Donor> all;
  for (std::size_t q = 0; q < batch.size(); ++q)
    for (int c = 0; c < 4; ++c) all.push_back({q, c});

  for (std::size_t q = 0; q < batch.size(); ++q) {
    std::vector<Donor> pool;
    for (const Donor& d : all) {
      if (d.question == q) continue;
      const std::string& raw = batch[d.question].candidates[d.candidate].raw;
      bool own = false;
      for (int c = 0; c < 4; ++c)
        if (batch[q].candidates[c].raw == raw) {
          own = true;
          break;
        }
      if (!own) pool.push_back(d);
    }
    if (pool.empty())
      throw ConfigError("augmentation pool empty for question '" +
                        batch[q].id + "'");
    for (int e = 0; e < extras; ++e) {
      const Donor& d = pool[rng.index(pool.size())];
      PreparedCandidate extra = batch[d.question].candidates[d.candidate];
      extra.label = 0.0;
      batch[q].candidates.push_back(std::move(extra));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int batch_size = 512;
  int max_epochs = 20;
  int patience = 5;       // epochs without val improvement before stopping
  double aug_ratio = 0.0;
  double finetune_lr = 1.0;  // lambda on pretrained embedding rows
  MaskConfig mask;
  Interaction interaction = Interaction::multiplicative;
  std::uint64_t seed = 0;
  double rho = 0.95;
  double epsilon = 1e-6;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (aug_ratio < 0.0) throw ConfigError("aug_ratio must be >= 0");
    if (finetune_lr < 0.0 || finetune_lr > 1.0)
      throw ConfigError("finetune_lr must lie in [0, 1]");
  }
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;  // logged, never written to the history file
};

struct TrainResult {
  ModelParams best;
  std::vector<HistoryRow> history;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
};

inline double prepared_accuracy(const ModelParams& params,
                                const std::vector<PreparedInstance>& split) {
  if (split.empty()) throw StateError("empty split: nothing to evaluate");
  std::size_t correct = 0;
  for (const PreparedInstance& inst : split)
    if (predict_prepared(params, inst) == inst.correct_index) ++correct;
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Epoch loop: seeded shuffle, masking then augmentation per batch,
/// forward/backward, Adadelta on every slot, val accuracy once per epoch,
/// early stop after `patience` epochs without strict improvement. Returns
/// the parameter snapshot of the best-val epoch.
inline TrainResult train(const TrainConfig& cfg, const ZeroShotSplits& splits,
                         const FeatureStores& stores, ModelParams params) {
  cfg.validate();
  if (params.interaction != cfg.interaction)
    throw ConfigError("model was built for a different interaction mode");
  if (splits.train.empty()) throw StateError("empty split: train");
  if (splits.val.empty()) throw StateError("empty split: val");

  StemMap stem_map = build_stem_map({}, params.stem_algorithm);
  std::vector<PreparedInstance> train_set, val_set;
  train_set.reserve(splits.train.size());
  for (const Instance& inst : splits.train)
    train_set.push_back(prepare_for(inst, params, stem_map, stores));
  val_set.reserve(splits.val.size());
  for (const Instance& inst : splits.val)
    val_set.push_back(prepare_for(inst, params, stem_map, stores));

  Rng rng(cfg.seed);
  AdadeltaState state;
  {
    Graph probe;
    register_model_slots(probe, params);
    state = AdadeltaState(probe.slots(), cfg.rho, cfg.epsilon);
  }

  TrainResult result;
  result.best_val_accuracy = -1.0;
  int epochs_since_improvement = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = rng.permutation(train_set.size());
    double loss_sum = 0.0;
    std::size_t pair_count = 0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PreparedInstance> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(train_set[order[i]]);

      mask_batch(batch, cfg.mask, rng);
      augment_batch(batch, cfg.aug_ratio, rng);

      Graph g;
      ModelSlots slots = register_model_slots(g, params);
      build_batch_loss(g, slots, params, batch);
      double loss;
      try {
        loss = g.forward();
        g.backward(1.0);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(start / cfg.batch_size) + ": " +
                           e.what());
      }
      apply_adadelta(g, state);

      std::size_t pairs = 0;
      for (const PreparedInstance& inst : batch)
        pairs += inst.candidates.size();
      loss_sum += loss * static_cast<double>(pairs);
      pair_count += pairs;
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(pair_count);
    row.val_accuracy = prepared_accuracy(params, val_set);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back(row);

    if (row.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = row.val_accuracy;
      result.best_epoch = epoch;
      result.best = params;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
    }
    if (epochs_since_improvement >= cfg.patience) break;
  }
  return result;
}

/// Newline-delimited history records. Wall time is excluded on purpose:
/// the file must be byte-identical across reruns with the same seed.
inline void write_history(const std::vector<HistoryRow>& history,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write history file: " + path);
  char buf[160];
  for (const HistoryRow& row : history) {
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%d,\"train_loss\":%.17g,\"val_accuracy\":%.17g}",
                  row.epoch, row.train_loss, row.val_accuracy);
    out << buf << "\n";
  }
}

}  // namespace zsvqa
