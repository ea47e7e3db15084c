#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "zsvqa/autodiff.hpp"
#include "zsvqa/common.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/embeddings.hpp"
#include "zsvqa/features.hpp"
#include "zsvqa/textproc.hpp"

namespace zsvqa {

enum class Interaction { multiplicative, order, order_reversed };

inline const char* to_string(Interaction m) {
  switch (m) {
    case Interaction::multiplicative: return "multiplicative";
    case Interaction::order: return "order";
    case Interaction::order_reversed: return "order_reversed";
  }
  return "?";
}

inline Interaction parse_interaction(const std::string& s) {
  if (s == "multiplicative" || s == "mult") return Interaction::multiplicative;
  if (s == "order") return Interaction::order;
  if (s == "order_reversed" || s == "reversed")
    return Interaction::order_reversed;
  throw ConfigError("unknown interaction mode: '" + s + "'");
}

struct MaskConfig {
  bool mask_question = false;
  bool mask_image = false;
};

inline MaskConfig parse_mask(const std::string& s) {
  if (s == "none") return {false, false};
  if (s == "q") return {true, false};
  if (s == "i") return {false, true};
  if (s == "qi") return {true, true};
  throw ConfigError("unknown mask config: '" + s + "' (none|q|i|qi)");
}

inline const char* to_string(MaskConfig m) {
  if (m.mask_question && m.mask_image) return "qi";
  if (m.mask_question) return "q";
  if (m.mask_image) return "i";
  return "none";
}

/// Entries uniform in +-sqrt(6/(fan_in+fan_out)); shape (fan_out, fan_in).
inline Mat glorot_init(int fan_in, int fan_out, Rng& rng) {
  if (fan_in < 1 || fan_out < 1) throw ConfigError("fans must be >= 1");
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Mat W(fan_out, fan_in);
  for (Eigen::Index i = 0; i < W.size(); ++i)
    W.data()[i] = rng.uniform(-bound, bound);
  return W;
}

/// All symbols of Eqs. 1-4 plus the attached embedding tables.
struct ModelParams {
  Interaction interaction = Interaction::multiplicative;
  int h = 0, h2 = 0;
  Mat W1, W2, W3, W4;
  Vec b1, b2, b3, b4;
  Vec w5;  // treated as the 1 x h2 matrix W5
  double b5 = 0.0;
  EmbeddingTable q_table;      // question words; both sides when shared
  EmbeddingTable a_table;      // answer words; unused when share_qa
  EmbeddingTable class_table;  // detection classes; unused unless enabled
  bool share_qa = false;
  StemAlgorithm stem_algorithm = StemAlgorithm::identity;
  FeatureConfig features;

  const EmbeddingTable& answer_table() const {
    return share_qa ? q_table : a_table;
  }
  EmbeddingTable& answer_table() { return share_qa ? q_table : a_table; }

  int dim_q() const { return static_cast<int>(W1.cols()); }
  int dim_i() const { return static_cast<int>(W2.cols()); }
  int dim_a() const {
    return static_cast<int>(interaction == Interaction::order ? W3.cols()
                                                              : W4.cols());
  }

  void validate() const {
    auto expect = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("inconsistent model shapes: " + what);
    };
    expect(W1.rows() == h && W2.rows() == h, "W1/W2 rows vs h");
    expect(b1.size() == h && b2.size() == h, "b1/b2 vs h");
    expect(W3.rows() == h2 && W4.rows() == h2, "W3/W4 rows vs h2");
    expect(b3.size() == h2 && b4.size() == h2, "b3/b4 vs h2");
    expect(w5.size() == h2, "w5 vs h2");
    if (interaction == Interaction::order)
      expect(W4.cols() == h, "W4 cols vs h (order mode)");
    else
      expect(W3.cols() == h, "W3 cols vs h");
    for (const Mat* W : {&W1, &W2, &W3, &W4})
      if (!W->allFinite()) throw NumericError("non-finite weights");
    for (const Vec* b : {&b1, &b2, &b3, &b4, &w5})
      if (!b->allFinite()) throw NumericError("non-finite biases");
    if (!std::isfinite(b5)) throw NumericError("non-finite b5");
    q_table.validate();
    if (!share_qa) a_table.validate();
  }
};

// ---------------------------------------------------------------------------
// Plain (tape-free) forward operations, Eqs. 1-4

/// Eq. 1: x^QI = f(W1 x^Q + b1) o f(W2 x^I + b2), f = relu.
inline Vec fuse_qi(const Vec& xq, const Vec& xi, const ModelParams& p) {
  if (xq.size() != p.W1.cols() || xi.size() != p.W2.cols())
    throw NumericError("fuse_qi: input dims do not match W1/W2");
  Vec a = (p.W1 * xq + p.b1).cwiseMax(0.0);
  Vec b = (p.W2 * xi + p.b2).cwiseMax(0.0);
  return a.cwiseProduct(b);
}

/// Eq. 2: x^QIA = f(W3 x^QI + b3) o f(W4 x^A + b4).
inline Vec fuse_qia_mult(const Vec& xqi, const Vec& xa, const ModelParams& p) {
  if (xqi.size() != p.W3.cols() || xa.size() != p.W4.cols())
    throw NumericError("fuse_qia_mult: input dims do not match W3/W4");
  Vec a = (p.W3 * xqi + p.b3).cwiseMax(0.0);
  Vec b = (p.W4 * xa + p.b4).cwiseMax(0.0);
  return a.cwiseProduct(b);
}

/// Eq. 4: x^QIA = max(0, |f(W3 x^A + b3)| - |f(W4 x^QI + b4)|)^2.
/// reversed=true swaps the roles of x^QI and x^A.
inline Vec fuse_qia_order(const Vec& xqi, const Vec& xa, const ModelParams& p,
                          bool reversed) {
  const Vec& lhs = reversed ? xqi : xa;  // through W3, positive side
  const Vec& rhs = reversed ? xa : xqi;  // through W4
  if (lhs.size() != p.W3.cols() || rhs.size() != p.W4.cols())
    throw NumericError("fuse_qia_order: input dims do not match W3/W4");
  Vec u = (p.W3 * lhs + p.b3).cwiseMax(0.0).cwiseAbs();
  Vec v = (p.W4 * rhs + p.b4).cwiseMax(0.0).cwiseAbs();
  Vec d = (u - v).cwiseMax(0.0);
  return d.cwiseProduct(d);
}

/// Eq. 3: s = sigma(W5 x^QIA + b5).
inline double score(const Vec& xqia, const ModelParams& p) {
  if (xqia.size() != p.w5.size())
    throw NumericError("score: input dim does not match W5");
  return 1.0 / (1.0 + std::exp(-(p.w5.dot(xqia) + p.b5)));
}

inline Vec fuse_qia(const Vec& xqi, const Vec& xa, const ModelParams& p) {
  switch (p.interaction) {
    case Interaction::multiplicative: return fuse_qia_mult(xqi, xa, p);
    case Interaction::order: return fuse_qia_order(xqi, xa, p, false);
    case Interaction::order_reversed: return fuse_qia_order(xqi, xa, p, true);
  }
  throw ConfigError("invalid interaction");
}

inline double score_triple(const Vec& xq, const Vec& xi, const Vec& xa,
                           const ModelParams& p) {
  return score(fuse_qia(fuse_qi(xq, xi, p), xa, p), p);
}

// ---------------------------------------------------------------------------
// Prediction over prepared features

inline Vec materialize_question(const PreparedInstance& inst,
                                const ModelParams& p) {
  Vec text = materialize_terms(inst.q_terms, p.q_table);
  return inst.q_const.size() > 0 ? concat2(text, inst.q_const) : text;
}

inline Vec materialize_image(const PreparedInstance& inst,
                             const ModelParams& p) {
  if (!p.features.use_detections) return inst.i_cnn;
  return concat2(inst.i_cnn, materialize_terms(inst.det_terms, p.class_table));
}

inline Vec materialize_answer(const PreparedCandidate& cand,
                              const ModelParams& p) {
  Vec text = materialize_terms(cand.terms, p.answer_table());
  return cand.constant.size() > 0 ? concat2(text, cand.constant) : text;
}

inline std::vector<double> score_candidates(const ModelParams& p,
                                            const PreparedInstance& inst) {
  Vec xqi = fuse_qi(materialize_question(inst, p), materialize_image(inst, p),
                    p);
  std::vector<double> scores;
  scores.reserve(inst.candidates.size());
  for (const PreparedCandidate& cand : inst.candidates)
    scores.push_back(score(fuse_qia(xqi, materialize_answer(cand, p), p), p));
  return scores;
}

/// Argmax over candidate scores; ties go to the lowest index.
inline int predict_prepared(const ModelParams& p,
                            const PreparedInstance& inst) {
  std::vector<double> scores = score_candidates(p, inst);
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline PreparedInstance prepare_for(const Instance& inst, ModelParams& p,
                                    const StemMap& stem_map,
                                    const FeatureStores& stores) {
  return prepare_instance(inst, p.q_table, p.answer_table(), p.class_table,
                          stem_map, stores, p.features);
}

inline int predict(const Instance& inst, const ModelParams& p,
                   const FeatureStores& stores) {
  // Preparation works on a copy of the params: learned-mode class rows may
  // be lazily added, and those rows are zero vectors that change no score.
  ModelParams view = p;
  StemMap sm{p.stem_algorithm};
  PreparedInstance prep = prepare_for(inst, view, sm, stores);
  return predict_prepared(view, prep);
}

// ---------------------------------------------------------------------------
// Input masking: swap channels across the batch (training-time only)

/// One uniform permutation per masked channel. The question channel is
/// permuted first, then the image channel; unmasked channels are untouched.
inline void mask_batch(std::vector<PreparedInstance>& batch,
                       const MaskConfig& mask, Rng& rng) {
  if (mask.mask_question) {
    std::vector<std::size_t> perm = rng.permutation(batch.size());
    std::vector<std::vector<EmbedTerm>> terms(batch.size());
    std::vector<Vec> consts(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      terms[i] = std::move(batch[perm[i]].q_terms);
      consts[i] = std::move(batch[perm[i]].q_const);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i].q_terms = std::move(terms[i]);
      batch[i].q_const = std::move(consts[i]);
    }
  }
  if (mask.mask_image) {
    std::vector<std::size_t> perm = rng.permutation(batch.size());
    std::vector<Vec> cnn(batch.size());
    std::vector<std::vector<EmbedTerm>> det(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      cnn[i] = std::move(batch[perm[i]].i_cnn);
      det[i] = std::move(batch[perm[i]].det_terms);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i].i_cnn = std::move(cnn[i]);
      batch[i].det_terms = std::move(det[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Training-graph construction

struct ModelSlots {
  int W1 = -1, b1 = -1, W2 = -1, b2 = -1, W3 = -1, b3 = -1, W4 = -1, b4 = -1;
  int W5 = -1, b5 = -1;
  int q_table = -1, a_table = -1, class_table = -1;
};

/// Registers every trainable tensor of the model with the graph. The
/// returned ids follow the same order as collect_param_slots.
inline ModelSlots register_model_slots(Graph& g, ModelParams& p) {
  auto mat = [&g](const char* name, Mat& W, double lr = 1.0) {
    return g.add_slot({name, W.data(), W.rows(), W.cols(), lr});
  };
  auto vec = [&g](const char* name, Vec& b, double lr = 1.0) {
    return g.add_slot({name, b.data(), b.size(), 1, lr});
  };
  ModelSlots s;
  s.W1 = mat("W1", p.W1);
  s.b1 = vec("b1", p.b1);
  s.W2 = mat("W2", p.W2);
  s.b2 = vec("b2", p.b2);
  s.W3 = mat("W3", p.W3);
  s.b3 = vec("b3", p.b3);
  s.W4 = mat("W4", p.W4);
  s.b4 = vec("b4", p.b4);
  s.W5 = g.add_slot({"W5", p.w5.data(), 1, p.w5.size(), 1.0});
  s.b5 = g.add_slot({"b5", &p.b5, 1, 1, 1.0});
  s.q_table = g.add_slot({"q_table", p.q_table.data.data(),
                          p.q_table.data.rows(), p.q_table.data.cols(),
                          p.q_table.relative_lr});
  if (!p.share_qa)
    s.a_table = g.add_slot({"a_table", p.a_table.data.data(),
                            p.a_table.data.rows(), p.a_table.data.cols(),
                            p.a_table.relative_lr});
  if (p.features.use_detections)
    s.class_table = g.add_slot({"class_table", p.class_table.data.data(),
                                p.class_table.data.rows(),
                                p.class_table.data.cols(),
                                p.class_table.relative_lr});
  return s;
}

/// Builds the per-candidate score/loss subgraph of one question; x^QI is
/// shared by all of its candidates. Returns the bce node ids; score node
/// ids are appended to score_nodes when given.
inline std::vector<int> build_question_nodes(Graph& g, const ModelSlots& s,
                                             const ModelParams& p,
                                             const PreparedInstance& inst,
                                             std::vector<int>* score_nodes) {
  std::vector<int> q_parts{g.embed(s.q_table, inst.q_terms)};
  if (inst.q_const.size() > 0) q_parts.push_back(g.input(inst.q_const));
  int xq = g.concat(q_parts);

  std::vector<int> i_parts{g.input(inst.i_cnn)};
  if (p.features.use_detections)
    i_parts.push_back(g.embed(s.class_table, inst.det_terms));
  int xi = g.concat(i_parts);

  int branch_q = g.relu(g.add_bias(g.matvec(s.W1, xq), s.b1));
  int branch_i = g.relu(g.add_bias(g.matvec(s.W2, xi), s.b2));
  int xqi = g.hadamard(branch_q, branch_i);

  int a_slot = p.share_qa ? s.q_table : s.a_table;
  std::vector<int> losses;
  for (const PreparedCandidate& cand : inst.candidates) {
    std::vector<int> a_parts{g.embed(a_slot, cand.terms)};
    if (cand.constant.size() > 0) a_parts.push_back(g.input(cand.constant));
    int xa = g.concat(a_parts);

    int fused;
    if (p.interaction == Interaction::multiplicative) {
      int u = g.relu(g.add_bias(g.matvec(s.W3, xqi), s.b3));
      int v = g.relu(g.add_bias(g.matvec(s.W4, xa), s.b4));
      fused = g.hadamard(u, v);
    } else {
      bool reversed = p.interaction == Interaction::order_reversed;
      int lhs = reversed ? xqi : xa;
      int rhs = reversed ? xa : xqi;
      int u = g.abs(g.relu(g.add_bias(g.matvec(s.W3, lhs), s.b3)));
      int v = g.abs(g.relu(g.add_bias(g.matvec(s.W4, rhs), s.b4)));
      fused = g.square(g.relu_of_diff(u, v));
    }
    int sc = g.sigmoid(g.add_bias(g.matvec(s.W5, fused), s.b5));
    if (score_nodes) score_nodes->push_back(sc);
    losses.push_back(g.bce(sc, cand.label));
  }
  return losses;
}

/// Mean bce over every (candidate, label) pair in the batch.
inline int build_batch_loss(Graph& g, const ModelSlots& s,
                            const ModelParams& p,
                            const std::vector<PreparedInstance>& batch) {
  std::vector<int> losses;
  for (const PreparedInstance& inst : batch) {
    std::vector<int> l = build_question_nodes(g, s, p, inst, nullptr);
    losses.insert(losses.end(), l.begin(), l.end());
  }
  return g.mean(losses);
}

// ---------------------------------------------------------------------------
// Checkpoint format (binary, little-endian, single-precision arrays)

namespace detail {
inline void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline void put_mat(std::ostream& out, const double* data, Eigen::Index rows,
                    Eigen::Index cols) {
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    float f = static_cast<float>(data[i]);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
}
inline Mat get_mat(std::istream& in) {
  std::uint32_t rows = get_u32(in);
  std::uint32_t cols = get_u32(in);
  Mat W(rows, cols);
  for (Eigen::Index i = 0; i < W.size(); ++i) {
    float f = 0;
    in.read(reinterpret_cast<char*>(&f), sizeof(f));
    W.data()[i] = f;
  }
  return W;
}
inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& in) {
  std::uint32_t len = get_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}
inline void put_table(std::ostream& out, const EmbeddingTable& t) {
  out.put(static_cast<char>(t.trainable));
  out.put(static_cast<char>(t.key_mode));
  out.put(static_cast<char>(t.scope));
  put_f64(out, t.relative_lr);
  put_u32(out, static_cast<std::uint32_t>(t.dim));
  put_u32(out, static_cast<std::uint32_t>(t.keys.size()));
  for (const std::string& k : t.keys) put_str(out, k);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) {
    float f = static_cast<float>(t.data.data()[i]);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
}
inline EmbeddingTable get_table(std::istream& in) {
  EmbeddingTable t;
  t.trainable = in.get() != 0;
  t.key_mode = static_cast<KeyMode>(in.get());
  t.scope = static_cast<TableScope>(in.get());
  t.relative_lr = get_f64(in);
  t.dim = static_cast<int>(get_u32(in));
  std::uint32_t n = get_u32(in);
  t.keys.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    t.keys.push_back(get_str(in));
    t.column_of.emplace(t.keys.back(), static_cast<int>(i));
  }
  t.data.resize(t.dim, n);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) {
    float f = 0;
    in.read(reinterpret_cast<char*>(&f), sizeof(f));
    t.data.data()[i] = f;
  }
  return t;
}
}  // namespace detail

inline constexpr char kCheckpointMagic[] = "ZSVQA-CKPT-1\n";

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  detail::put_u32(out, static_cast<std::uint32_t>(p.interaction));
  detail::put_u32(out, static_cast<std::uint32_t>(p.h));
  detail::put_u32(out, static_cast<std::uint32_t>(p.h2));
  out.put(static_cast<char>(p.share_qa));
  out.put(static_cast<char>(p.stem_algorithm));
  out.put(static_cast<char>(p.features.question_visual));
  out.put(static_cast<char>(p.features.answer_visual));
  detail::put_u32(out, static_cast<std::uint32_t>(p.features.exemplar_k));
  out.put(static_cast<char>(p.features.use_detections));
  out.put(static_cast<char>(p.features.detection_mode));
  detail::put_f64(out, p.features.detection_threshold);
  detail::put_mat(out, p.W1.data(), p.W1.rows(), p.W1.cols());
  detail::put_mat(out, p.b1.data(), p.b1.size(), 1);
  detail::put_mat(out, p.W2.data(), p.W2.rows(), p.W2.cols());
  detail::put_mat(out, p.b2.data(), p.b2.size(), 1);
  detail::put_mat(out, p.W3.data(), p.W3.rows(), p.W3.cols());
  detail::put_mat(out, p.b3.data(), p.b3.size(), 1);
  detail::put_mat(out, p.W4.data(), p.W4.rows(), p.W4.cols());
  detail::put_mat(out, p.b4.data(), p.b4.size(), 1);
  detail::put_mat(out, p.w5.data(), 1, p.w5.size());
  detail::put_mat(out, &p.b5, 1, 1);
  detail::put_table(out, p.q_table);
  out.put(static_cast<char>(!p.share_qa));
  if (!p.share_qa) detail::put_table(out, p.a_table);
  out.put(static_cast<char>(p.features.use_detections));
  if (p.features.use_detections) detail::put_table(out, p.class_table);
  if (!out) throw StateError("write failure on checkpoint: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError("not a checkpoint file: " + path);
  ModelParams p;
  p.interaction = static_cast<Interaction>(detail::get_u32(in));
  p.h = static_cast<int>(detail::get_u32(in));
  p.h2 = static_cast<int>(detail::get_u32(in));
  p.share_qa = in.get() != 0;
  p.stem_algorithm = static_cast<StemAlgorithm>(in.get());
  p.features.question_visual = in.get() != 0;
  p.features.answer_visual = in.get() != 0;
  p.features.exemplar_k = static_cast<int>(detail::get_u32(in));
  p.features.use_detections = in.get() != 0;
  p.features.detection_mode = static_cast<DetectionMode>(in.get());
  p.features.detection_threshold = detail::get_f64(in);
  p.W1 = detail::get_mat(in);
  p.b1 = detail::get_mat(in).col(0);
  p.W2 = detail::get_mat(in);
  p.b2 = detail::get_mat(in).col(0);
  p.W3 = detail::get_mat(in);
  p.b3 = detail::get_mat(in).col(0);
  p.W4 = detail::get_mat(in);
  p.b4 = detail::get_mat(in).col(0);
  Mat w5 = detail::get_mat(in);
  p.w5 = w5.row(0).transpose();
  p.b5 = detail::get_mat(in)(0, 0);
  p.q_table = detail::get_table(in);
  if (in.get() != 0) p.a_table = detail::get_table(in);
  if (in.get() != 0) p.class_table = detail::get_table(in);
  if (!in) throw FormatError("truncated checkpoint: " + path);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Model construction

struct ModelBuildConfig {
  Interaction interaction = Interaction::multiplicative;
  int h = 64, h2 = 64;
  int learned_dim = 64;  // used when no pretrained table is supplied
  std::optional<EmbeddingTable> pretrained;
  bool share_qa = true;
  StemAlgorithm stem_algorithm = StemAlgorithm::identity;
  double finetune_lr = 1.0;  // lambda on pretrained tables
  FeatureConfig features;
};

namespace detail {
inline std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

/// Builds one word table for the given vocabulary: learned Glorot rows or a
/// restriction of the pretrained table. In stem mode keys are the distinct
/// stems; pretrained stem rows average the vectors of the words they merge.
inline EmbeddingTable make_word_table(const std::vector<std::string>& vocab,
                                      const ModelBuildConfig& cfg, Rng& rng) {
  const bool stem = cfg.stem_algorithm != StemAlgorithm::identity;
  StemMap sm = build_stem_map(vocab, cfg.stem_algorithm);
  EmbeddingTable table;
  if (!cfg.pretrained) {
    table = init_learned(stem ? sm.stem_keys() : vocab, cfg.learned_dim, rng);
  } else {
    const EmbeddingTable& src = *cfg.pretrained;
    table.dim = src.dim;
    if (!stem) {
      for (const std::string& w : vocab) {
        int col = src.find(w);
        if (col >= 0) table.add(w, src.data.col(col));
      }
    } else {
      for (const std::string& s : sm.stem_keys()) {
        Vec sum = Vec::Zero(src.dim);
        int n = 0;
        for (const std::string& w : vocab) {
          if (sm.apply(w) != s) continue;
          int col = src.find(w);
          if (col < 0) continue;
          sum += src.data.col(col);
          ++n;
        }
        if (n > 0) table.add(s, sum / n);
      }
    }
    table.relative_lr = cfg.finetune_lr;
    table.trainable = cfg.finetune_lr > 0.0;
  }
  table.key_mode = stem ? KeyMode::stem : KeyMode::surface;
  return table;
}
}  // namespace detail

/// Assembles tables and Glorot-initialized weights from the training split.
/// Rng consumption order: question table, answer table (when separate),
/// then W1, W2, W3, W4, W5.
inline ModelParams build_model(const std::vector<Instance>& train_split,
                               const ModelBuildConfig& cfg,
                               const FeatureStores& stores, Rng& rng) {
  std::vector<std::string> q_vocab, a_vocab;
  for (const Instance& inst : train_split) {
    q_vocab.insert(q_vocab.end(), inst.question.begin(), inst.question.end());
    for (const auto& choice : inst.choices)
      a_vocab.insert(a_vocab.end(), choice.begin(), choice.end());
  }
  ModelParams p;
  p.interaction = cfg.interaction;
  p.h = cfg.h;
  p.h2 = cfg.h2;
  p.share_qa = cfg.share_qa;
  p.stem_algorithm = cfg.stem_algorithm;
  p.features = cfg.features;

  if (cfg.share_qa) {
    std::vector<std::string> vocab = q_vocab;
    vocab.insert(vocab.end(), a_vocab.begin(), a_vocab.end());
    p.q_table = detail::make_word_table(detail::sorted_unique(std::move(vocab)),
                                        cfg, rng);
    p.q_table.scope = TableScope::shared;
  } else {
    p.q_table = detail::make_word_table(
        detail::sorted_unique(std::move(q_vocab)), cfg, rng);
    p.q_table.scope = TableScope::question;
    p.a_table = detail::make_word_table(
        detail::sorted_unique(std::move(a_vocab)), cfg, rng);
    p.a_table.scope = TableScope::answer;
  }

  if (cfg.features.use_detections) {
    if (cfg.features.detection_mode == DetectionMode::learned) {
      p.class_table.dim = p.q_table.dim;
      p.class_table.trainable = true;
    } else {
      if (!cfg.pretrained)
        throw ConfigError(
            "semantic detection embeddings require pretrained vectors");
      const EmbeddingTable& src = *cfg.pretrained;
      std::vector<std::string> class_words;
      for (const auto& [image_id, dets] : stores.detections.by_image) {
        (void)image_id;
        for (const Detection& det : dets) {
          std::vector<std::string> words = tokenize(det.class_name);
          class_words.insert(class_words.end(), words.begin(), words.end());
        }
      }
      p.class_table.dim = src.dim;
      for (const std::string& w : detail::sorted_unique(std::move(class_words))) {
        int col = src.find(w);
        if (col >= 0) p.class_table.add(w, src.data.col(col));
      }
      p.class_table.relative_lr = cfg.finetune_lr;
      p.class_table.trainable = cfg.finetune_lr > 0.0;
    }
  }

  if ((cfg.features.question_visual || cfg.features.answer_visual) &&
      stores.exemplars.dim == 0)
    throw ConfigError("visual embeddings enabled but exemplar store is empty");

  int dq = question_dim(p.q_table, stores, cfg.features);
  int da = answer_dim(p.answer_table(), stores, cfg.features);
  int di = image_dim(p.class_table, stores, cfg.features);

  p.W1 = glorot_init(dq, cfg.h, rng);
  p.b1 = Vec::Zero(cfg.h);
  p.W2 = glorot_init(di, cfg.h, rng);
  p.b2 = Vec::Zero(cfg.h);
  if (cfg.interaction == Interaction::order) {
    p.W3 = glorot_init(da, cfg.h2, rng);
    p.W4 = glorot_init(cfg.h, cfg.h2, rng);
  } else {
    p.W3 = glorot_init(cfg.h, cfg.h2, rng);
    p.W4 = glorot_init(da, cfg.h2, rng);
  }
  p.b3 = Vec::Zero(cfg.h2);
  p.b4 = Vec::Zero(cfg.h2);
  p.w5 = glorot_init(cfg.h2, 1, rng).row(0).transpose();
  p.b5 = 0.0;
  p.validate();
  return p;
}

}  // namespace zsvqa
