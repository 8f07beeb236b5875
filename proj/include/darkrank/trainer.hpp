#pragma once

// Distillation training loop. Each batch is an anchor (row 0), its positives,
// and negatives from other identities; rows 1..n-1 are the candidate list for
// the rank-transfer losses. The teacher is frozen: its outputs on the training
// split are computed once and indexed per batch.

#include "darkrank/config.hpp"
#include "darkrank/dataset.hpp"
#include "darkrank/errors.hpp"
#include "darkrank/losses.hpp"
#include "darkrank/metrics.hpp"
#include "darkrank/network.hpp"
#include "darkrank/ranking.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace darkrank {

/// splitmix64 finalizer, used to derive independent sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Batch {
  std::vector<std::size_t> rows;  // indices into the training split
  Matrix inputs;
  std::vector<int> classes;
  std::vector<std::pair<std::size_t, std::size_t>> positive_pairs;
  std::vector<std::pair<std::size_t, std::size_t>> negative_pairs;  // anchor vs negatives
  std::vector<std::array<std::size_t, 3>> triplets;                 // (anchor, positive, negative)

  std::size_t candidates() const noexcept { return rows.size() - 1; }
};

/// Training split with dense class labels and per-identity row lists.
class TrainingSet {
 public:
  explicit TrainingSet(const LabeledDataset& data) : split_(select_split(data, Split::train)) {
    const auto index = class_index(split_.identities);
    by_class_.resize(index.size());
    for (std::size_t r = 0; r < split_.size(); ++r) {
      const int c = index.at(split_.identities[r]);
      classes_.push_back(c);
      by_class_[static_cast<std::size_t>(c)].push_back(r);
    }
    if (by_class_.size() < 2) throw InputError("training split needs at least 2 identities");
    for (const auto& rows : by_class_) {
      if (rows.size() < 2) throw InputError("every training identity needs at least 2 samples");
    }
  }

  std::size_t size() const noexcept { return split_.size(); }
  std::size_t num_classes() const noexcept { return by_class_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(split_.features.cols()); }
  const Matrix& features() const noexcept { return split_.features; }
  int class_of(std::size_t row) const { return classes_[row]; }
  const std::vector<std::size_t>& rows_of(int c) const { return by_class_[static_cast<std::size_t>(c)]; }

 private:
  SplitData split_;
  std::vector<int> classes_;
  std::vector<std::vector<std::size_t>> by_class_;
};

/// Builds the batch anchored at `anchor`: `positives` same-identity rows, then
/// negatives from other identities, all distinct.
inline Batch assemble_batch(const TrainingSet& set, std::size_t anchor, std::size_t batch_size,
                            std::size_t positives, std::mt19937_64& rng) {
  if (batch_size < 2 || positives < 1 || positives + 2 > batch_size) {
    throw InputError("batch needs an anchor, at least one positive and one negative");
  }
  const int cls = set.class_of(anchor);
  const auto& same = set.rows_of(cls);
  const std::size_t negatives = batch_size - 1 - positives;
  if (same.size() - 1 < positives) throw InputError("identity has too few samples for the batch");
  if (set.size() - same.size() < negatives) throw InputError("dataset too small for the batch size");

  Batch b;
  b.rows.push_back(anchor);
  std::vector<std::size_t> pool;
  for (std::size_t r : same) {
    if (r != anchor) pool.push_back(r);
  }
  for (std::size_t i = 0; i < positives; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    b.rows.push_back(pool[i]);
  }
  std::uniform_int_distribution<std::size_t> any(0, set.size() - 1);
  while (b.rows.size() < batch_size) {
    const std::size_t r = any(rng);
    if (set.class_of(r) == cls) continue;
    if (std::find(b.rows.begin(), b.rows.end(), r) != b.rows.end()) continue;
    b.rows.push_back(r);
  }

  b.inputs.resize(static_cast<Eigen::Index>(batch_size), set.features().cols());
  for (std::size_t i = 0; i < batch_size; ++i) {
    b.inputs.row(static_cast<Eigen::Index>(i)) = set.features().row(static_cast<Eigen::Index>(b.rows[i]));
    b.classes.push_back(set.class_of(b.rows[i]));
  }
  for (std::size_t i = 0; i < batch_size; ++i) {
    for (std::size_t j = i + 1; j < batch_size; ++j) {
      if (b.classes[i] == b.classes[j]) b.positive_pairs.emplace_back(i, j);
    }
  }
  for (std::size_t j = 1; j < batch_size; ++j) {
    if (b.classes[j] != cls) b.negative_pairs.emplace_back(0, j);
  }
  for (std::size_t p = 1; p < batch_size; ++p) {
    if (b.classes[p] != cls) continue;
    for (std::size_t n = 1; n < batch_size; ++n) {
      if (b.classes[n] != cls) b.triplets.push_back({0, p, n});
    }
  }
  return b;
}

/// One epoch of batches: every training row serves once as anchor, in
/// shuffled order.
inline std::vector<Batch> epoch_batches(const TrainingSet& set, std::size_t batch_size,
                                        std::size_t positives, std::mt19937_64& rng) {
  std::vector<std::size_t> anchors(set.size());
  std::iota(anchors.begin(), anchors.end(), std::size_t{0});
  std::shuffle(anchors.begin(), anchors.end(), rng);
  std::vector<Batch> out;
  out.reserve(anchors.size());
  for (std::size_t a : anchors) out.push_back(assemble_batch(set, a, batch_size, positives, rng));
  return out;
}

/// Per-step loss terms, unweighted.
struct LossComponents {
  double classification = 0.0;
  double verification = 0.0;
  double triplet = 0.0;
  double soft = 0.0;
  double hard = 0.0;
  double direct_match = 0.0;
  double fitnet = 0.0;
  double kd = 0.0;
  double total = 0.0;

  LossComponents& operator+=(const LossComponents& o) {
    classification += o.classification;
    verification += o.verification;
    triplet += o.triplet;
    soft += o.soft;
    hard += o.hard;
    direct_match += o.direct_match;
    fitnet += o.fitnet;
    kd += o.kd;
    total += o.total;
    return *this;
  }

  LossComponents scaled(double s) const {
    LossComponents c = *this;
    for (double* v : {&c.classification, &c.verification, &c.triplet, &c.soft, &c.hard,
                      &c.direct_match, &c.fitnet, &c.kd, &c.total}) {
      *v *= s;
    }
    return c;
  }

  std::map<std::string, double> named() const {
    return {{"classification", classification}, {"verification", verification},
            {"triplet", triplet},               {"soft", soft},
            {"hard", hard},                     {"direct_match", direct_match},
            {"fitnet", fitnet},                 {"kd", kd},
            {"total", total}};
  }
};

/// w_cls*CE + w_ver*contrastive + w_tri*triplet + lambda*(rank/embedding
/// transfer) + w_kd*KD, counting only the enabled variant terms.
inline double weighted_total(const LossComponents& c, const ExperimentConfig& cfg,
                             const TransferVariant& variant) {
  const auto& w = cfg.weights;
  double total = w.classification * c.classification + w.verification * c.verification +
                 w.triplet * c.triplet;
  if (variant.soft) total += w.transfer * c.soft;
  if (variant.hard) total += w.transfer * c.hard;
  if (variant.direct_match) total += w.transfer * c.direct_match;
  if (variant.fitnet) total += w.transfer * c.fitnet;
  if (variant.kd) total += cfg.kd.weight * c.kd;
  return total;
}

/// Frozen teacher outputs for the rows of one batch.
struct TeacherView {
  Matrix embeddings;
  Matrix logits;
};

struct StepResult {
  LossComponents components;
  LayerStack grads;
  std::optional<Dense> projection_grad;
};

namespace detail {

inline void require_finite(double v, const char* name, std::size_t step) {
  if (!std::isfinite(v)) throw TrainingError(name, step);
}

}  // namespace detail

/// Loss and parameter gradients of the student on one batch. `projection`
/// maps student embeddings to the teacher width for FitNet when they differ.
inline StepResult step_objective(const NetworkState& student, const Batch& batch,
                                 const TeacherView* teacher, const ExperimentConfig& cfg,
                                 const TransferVariant& variant, const Dense* projection = nullptr,
                                 std::size_t step = 0) {
  if (variant.any() && teacher == nullptr) throw ConfigError("transfer enabled without a teacher");
  const ForwardResult fwd = forward(student, batch.inputs);
  const Matrix& emb = fwd.embeddings.embeddings;
  const auto n = emb.rows();
  Matrix d_emb = Matrix::Zero(n, emb.cols());
  Matrix d_logits = Matrix::Zero(n, fwd.logits.logits.cols());
  const auto& w = cfg.weights;
  StepResult out;
  LossComponents& c = out.components;

  {
    const LogitsBatch logits{fwd.logits.logits, batch.classes};
    const MatrixLoss ce = softmax_ce_loss(logits);
    c.classification = ce.value;
    if (w.classification != 0.0) d_logits += w.classification * ce.grad;
  }

  const std::size_t num_pairs = batch.positive_pairs.size() + batch.negative_pairs.size();
  if (num_pairs > 0) {
    const double scale = w.verification / static_cast<double>(num_pairs);
    auto add_pair = [&](std::size_t i, std::size_t j, bool same) {
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(j);
      const auto r = contrastive_loss(emb.row(a), emb.row(b), same, cfg.margin);
      c.verification += r.value / static_cast<double>(num_pairs);
      if (scale != 0.0) {
        d_emb.row(a) += scale * r.grad.a;
        d_emb.row(b) += scale * r.grad.b;
      }
    };
    for (auto [i, j] : batch.positive_pairs) add_pair(i, j, true);
    for (auto [i, j] : batch.negative_pairs) add_pair(i, j, false);
  }

  if (!batch.triplets.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.triplets.size());
    for (const auto& t : batch.triplets) {
      const auto a = static_cast<Eigen::Index>(t[0]);
      const auto p = static_cast<Eigen::Index>(t[1]);
      const auto q = static_cast<Eigen::Index>(t[2]);
      const auto r = triplet_loss(emb.row(a), emb.row(p), emb.row(q), cfg.margin);
      c.triplet += r.value * inv;
      if (w.triplet != 0.0) {
        d_emb.row(a) += w.triplet * inv * r.grad.anchor;
        d_emb.row(p) += w.triplet * inv * r.grad.positive;
        d_emb.row(q) += w.triplet * inv * r.grad.negative;
      }
    }
  }

  if (variant.soft || variant.hard) {
    const ScoreList teacher_scores = batch_scores(teacher->embeddings, cfg.score);
    const ScoreList student_scores = batch_scores(emb, cfg.score);
    if (variant.soft) {
      const ScoreLoss r = soft_darkrank_loss(teacher_scores, student_scores, cfg.soft_cap);
      c.soft = r.value;
      if (w.transfer != 0.0) {
        d_emb += w.transfer * batch_scores_backward(emb, cfg.score, r.grad);
      }
    }
    if (variant.hard) {
      const ScoreLoss r = hard_darkrank_loss(teacher_scores, student_scores);
      c.hard = r.value;
      if (w.transfer != 0.0) {
        d_emb += w.transfer * batch_scores_backward(emb, cfg.score, r.grad);
      }
    }
  }
  if (variant.direct_match) {
    const MatrixLoss r = direct_match_loss(teacher->embeddings, emb);
    c.direct_match = r.value;
    if (w.transfer != 0.0) d_emb += w.transfer * r.grad;
  }
  if (variant.fitnet) {
    if (projection != nullptr) {
      const Matrix projected = projection->apply(emb);
      const MatrixLoss r = fitnet_loss(teacher->embeddings, projected);
      c.fitnet = r.value;
      Dense g;
      g.weight = w.transfer * r.grad.transpose() * emb;
      g.bias = w.transfer * r.grad.colwise().sum();
      out.projection_grad = std::move(g);
      if (w.transfer != 0.0) d_emb += w.transfer * r.grad * projection->weight;
    } else {
      const MatrixLoss r = fitnet_loss(teacher->embeddings, emb);
      c.fitnet = r.value;
      if (w.transfer != 0.0) d_emb += w.transfer * r.grad;
    }
  }
  if (variant.kd) {
    const MatrixLoss r = kd_loss(LogitsBatch{teacher->logits, {}},
                                 LogitsBatch{fwd.logits.logits, {}}, cfg.kd);
    // Batch mean, matching the classification term's normalization.
    const double inv_n = 1.0 / static_cast<double>(n);
    c.kd = r.value * inv_n;
    if (cfg.kd.weight != 0.0) d_logits += cfg.kd.weight * inv_n * r.grad;
  }

  detail::require_finite(c.classification, "classification", step);
  detail::require_finite(c.verification, "verification", step);
  detail::require_finite(c.triplet, "triplet", step);
  detail::require_finite(c.soft, "soft", step);
  detail::require_finite(c.hard, "hard", step);
  detail::require_finite(c.direct_match, "direct_match", step);
  detail::require_finite(c.fitnet, "fitnet", step);
  detail::require_finite(c.kd, "kd", step);
  c.total = weighted_total(c, cfg, variant);
  detail::require_finite(c.total, "total", step);

  out.grads = backward(student, fwd.tape, d_emb, d_logits);
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  LossComponents mean;  // averaged over the epoch's steps
};

struct TrainReport {
  std::string role;  // "teacher" or "student"
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<EpochLog> epochs;
  std::map<std::string, double> metrics;  // heldout evaluation
  double wall_seconds = 0.0;
  nlohmann::json config;
};

struct TrainResult {
  NetworkState network;
  TrainReport report;
};

/// SGD with momentum; weight decay enters as an L2 gradient term.
class MomentumSgd {
 public:
  MomentumSgd(const LayerStack& shape, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    for (const Dense& d : shape) {
      velocity_.push_back({Matrix::Zero(d.weight.rows(), d.weight.cols()),
                           RowVector::Zero(d.bias.size())});
    }
  }

  void step(LayerStack& params, const LayerStack& grads, double lr) {
    for (std::size_t l = 0; l < params.size(); ++l) {
      Dense& v = velocity_[l];
      v.weight = momentum_ * v.weight + grads[l].weight + weight_decay_ * params[l].weight;
      v.bias = momentum_ * v.bias + grads[l].bias + weight_decay_ * params[l].bias;
      params[l].weight -= lr * v.weight;
      params[l].bias -= lr * v.bias;
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  LayerStack velocity_;
};

/// Heldout-split metrics of a trained network (leave-one-out retrieval,
/// k-means clustering seeded by `seed`).
inline std::map<std::string, double> evaluate(const NetworkState& net, const LabeledDataset& data,
                                              std::uint64_t seed) {
  const SplitData heldout = select_split(data, Split::heldout);
  if (heldout.size() < 2) throw InputError("heldout split needs at least two samples");
  const ForwardResult fwd = forward(net, heldout.features);
  return evaluate_embeddings(fwd.embeddings.embeddings, heldout.identities, seed);
}

namespace detail {

inline NetworkSpec make_spec(const NetworkConfig& net, const TrainingSet& set, std::uint64_t seed) {
  NetworkSpec spec;
  spec.input_dim = set.dim();
  spec.hidden_layers = net.hidden_layers;
  spec.embed_dim = net.embed_dim;
  spec.num_classes = set.num_classes();
  spec.activation = net.activation;
  spec.seed = seed;
  return spec;
}

inline TrainResult run_training(const NetworkSpec& spec, const ExperimentConfig& cfg,
                                const LabeledDataset& data, const NetworkState* teacher,
                                const TransferVariant& variant, const std::string& role) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainingSet set(data);
  NetworkState net = init(spec);

  std::optional<TeacherView> teacher_all;
  std::optional<Dense> projection;
  if (variant.any()) {
    if (teacher == nullptr) throw ConfigError("transfer variant '" + variant.to_string() + "' needs a teacher");
    if (teacher->spec.input_dim != spec.input_dim || teacher->spec.num_classes != spec.num_classes) {
      throw ConfigError("teacher checkpoint does not match the dataset's input or class dimensions");
    }
    const ForwardResult tf = forward(*teacher, set.features());
    teacher_all = TeacherView{tf.embeddings.embeddings, tf.logits.logits};
    if (variant.fitnet && teacher->spec.embed_dim != spec.embed_dim) {
      std::mt19937_64 prng(derive_seed(cfg.seed, 3));
      projection = init_dense(spec.embed_dim, teacher->spec.embed_dim, prng);
    }
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  MomentumSgd sgd(net.layers, cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  std::optional<MomentumSgd> proj_sgd;
  if (projection) proj_sgd.emplace(LayerStack{*projection}, cfg.optimizer.momentum, cfg.optimizer.weight_decay);

  TrainReport report;
  report.role = role;
  report.variant = variant.to_string();
  report.seed = cfg.seed;
  report.config = to_json(cfg);

  std::size_t step = 0;
  TeacherView view;
  for (std::size_t epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    const double lr = cfg.schedule.learning_rate(cfg.optimizer.learning_rate, epoch);
    const auto batches = epoch_batches(set, cfg.batch_size, cfg.positives_per_batch, rng);
    LossComponents sum;
    for (const Batch& b : batches) {
      const TeacherView* tv = nullptr;
      if (teacher_all) {
        view.embeddings.resize(static_cast<Eigen::Index>(b.rows.size()), teacher_all->embeddings.cols());
        view.logits.resize(static_cast<Eigen::Index>(b.rows.size()), teacher_all->logits.cols());
        for (std::size_t i = 0; i < b.rows.size(); ++i) {
          const auto r = static_cast<Eigen::Index>(b.rows[i]);
          view.embeddings.row(static_cast<Eigen::Index>(i)) = teacher_all->embeddings.row(r);
          view.logits.row(static_cast<Eigen::Index>(i)) = teacher_all->logits.row(r);
        }
        tv = &view;
      }
      StepResult r = step_objective(net, b, tv, cfg, variant, projection ? &*projection : nullptr, step);
      sgd.step(net.layers, r.grads, lr);
      if (projection && r.projection_grad) {
        LayerStack p{*projection};
        proj_sgd->step(p, LayerStack{*r.projection_grad}, lr);
        projection = p.front();
      }
      sum += r.components;
      ++step;
    }
    report.epochs.push_back({epoch, lr, sum.scaled(1.0 / static_cast<double>(batches.size()))});
  }
  report.metrics = evaluate(net, data, cfg.seed);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(net), std::move(report)};
}

}  // namespace detail

/// Trains the configured student, distilling from `teacher` according to
/// cfg.variant. The teacher is only read.
inline TrainResult train(const ExperimentConfig& cfg, const LabeledDataset& data,
                         const NetworkState* teacher) {
  cfg.validate();
  const TrainingSet set(data);
  const NetworkSpec spec = detail::make_spec(cfg.student, set, derive_seed(cfg.seed, 1));
  return detail::run_training(spec, cfg, data, teacher, cfg.variant, "student");
}

/// Trains the teacher network with classification, verification and triplet
/// losses only; cfg.variant is ignored.
inline TrainResult train_teacher(const ExperimentConfig& cfg, const LabeledDataset& data) {
  cfg.validate();
  const TrainingSet set(data);
  const NetworkSpec spec = detail::make_spec(cfg.teacher, set, derive_seed(cfg.seed, 2));
  return detail::run_training(spec, cfg, data, nullptr, TransferVariant{}, "teacher");
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"learning_rate", e.learning_rate}, {"loss", e.mean.named()}});
  }
  return {{"role", r.role},       {"variant", r.variant},           {"seed", r.seed},
          {"epochs", epochs},     {"metrics", r.metrics},           {"wall_seconds", r.wall_seconds},
          {"config", r.config}};
}

}  // namespace darkrank
