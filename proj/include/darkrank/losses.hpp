#pragma once

// Companion and baseline losses: softened-softmax distillation, direct
// distance matching, embedding regression, triplet, contrastive and softmax
// cross-entropy.

#include "darkrank/errors.hpp"
#include "darkrank/linalg.hpp"
#include "darkrank/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace darkrank {

/// Class logits, one row per sample. `labels` may be empty when only the
/// logits are needed (distillation targets).
struct LogitsBatch {
  Matrix logits;
  std::vector<int> labels;

  Eigen::Index rows() const noexcept { return logits.rows(); }
  Eigen::Index classes() const noexcept { return logits.cols(); }

  void validate(bool require_labels) const {
    if (!logits.allFinite()) throw InputError("logits must be finite");
    if (require_labels && labels.size() != static_cast<std::size_t>(logits.rows())) {
      throw InputError("label count does not match logit rows");
    }
    for (int y : labels) {
      if (y < 0 || y >= logits.cols()) {
        throw InputError("label " + std::to_string(y) + " outside [0, " +
                         std::to_string(logits.cols()) + ")");
      }
    }
  }
};

struct KDParams {
  double temperature = 4.0;
  double weight = 16.0;  // T^2

  void validate() const {
    if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
    if (!(weight >= 0.0)) throw InputError("KD weight must be >= 0");
  }
};

struct MarginParams {
  double margin = 0.9;

  void validate() const {
    if (!(margin >= 0.0)) throw InputError("margin must be >= 0");
  }
};

using MatrixLoss = LossResult<Matrix>;

struct TripletGrad {
  RowVector anchor;
  RowVector positive;
  RowVector negative;
};

struct PairGrad {
  RowVector a;
  RowVector b;
};

namespace detail {

// Numerically stable row softmax and log-softmax.
inline void softmax_row(const RowVector& z, RowVector& p, RowVector& logp) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  logp = (z.array() - lse).matrix();
  p = logp.array().exp().matrix();
}

inline void check_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw InputError(std::string(what) + " dimensions differ: " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

}  // namespace detail

/// sum_i KL[softmax(t_i / T) || softmax(s_i / T)], gradient w.r.t. student logits.
/// The configured weight is not applied here.
inline MatrixLoss kd_loss(const LogitsBatch& teacher, const LogitsBatch& student,
                          const KDParams& params) {
  params.validate();
  teacher.validate(false);
  student.validate(false);
  if (teacher.rows() != student.rows() || teacher.classes() != student.classes()) {
    throw InputError("teacher and student logits differ in shape");
  }
  const double t = params.temperature;
  MatrixLoss out;
  out.grad = Matrix::Zero(student.rows(), student.classes());
  RowVector pt, lpt, ps, lps;
  for (Eigen::Index i = 0; i < student.rows(); ++i) {
    detail::softmax_row(teacher.logits.row(i) / t, pt, lpt);
    detail::softmax_row(student.logits.row(i) / t, ps, lps);
    out.value += (pt.array() * (lpt - lps).array()).sum();
    out.grad.row(i) = (ps - pt) / t;
  }
  return out;
}

/// sum_{i>=1} (||s_i - s_0||^2 - ||t_i - t_0||^2)^2 with row 0 as the anchor.
/// Teacher and student embedding widths may differ.
inline MatrixLoss direct_match_loss(const Matrix& teacher, const Matrix& student) {
  if (teacher.rows() != student.rows()) {
    throw InputError("teacher and student batches differ in size");
  }
  if (student.rows() < 2) throw InputError("batch needs an anchor and at least one candidate");
  MatrixLoss out;
  out.grad = Matrix::Zero(student.rows(), student.cols());
  for (Eigen::Index i = 1; i < student.rows(); ++i) {
    const RowVector ds = student.row(i) - student.row(0);
    const double residual = ds.squaredNorm() - (teacher.row(i) - teacher.row(0)).squaredNorm();
    out.value += residual * residual;
    const RowVector g = 4.0 * residual * ds;
    out.grad.row(i) += g;
    out.grad.row(0) -= g;
  }
  return out;
}

/// sum_i ||s_i - t_i||^2.
inline MatrixLoss fitnet_loss(const Matrix& teacher, const Matrix& student) {
  if (teacher.rows() != student.rows()) {
    throw InputError("teacher and student batches differ in size");
  }
  detail::check_same_dim(teacher.cols(), student.cols(), "teacher and student embedding");
  const Matrix diff = student - teacher;
  return {diff.squaredNorm(), 2.0 * diff};
}

/// max(0, ||a - p||^2 - ||a - n||^2 + margin); zero subgradient when inactive.
inline LossResult<TripletGrad> triplet_loss(const RowVector& anchor, const RowVector& positive,
                                            const RowVector& negative,
                                            const MarginParams& params) {
  params.validate();
  detail::check_same_dim(anchor.size(), positive.size(), "anchor and positive");
  detail::check_same_dim(anchor.size(), negative.size(), "anchor and negative");
  const RowVector ap = anchor - positive;
  const RowVector an = anchor - negative;
  const double slack = ap.squaredNorm() - an.squaredNorm() + params.margin;
  LossResult<TripletGrad> out;
  if (slack <= 0.0) {
    const auto zero = RowVector::Zero(anchor.size());
    out.grad = {zero, zero, zero};
    return out;
  }
  out.value = slack;
  out.grad = {2.0 * (negative - positive), -2.0 * ap, 2.0 * an};
  return out;
}

/// Positive pair: ||a - b||^2. Negative pair: max(0, margin - ||a - b||)^2.
inline LossResult<PairGrad> contrastive_loss(const RowVector& a, const RowVector& b,
                                             bool same_identity, const MarginParams& params) {
  params.validate();
  detail::check_same_dim(a.size(), b.size(), "pair");
  const RowVector diff = a - b;
  LossResult<PairGrad> out;
  if (same_identity) {
    out.value = diff.squaredNorm();
    out.grad = {2.0 * diff, -2.0 * diff};
    return out;
  }
  const double dist = diff.norm();
  const double gap = params.margin - dist;
  if (gap <= 0.0) {
    out.grad = {RowVector::Zero(a.size()), RowVector::Zero(a.size())};
    return out;
  }
  out.value = gap * gap;
  // Direction is undefined for coincident points; use the zero subgradient.
  const RowVector ga = dist > 0.0 ? RowVector(-2.0 * gap / dist * diff) : RowVector::Zero(a.size());
  out.grad = {ga, -ga};
  return out;
}

/// Mean softmax cross-entropy over the batch.
inline MatrixLoss softmax_ce_loss(const LogitsBatch& batch) {
  batch.validate(true);
  if (batch.rows() == 0) throw InputError("empty logits batch");
  const double inv_n = 1.0 / static_cast<double>(batch.rows());
  MatrixLoss out;
  out.grad = Matrix::Zero(batch.rows(), batch.classes());
  RowVector p, logp;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    detail::softmax_row(batch.logits.row(i), p, logp);
    const auto y = static_cast<Eigen::Index>(batch.labels[static_cast<std::size_t>(i)]);
    out.value -= logp(y) * inv_n;
    p(y) -= 1.0;
    out.grad.row(i) = p * inv_n;
  }
  return out;
}

}  // namespace darkrank
