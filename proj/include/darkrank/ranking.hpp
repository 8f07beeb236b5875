#pragma once

// Plackett-Luce permutation model over similarity scores and the listwise
// losses built on it (ListNet, ListMLE, soft and hard rank transfer).
//
// All evaluation happens in log space. Every softmax denominator is a suffix
// log-sum-exp accumulated from the tail of the permutation, so arbitrarily
// large scores never overflow.

#include "darkrank/errors.hpp"
#include "darkrank/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace darkrank {

/// Per-candidate log-strengths for one query. Non-empty and finite.
class ScoreList {
 public:
  explicit ScoreList(std::vector<double> scores) : scores_(std::move(scores)) {
    if (scores_.empty()) throw InputError("ScoreList must not be empty");
    for (double s : scores_) {
      if (!std::isfinite(s)) throw InputError("ScoreList entries must be finite");
    }
  }
  ScoreList(std::initializer_list<double> scores)
      : ScoreList(std::vector<double>(scores)) {}

  std::size_t size() const noexcept { return scores_.size(); }
  double operator[](std::size_t i) const noexcept { return scores_[i]; }
  std::span<const double> values() const noexcept { return scores_; }
  const std::vector<double>& vector() const noexcept { return scores_; }
  auto begin() const noexcept { return scores_.begin(); }
  auto end() const noexcept { return scores_.end(); }

  /// Copy with `c` added to every score.
  ScoreList shifted(double c) const {
    std::vector<double> out(scores_);
    for (double& s : out) s += c;
    return ScoreList(std::move(out));
  }

  friend bool operator==(const ScoreList&, const ScoreList&) = default;

 private:
  std::vector<double> scores_;
};

/// An ordering of candidate indices (0-based): order()[r] is the candidate
/// placed at rank r.
class Permutation {
 public:
  explicit Permutation(std::vector<std::size_t> order) : order_(std::move(order)) {
    std::vector<bool> seen(order_.size(), false);
    for (std::size_t idx : order_) {
      if (idx >= order_.size() || seen[idx]) {
        throw InputError("Permutation is not a bijection on its index set");
      }
      seen[idx] = true;
    }
  }
  Permutation(std::initializer_list<std::size_t> order)
      : Permutation(std::vector<std::size_t>(order)) {}

  static Permutation identity(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return Permutation(std::move(order));
  }

  std::size_t size() const noexcept { return order_.size(); }
  std::size_t operator[](std::size_t rank) const noexcept { return order_[rank]; }
  std::span<const std::size_t> order() const noexcept { return order_; }

  friend bool operator==(const Permutation&, const Permutation&) = default;
  friend auto operator<=>(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> order_;
};

/// Distance-to-score mapping S = -alpha * d^beta.
struct ScoreParams {
  double alpha = 3.0;
  double beta = 3.0;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InputError("alpha must be > 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("beta must be > 0");
  }
};

/// Scalar loss and its gradient with respect to the loss's direct inputs.
template <typename Grad>
struct LossResult {
  double value = 0.0;
  Grad grad{};
};

using ScoreLoss = LossResult<std::vector<double>>;

/// Soft transfer enumerates n! permutations; this is the default ceiling on n.
inline constexpr std::size_t kDefaultEnumerationCap = 8;

namespace detail {

inline void check_same_length(const ScoreList& a, const ScoreList& b) {
  if (a.size() != b.size()) {
    throw InputError("score lists differ in length: " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
}

inline void check_perm_fits(const ScoreList& s, const Permutation& p) {
  if (p.size() != s.size()) {
    throw InputError("permutation length " + std::to_string(p.size()) +
                     " does not match score list length " + std::to_string(s.size()));
  }
}

inline void check_enumerable(std::size_t n, std::size_t cap) {
  if (n > cap) {
    throw CapacityError("list of " + std::to_string(n) +
                        " candidates exceeds the soft-transfer enumeration cap of " +
                        std::to_string(cap) + "; use hard transfer for long lists");
  }
}

// suffix[r] = log sum_{k >= r} exp(s[order[k]])
inline void suffix_log_sum_exp(std::span<const double> s, std::span<const std::size_t> order,
                               std::vector<double>& suffix) {
  suffix.resize(order.size());
  double acc = kNegInf;
  for (std::size_t r = order.size(); r-- > 0;) {
    acc = log_add_exp(acc, s[order[r]]);
    suffix[r] = acc;
  }
}

inline double log_prob(std::span<const double> s, std::span<const std::size_t> order) {
  double acc = kNegInf;
  double total = 0.0;
  for (std::size_t r = order.size(); r-- > 0;) {
    const double v = s[order[r]];
    acc = log_add_exp(acc, v);
    total += v - acc;
  }
  return total;
}

// out[j] += weight * d log P(order | s) / d s_j. `suffix` is scratch space.
inline void accumulate_log_prob_grad(std::span<const double> s,
                                     std::span<const std::size_t> order, double weight,
                                     std::span<double> out, std::vector<double>& suffix) {
  suffix_log_sum_exp(s, order, suffix);
  // running = log sum_{k <= r} exp(-suffix[k]); each term exp(s_j - suffix[k]) <= 1.
  double running = kNegInf;
  for (std::size_t r = 0; r < order.size(); ++r) {
    running = log_add_exp(running, -suffix[r]);
    const std::size_t j = order[r];
    out[j] += weight * (1.0 - std::exp(s[j] + running));
  }
}

// Visits every permutation of {0..n-1} in lexicographic order.
template <typename Fn>
void for_each_permutation(std::size_t n, Fn&& fn) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  do {
    fn(std::span<const std::size_t>(order));
  } while (std::next_permutation(order.begin(), order.end()));
}

// Sums over all n! permutations of the truth distribution, returning
// (sum_pi P_t log P_t, -sum_pi P_t log P_s) and the gradient of the latter.
//
// log P(pi) = sum_r [s_pi(r) - LSE(R_r)] where R_r is the set of items not yet
// placed before rank r, so both sums factor through remaining-set marginals
// W(R) = P_t(the first n - |R| picks are exactly the complement of R). W is
// obtained by pushing mass from each set to its one-smaller subsets, giving
// an exact O(2^n n) evaluation in place of O(n! n).
struct CrossTerms {
  double neg_entropy = 0.0;
  double cross_entropy = 0.0;
  std::vector<double> grad;
};

inline std::vector<double> subset_log_sum_exp(std::span<const double> s) {
  const std::size_t full = std::size_t{1} << s.size();
  std::vector<double> lse(full, kNegInf);
  for (std::size_t mask = 1; mask < full; ++mask) {
    const auto low = static_cast<std::size_t>(std::countr_zero(mask));
    lse[mask] = log_add_exp(lse[mask & (mask - 1)], s[low]);
  }
  return lse;
}

inline CrossTerms cross_terms(const ScoreList& truth, const ScoreList& model, std::size_t cap) {
  check_same_length(truth, model);
  check_enumerable(truth.size(), cap);
  const std::size_t n = truth.size();
  const std::size_t full = std::size_t{1} << n;
  const auto lse_t = subset_log_sum_exp(truth.values());
  const auto lse_s = subset_log_sum_exp(model.values());

  CrossTerms out;
  out.grad.assign(n, 0.0);
  std::vector<double> mass(full, 0.0);
  mass[full - 1] = 1.0;
  // Subsets are numerically smaller than their supersets.
  for (std::size_t mask = full - 1; mask > 0; --mask) {
    const double w = mass[mask];
    if (w == 0.0 || (mask & (mask - 1)) == 0) continue;  // singletons contribute nothing
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t bit = std::size_t{1} << j;
      if ((mask & bit) == 0) continue;
      const double log_pt = truth[j] - lse_t[mask];
      const double log_ps = model[j] - lse_s[mask];
      const double pt = std::exp(log_pt);
      out.neg_entropy += w * pt * log_pt;
      out.cross_entropy -= w * pt * log_ps;
      out.grad[j] += w * (std::exp(log_ps) - pt);
      mass[mask ^ bit] += w * pt;
    }
  }
  return out;
}

}  // namespace detail

/// S(q, x) = -alpha * ||q - x||^beta. Always <= 0, and 0 exactly when q == x.
template <typename A, typename B>
double score(const Eigen::MatrixBase<A>& query, const Eigen::MatrixBase<B>& candidate,
             const ScoreParams& params) {
  params.validate();
  if (query.size() != candidate.size()) {
    throw InputError("query and candidate dimensions differ");
  }
  const double dist = (query.derived().reshaped() - candidate.derived().reshaped()).norm();
  if (dist == 0.0) return 0.0;
  return -params.alpha * std::pow(dist, params.beta);
}

/// log P(perm | scores) under the Plackett-Luce model.
inline double perm_log_prob(const ScoreList& scores, const Permutation& perm) {
  detail::check_perm_fits(scores, perm);
  return detail::log_prob(scores.values(), perm.order());
}

/// Gradient of log P(perm | scores) with respect to every score. For the
/// candidate at rank r: 1 - sum_{k <= r} exp(S_j) / sum_{m >= k} exp(S_perm(m)).
inline std::vector<double> perm_log_prob_grad(const ScoreList& scores, const Permutation& perm) {
  detail::check_perm_fits(scores, perm);
  std::vector<double> grad(scores.size(), 0.0);
  std::vector<double> scratch;
  detail::accumulate_log_prob_grad(scores.values(), perm.order(), 1.0, grad, scratch);
  return grad;
}

/// Mode of the Plackett-Luce distribution: indices by descending score,
/// ties broken by ascending index.
inline Permutation best_permutation(const ScoreList& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return Permutation(std::move(order));
}

/// Entropy of the full permutation distribution induced by `scores`.
inline double permutation_entropy(const ScoreList& scores,
                                  std::size_t cap = kDefaultEnumerationCap) {
  detail::check_enumerable(scores.size(), cap);
  double h = 0.0;
  detail::for_each_permutation(scores.size(), [&](std::span<const std::size_t> order) {
    const double lp = detail::log_prob(scores.values(), order);
    h -= std::exp(lp) * lp;
  });
  return h;
}

/// KL(P(.|teacher) || P(.|student)) over all n! permutations; gradient is with
/// respect to the student scores only.
inline ScoreLoss soft_darkrank_loss(const ScoreList& teacher_scores,
                                    const ScoreList& student_scores,
                                    std::size_t cap = kDefaultEnumerationCap) {
  auto terms = detail::cross_terms(teacher_scores, student_scores, cap);
  return {terms.neg_entropy + terms.cross_entropy, std::move(terms.grad)};
}

/// Cross-entropy between the truth and model permutation distributions.
inline ScoreLoss listnet_loss(const ScoreList& truth_scores, const ScoreList& model_scores,
                              std::size_t cap = kDefaultEnumerationCap) {
  auto terms = detail::cross_terms(truth_scores, model_scores, cap);
  return {terms.cross_entropy, std::move(terms.grad)};
}

/// Negative log-likelihood of a ground-truth ranking.
inline ScoreLoss listmle_loss(const Permutation& ground_truth, const ScoreList& model_scores) {
  detail::check_perm_fits(model_scores, ground_truth);
  ScoreLoss out;
  out.value = -detail::log_prob(model_scores.values(), ground_truth.order());
  out.grad.assign(model_scores.size(), 0.0);
  std::vector<double> scratch;
  detail::accumulate_log_prob_grad(model_scores.values(), ground_truth.order(), -1.0, out.grad,
                                   scratch);
  return out;
}

/// Negative student log-likelihood of the teacher's most probable ranking.
inline ScoreLoss hard_darkrank_loss(const ScoreList& teacher_scores,
                                    const ScoreList& student_scores) {
  detail::check_same_length(teacher_scores, student_scores);
  return listmle_loss(best_permutation(teacher_scores), student_scores);
}

/// Scores of rows 1..n-1 against the anchor row 0.
inline ScoreList batch_scores(const Matrix& embeddings, const ScoreParams& params) {
  params.validate();
  if (embeddings.rows() < 2) throw InputError("batch needs an anchor and at least one candidate");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(embeddings.rows() - 1));
  for (Eigen::Index i = 1; i < embeddings.rows(); ++i) {
    out.push_back(score(embeddings.row(0), embeddings.row(i), params));
  }
  return ScoreList(std::move(out));
}

inline constexpr double kCoincidentDistance = 1e-12;

/// dS/dx for S = -alpha ||q - x||^beta, i.e. alpha*beta*d^(beta-2)*(q - x).
/// dS/dq is its negation. Zero at coincident points when beta < 2.
template <typename A, typename B>
RowVector score_grad_candidate(const Eigen::MatrixBase<A>& query,
                               const Eigen::MatrixBase<B>& candidate, const ScoreParams& params) {
  const RowVector diff = query.derived().reshaped().transpose() -
                         candidate.derived().reshaped().transpose();
  const double dist = diff.norm();
  if (dist < kCoincidentDistance && params.beta < 2.0) return RowVector::Zero(diff.size());
  if (dist == 0.0) return RowVector::Zero(diff.size());
  return params.alpha * params.beta * std::pow(dist, params.beta - 2.0) * diff;
}

/// Backpropagates dL/dS (one entry per candidate) to dL/d(embeddings).
inline Matrix batch_scores_backward(const Matrix& embeddings, const ScoreParams& params,
                                    std::span<const double> score_grad) {
  params.validate();
  if (embeddings.rows() < 2) throw InputError("batch needs an anchor and at least one candidate");
  if (score_grad.size() != static_cast<std::size_t>(embeddings.rows() - 1)) {
    throw InputError("score gradient length does not match candidate count");
  }
  Matrix grad = Matrix::Zero(embeddings.rows(), embeddings.cols());
  for (Eigen::Index i = 1; i < embeddings.rows(); ++i) {
    const double g = score_grad[static_cast<std::size_t>(i - 1)];
    if (g == 0.0) continue;
    const RowVector d = score_grad_candidate(embeddings.row(0), embeddings.row(i), params);
    grad.row(i) += g * d;
    grad.row(0) -= g * d;
  }
  return grad;
}

}  // namespace darkrank
