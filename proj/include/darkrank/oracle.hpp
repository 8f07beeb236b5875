#pragma once

// Brute-force verifiers. Nothing here calls into the factored log-space code
// in ranking.hpp: probabilities are products of explicit ratios, losses are
// computed from fully materialized n!-length probability vectors, and
// gradients come from central differences.

#include "darkrank/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace darkrank::oracle {

inline constexpr std::size_t kOracleCap = 8;

/// Every permutation of {0..n-1} (lexicographic) with its probability.
struct PermutationDistribution {
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> permutations;
  std::vector<double> probabilities;

  std::size_t argmax() const {
    return static_cast<std::size_t>(
        std::max_element(probabilities.begin(), probabilities.end()) - probabilities.begin());
  }
};

/// Direct evaluation of prod_i exp(s_pi(i)) / sum_{k>=i} exp(s_pi(k)).
inline PermutationDistribution enumerate_distribution(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n == 0) throw InputError("empty score list");
  if (n > kOracleCap) {
    throw CapacityError("oracle enumeration is limited to " + std::to_string(kOracleCap) +
                        " items, got " + std::to_string(n));
  }
  // A common factor exp(-max) cancels in every ratio.
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> strength(n);
  for (std::size_t i = 0; i < n; ++i) strength[i] = std::exp(scores[i] - top);

  PermutationDistribution dist;
  dist.n = n;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  do {
    double p = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0.0;
      for (std::size_t k = i; k < n; ++k) denom += strength[perm[k]];
      p *= strength[perm[i]] / denom;
    }
    dist.permutations.push_back(perm);
    dist.probabilities.push_back(p);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return dist;
}

/// KL(teacher || student) from two explicit distributions.
inline double naive_soft_loss(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) throw InputError("score lists differ in length");
  const auto pt = enumerate_distribution(teacher);
  const auto ps = enumerate_distribution(student);
  double kl = 0.0;
  for (std::size_t i = 0; i < pt.probabilities.size(); ++i) {
    const double p = pt.probabilities[i];
    if (p > 0.0) kl += p * std::log(p / ps.probabilities[i]);
  }
  return kl;
}

/// -sum p log p of an explicit distribution.
inline double entropy(const PermutationDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

using ScalarFn = std::function<double(std::span<const double>)>;

inline constexpr double kDefaultStep = 1e-5;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
inline std::vector<double> finite_diff_grad(const ScalarFn& fn, std::span<const double> point,
                                            double h = kDefaultStep) {
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = fn(x);
    x[i] = saved - h;
    const double down = fn(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("non-finite function value when perturbing coordinate " +
                           std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// |a - b| / max(|a|, |b|, 1e-8).
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradCheckEntry {
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::string name;
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  double tolerance = 1e-4;
  bool pass = true;

  /// Folds another report's entries into this one.
  void merge(const GradCheckReport& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
    max_relative_error = std::max(max_relative_error, other.max_relative_error);
    pass = max_relative_error <= tolerance;
  }
};

inline GradCheckReport compare_gradients(std::string name, std::span<const double> analytic,
                                         std::span<const double> numeric, double tolerance) {
  if (analytic.size() != numeric.size()) throw InputError("gradient lengths differ");
  GradCheckReport report;
  report.name = std::move(name);
  report.tolerance = tolerance;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = relative_error(analytic[i], numeric[i]);
    report.entries.push_back({analytic[i], numeric[i], err});
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  report.pass = report.max_relative_error <= tolerance;
  return report;
}

/// Checks `analytic` against central differences of `fn` at `point`.
inline GradCheckReport grad_check(std::string name, const ScalarFn& fn,
                                  std::span<const double> point, std::span<const double> analytic,
                                  double tolerance = 1e-4, double h = kDefaultStep) {
  const auto numeric = finite_diff_grad(fn, point, h);
  return compare_gradients(std::move(name), analytic, numeric, tolerance);
}

}  // namespace darkrank::oracle
