#pragma once

// Retrieval (CMC Rank-k, mAP, Recall@1) and clustering (pairwise F1, NMI)
// evaluation, plus the k-means used to produce candidate clusterings.

#include "darkrank/errors.hpp"
#include "darkrank/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace darkrank {

/// Ranked gallery for one query; relevant[r] flags whether gallery[r] shares
/// the query's identity.
struct QueryRanking {
  std::vector<std::size_t> gallery;
  std::vector<bool> relevant;
};

struct RetrievalResult {
  std::vector<QueryRanking> queries;
};

/// Each sample queries against all others, nearest first (ties by index).
inline RetrievalResult leave_one_out_retrieval(const Matrix& embeddings,
                                               const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (labels.size() != n) throw InputError("label count does not match embedding rows");
  if (n < 2) throw InputError("retrieval needs at least two samples");
  RetrievalResult out;
  out.queries.resize(n);
  std::vector<double> dist(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < n; ++j) {
      dist[j] = (embeddings.row(static_cast<Eigen::Index>(q)) -
                 embeddings.row(static_cast<Eigen::Index>(j)))
                    .squaredNorm();
    }
    QueryRanking& qr = out.queries[q];
    for (std::size_t j = 0; j < n; ++j) {
      if (j != q) qr.gallery.push_back(j);
    }
    std::stable_sort(qr.gallery.begin(), qr.gallery.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (std::size_t j : qr.gallery) qr.relevant.push_back(labels[j] == labels[q]);
  }
  return out;
}

namespace detail {

inline void check_retrieval(const RetrievalResult& result) {
  if (result.queries.empty()) throw InputError("no queries");
  for (const auto& q : result.queries) {
    if (q.gallery.empty()) throw InputError("empty gallery");
    if (q.gallery.size() != q.relevant.size()) {
      throw InputError("gallery and relevance flags differ in length");
    }
  }
}

}  // namespace detail

/// Fraction of queries with a relevant item among the top k.
inline double cmc_rank_k(const RetrievalResult& result, std::size_t k) {
  if (k < 1) throw InputError("k must be >= 1");
  detail::check_retrieval(result);
  std::size_t hits = 0;
  for (const auto& q : result.queries) {
    const std::size_t depth = std::min(k, q.relevant.size());
    if (std::any_of(q.relevant.begin(), q.relevant.begin() + static_cast<std::ptrdiff_t>(depth),
                    [](bool r) { return r; })) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(result.queries.size());
}

inline double recall_at_1(const RetrievalResult& result) { return cmc_rank_k(result, 1); }

struct MapResult {
  double value = 0.0;
  std::size_t excluded_queries = 0;  // queries with no relevant gallery item
};

inline MapResult mean_average_precision(const RetrievalResult& result) {
  detail::check_retrieval(result);
  MapResult out;
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& q : result.queries) {
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t r = 0; r < q.relevant.size(); ++r) {
      if (!q.relevant[r]) continue;
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) {
      ++out.excluded_queries;
      continue;
    }
    total += sum / static_cast<double>(hits);
    ++counted;
  }
  if (counted == 0) throw InputError("no query has a relevant gallery item");
  out.value = total / static_cast<double>(counted);
  return out;
}

/// Candidate partition and ground-truth classes over the same samples.
struct ClusteringResult {
  std::vector<int> candidate;
  std::vector<int> truth;
};

namespace detail {

struct Contingency {
  std::map<std::pair<int, int>, std::size_t> joint;
  std::map<int, std::size_t> candidate;
  std::map<int, std::size_t> truth;
  std::size_t n = 0;
};

inline Contingency contingency(const ClusteringResult& c) {
  if (c.candidate.size() != c.truth.size()) {
    throw InputError("candidate and ground-truth assignments differ in length");
  }
  Contingency t;
  t.n = c.candidate.size();
  for (std::size_t i = 0; i < t.n; ++i) {
    ++t.joint[{c.candidate[i], c.truth[i]}];
    ++t.candidate[c.candidate[i]];
    ++t.truth[c.truth[i]];
  }
  return t;
}

inline double pairs(std::size_t m) {
  return 0.5 * static_cast<double>(m) * static_cast<double>(m == 0 ? 0 : m - 1);
}

}  // namespace detail

/// Pairwise F1: precision over same-cluster pairs, recall over same-class pairs.
inline double f1_score(const ClusteringResult& clustering) {
  const auto t = detail::contingency(clustering);
  if (t.n < 2) throw InputError("F1 needs at least two samples");
  double tp = 0.0, same_cluster = 0.0, same_class = 0.0;
  for (const auto& [key, m] : t.joint) tp += detail::pairs(m);
  for (const auto& [key, m] : t.candidate) same_cluster += detail::pairs(m);
  for (const auto& [key, m] : t.truth) same_class += detail::pairs(m);
  // Both partitions all-singletons: they agree on every pair.
  if (same_cluster == 0.0 && same_class == 0.0) return 1.0;
  const double precision = same_cluster > 0.0 ? tp / same_cluster : 0.0;
  const double recall = same_class > 0.0 ? tp / same_class : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// 2 I(candidate; truth) / (H(candidate) + H(truth)), natural logs.
inline double nmi(const ClusteringResult& clustering) {
  const auto t = detail::contingency(clustering);
  if (t.n == 0) throw InputError("NMI needs at least one sample");
  const double n = static_cast<double>(t.n);
  auto entropy = [n](const std::map<int, std::size_t>& counts) {
    double h = 0.0;
    for (const auto& [key, m] : counts) {
      const double p = static_cast<double>(m) / n;
      h -= p * std::log(p);
    }
    return h;
  };
  const double hc = entropy(t.candidate);
  const double ht = entropy(t.truth);
  double mi = 0.0;
  for (const auto& [key, m] : t.joint) {
    const double nij = static_cast<double>(m);
    const double a = static_cast<double>(t.candidate.at(key.first));
    const double b = static_cast<double>(t.truth.at(key.second));
    mi += nij / n * std::log(n * nij / (a * b));
  }
  // Zero total entropy means both partitions are a single cluster, i.e. identical.
  if (hc + ht == 0.0) return 1.0;
  return std::clamp(2.0 * mi / (hc + ht), 0.0, 1.0);
}

struct KMeansResult {
  std::vector<int> assignment;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment step
  std::size_t iterations = 0;
};

inline constexpr std::size_t kKMeansMaxIterations = 300;
inline constexpr double kKMeansTolerance = 1e-6;

/// Lloyd's algorithm with k-means++ seeding; deterministic in `seed`.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw InputError("k must be >= 1");
  if (k > n) {
    throw InputError("k = " + std::to_string(k) + " exceeds the number of points " +
                     std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  const auto d = points.cols();
  KMeansResult out;
  out.centroids.resize(static_cast<Eigen::Index>(k), d);

  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (d2[i] <= 0.0) continue;
          pick = i;
          u -= d2[i];
          if (u < 0.0) break;
        }
      } else {
        // Remaining points coincide with chosen centers.
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      }
    }
    chosen[pick] = true;
    out.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      const double dist = (points.row(static_cast<Eigen::Index>(i)) -
                           out.centroids.row(static_cast<Eigen::Index>(c)))
                              .squaredNorm();
      d2[i] = chosen[i] ? 0.0 : std::min(d2[i], dist);
    }
  }

  out.assignment.assign(n, 0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = (points.row(static_cast<Eigen::Index>(i)) -
                             out.centroids.row(static_cast<Eigen::Index>(c)))
                                .squaredNorm();
        if (dist < best) {
          best = dist;
          arg = static_cast<int>(c);
        }
      }
      out.assignment[i] = arg;
      inertia += best;
    }
    out.inertia = inertia;
    out.inertia_history.push_back(inertia);
  };

  assign();
  for (out.iterations = 0; out.iterations < kKMeansMaxIterations;) {
    ++out.iterations;
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(out.assignment[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(out.assignment[i])];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      const RowVector next = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      shift = std::max(shift, (next - out.centroids.row(static_cast<Eigen::Index>(c))).norm());
      out.centroids.row(static_cast<Eigen::Index>(c)) = next;
    }
    assign();
    if (shift <= kKMeansTolerance) break;
  }
  return out;
}

/// Flat metric document for one embedding set: retrieval is leave-one-out,
/// clustering runs k-means with k = number of distinct labels.
inline std::map<std::string, double> evaluate_embeddings(const Matrix& embeddings,
                                                         const std::vector<int>& labels,
                                                         std::uint64_t seed) {
  const RetrievalResult retrieval = leave_one_out_retrieval(embeddings, labels);
  const MapResult map = mean_average_precision(retrieval);
  const std::size_t k = std::set<int>(labels.begin(), labels.end()).size();
  const KMeansResult km = kmeans(embeddings, k, seed);
  const ClusteringResult clustering{km.assignment, labels};
  return {
      {"mAP", map.value},
      {"mAP_excluded_queries", static_cast<double>(map.excluded_queries)},
      {"rank1", cmc_rank_k(retrieval, 1)},
      {"rank5", cmc_rank_k(retrieval, 5)},
      {"rank10", cmc_rank_k(retrieval, 10)},
      {"recall_at_1", recall_at_1(retrieval)},
      {"f1", f1_score(clustering)},
      {"nmi", nmi(clustering)},
  };
}

}  // namespace darkrank
