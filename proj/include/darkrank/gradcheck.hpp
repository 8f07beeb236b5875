#pragma once

// Randomized finite-difference suite over every differentiable component.
// Each case draws one random instance per call and reports the worst
// relative error between the analytic and central-difference gradients.

#include "darkrank/losses.hpp"
#include "darkrank/network.hpp"
#include "darkrank/oracle.hpp"
#include "darkrank/ranking.hpp"
#include "darkrank/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace darkrank {

struct GradientCase {
  std::string name;
  std::function<oracle::GradCheckReport(std::mt19937_64&, double tolerance)> check;
};

struct GradientSuiteResult {
  std::vector<oracle::GradCheckReport> reports;  // one per case, merged over instances
  std::size_t instances = 0;
  bool pass = true;
};

namespace detail {

inline std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  const auto v = normal_vector(static_cast<std::size_t>(m.size()), rng, scale);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

inline std::vector<double> to_vector(const Matrix& m) {
  return {m.data(), m.data() + m.size()};
}

inline Matrix as_matrix(std::span<const double> x, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(x.data(), rows, cols);
}

inline ScoreList as_scores(std::span<const double> x) {
  return ScoreList(std::vector<double>(x.begin(), x.end()));
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Checks the loss of a score list with `fn` returning value and gradient.
template <class Fn>
oracle::GradCheckReport check_scores(std::string name, std::size_t n, std::mt19937_64& rng,
                                     double tolerance, Fn fn) {
  const auto s = normal_vector(n, rng, 1.5);
  const auto analytic = fn(as_scores(s)).grad;
  return oracle::grad_check(
      std::move(name), [&](std::span<const double> x) { return fn(as_scores(x)).value; }, s,
      analytic, tolerance);
}

// Small random network with a smooth objective spanning both heads and the
// ranking loss: sum(C * u) + CE(logits) + soft(teacher, scores(u)).
inline oracle::GradCheckReport check_network(std::mt19937_64& rng, double tolerance) {
  NetworkSpec spec;
  spec.input_dim = pick(rng, 2, 6);
  spec.hidden_layers.resize(pick(rng, 0, 2));
  for (auto& w : spec.hidden_layers) w = pick(rng, 2, 6);
  spec.embed_dim = pick(rng, 2, 5);
  spec.num_classes = pick(rng, 2, 4);
  spec.activation = pick(rng, 0, 1) == 0 ? Activation::tanh : Activation::relu;
  spec.seed = rng();
  NetworkState net = init(spec);
  for (Dense& d : net.layers) d.bias = normal_matrix(1, d.out(), rng, 0.1);

  const auto rows = static_cast<Eigen::Index>(pick(rng, 3, 6));
  const Matrix inputs = normal_matrix(rows, static_cast<Eigen::Index>(spec.input_dim), rng);
  const Matrix coeff = normal_matrix(rows, static_cast<Eigen::Index>(spec.embed_dim), rng);
  std::vector<int> labels(static_cast<std::size_t>(rows));
  for (int& y : labels) y = static_cast<int>(pick(rng, 0, spec.num_classes - 1));
  const ScoreList teacher(normal_vector(static_cast<std::size_t>(rows - 1), rng));
  const ScoreParams params{1.0, 2.0};

  auto objective = [&](const NetworkState& state, bool with_grad, LayerStack* grads) {
    const ForwardResult fwd = forward(state, inputs);
    const Matrix& u = fwd.embeddings.embeddings;
    const MatrixLoss ce = softmax_ce_loss(LogitsBatch{fwd.logits.logits, labels});
    const ScoreLoss rank = soft_darkrank_loss(teacher, batch_scores(u, params));
    const double value = (coeff.array() * u.array()).sum() + ce.value + rank.value;
    if (with_grad) {
      const Matrix d_emb = coeff + batch_scores_backward(u, params, rank.grad);
      *grads = backward(state, fwd.tape, d_emb, ce.grad);
    }
    return value;
  };

  LayerStack grads;
  objective(net, true, &grads);
  const std::vector<double> point = flatten(net.layers);
  NetworkState probe = net;
  return oracle::grad_check(
      "network",
      [&](std::span<const double> x) {
        unflatten(x, probe.layers);
        return objective(probe, false, nullptr);
      },
      point, flatten(grads), tolerance);
}

// One training step with smooth terms only (hinged terms are weighted zero
// so the objective has no kinks near the sample point).
inline oracle::GradCheckReport check_step(std::mt19937_64& rng, double tolerance) {
  NetworkSpec spec;
  spec.input_dim = 4;
  spec.hidden_layers = {5};
  spec.embed_dim = 3;
  spec.num_classes = 3;
  spec.activation = Activation::tanh;
  spec.seed = rng();
  NetworkState net = init(spec);

  Batch batch;
  batch.inputs = normal_matrix(5, 4, rng);
  batch.classes = {0, 0, 1, 2, 1};
  batch.rows = {0, 1, 2, 3, 4};
  TeacherView teacher{normal_matrix(5, 3, rng), normal_matrix(5, 3, rng)};
  teacher.embeddings.rowwise().normalize();

  ExperimentConfig cfg;
  cfg.weights.verification = 0.0;
  cfg.weights.triplet = 0.0;
  cfg.score = {1.0, 3.0};
  const auto variant = TransferVariant::parse("kd+soft+hard+direct_match+fitnet");

  const StepResult step = step_objective(net, batch, &teacher, cfg, variant);
  NetworkState probe = net;
  return oracle::grad_check(
      "step_objective",
      [&](std::span<const double> x) {
        unflatten(x, probe.layers);
        return step_objective(probe, batch, &teacher, cfg, variant).components.total;
      },
      flatten(net.layers), flatten(step.grads), tolerance);
}

}  // namespace detail

inline std::vector<GradientCase> gradient_cases() {
  using detail::as_matrix;
  using detail::normal_matrix;
  using detail::normal_vector;
  using detail::pick;
  using detail::to_vector;
  std::vector<GradientCase> cases;

  cases.push_back({"perm_log_prob", [](std::mt19937_64& rng, double tol) {
    const std::size_t n = pick(rng, 1, 7);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const Permutation perm(order);
    struct Wrap {
      Permutation p;
      ScoreLoss operator()(const ScoreList& s) const {
        return {perm_log_prob(s, p), perm_log_prob_grad(s, p)};
      }
    };
    return detail::check_scores("perm_log_prob", n, rng, tol, Wrap{perm});
  }});

  cases.push_back({"soft_darkrank", [](std::mt19937_64& rng, double tol) {
    const std::size_t n = pick(rng, 2, 7);
    const ScoreList t(normal_vector(n, rng, 1.5));
    return detail::check_scores("soft_darkrank", n, rng, tol,
                                [&](const ScoreList& s) { return soft_darkrank_loss(t, s); });
  }});

  cases.push_back({"hard_darkrank", [](std::mt19937_64& rng, double tol) {
    const std::size_t n = pick(rng, 2, 12);
    const ScoreList t(normal_vector(n, rng, 1.5));
    return detail::check_scores("hard_darkrank", n, rng, tol,
                                [&](const ScoreList& s) { return hard_darkrank_loss(t, s); });
  }});

  cases.push_back({"listnet", [](std::mt19937_64& rng, double tol) {
    const std::size_t n = pick(rng, 2, 7);
    const ScoreList t(normal_vector(n, rng, 1.5));
    return detail::check_scores("listnet", n, rng, tol,
                                [&](const ScoreList& s) { return listnet_loss(t, s); });
  }});

  cases.push_back({"listmle", [](std::mt19937_64& rng, double tol) {
    const std::size_t n = pick(rng, 2, 12);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const Permutation truth(order);
    return detail::check_scores("listmle", n, rng, tol,
                                [&](const ScoreList& s) { return listmle_loss(truth, s); });
  }});

  cases.push_back({"batch_scores", [](std::mt19937_64& rng, double tol) {
    const auto rows = static_cast<Eigen::Index>(pick(rng, 2, 7));
    const auto dim = static_cast<Eigen::Index>(pick(rng, 2, 6));
    Matrix emb = normal_matrix(rows, dim, rng);
    emb.rowwise().normalize();
    const ScoreParams params{std::uniform_real_distribution<double>(0.5, 4.0)(rng),
                             static_cast<double>(pick(rng, 1, 4))};
    const auto upstream = normal_vector(static_cast<std::size_t>(rows - 1), rng);
    const Matrix analytic = batch_scores_backward(emb, params, upstream);
    return oracle::grad_check(
        "batch_scores",
        [&](std::span<const double> x) {
          const ScoreList s = batch_scores(as_matrix(x, rows, dim), params);
          double acc = 0.0;
          for (std::size_t i = 0; i < s.size(); ++i) acc += upstream[i] * s[i];
          return acc;
        },
        to_vector(emb), to_vector(analytic), tol);
  }});

  cases.push_back({"kd", [](std::mt19937_64& rng, double tol) {
    const auto rows = static_cast<Eigen::Index>(pick(rng, 1, 5));
    const auto classes = static_cast<Eigen::Index>(pick(rng, 2, 6));
    const KDParams params{std::uniform_real_distribution<double>(0.5, 6.0)(rng), 1.0};
    const LogitsBatch teacher{normal_matrix(rows, classes, rng, 3.0), {}};
    const Matrix s = normal_matrix(rows, classes, rng, 3.0);
    return oracle::grad_check(
        "kd",
        [&](std::span<const double> x) {
          return kd_loss(teacher, LogitsBatch{as_matrix(x, rows, classes), {}}, params).value;
        },
        to_vector(s), to_vector(kd_loss(teacher, LogitsBatch{s, {}}, params).grad), tol);
  }});

  cases.push_back({"direct_match", [](std::mt19937_64& rng, double tol) {
    const auto rows = static_cast<Eigen::Index>(pick(rng, 2, 6));
    const auto dim = static_cast<Eigen::Index>(pick(rng, 1, 5));
    const Matrix t = normal_matrix(rows, static_cast<Eigen::Index>(pick(rng, 1, 5)), rng);
    const Matrix s = normal_matrix(rows, dim, rng);
    return oracle::grad_check(
        "direct_match",
        [&](std::span<const double> x) { return direct_match_loss(t, as_matrix(x, rows, dim)).value; },
        to_vector(s), to_vector(direct_match_loss(t, s).grad), tol);
  }});

  cases.push_back({"fitnet", [](std::mt19937_64& rng, double tol) {
    const auto rows = static_cast<Eigen::Index>(pick(rng, 1, 6));
    const auto dim = static_cast<Eigen::Index>(pick(rng, 1, 5));
    const Matrix t = normal_matrix(rows, dim, rng);
    const Matrix s = normal_matrix(rows, dim, rng);
    return oracle::grad_check(
        "fitnet",
        [&](std::span<const double> x) { return fitnet_loss(t, as_matrix(x, rows, dim)).value; },
        to_vector(s), to_vector(fitnet_loss(t, s).grad), tol);
  }});

  cases.push_back({"triplet", [](std::mt19937_64& rng, double tol) {
    const auto dim = static_cast<Eigen::Index>(pick(rng, 1, 5));
    const MarginParams margin{0.9};
    // Redraw until the hinge is active and well away from its kink.
    Matrix abc;
    do {
      abc = normal_matrix(3, dim, rng, 0.6);
    } while ((abc.row(0) - abc.row(1)).squaredNorm() - (abc.row(0) - abc.row(2)).squaredNorm() +
                 margin.margin < 1e-2);
    return oracle::grad_check(
        "triplet",
        [&](std::span<const double> x) {
          const Matrix m = as_matrix(x, 3, dim);
          return triplet_loss(m.row(0), m.row(1), m.row(2), margin).value;
        },
        to_vector(abc), [&] {
          const auto r = triplet_loss(abc.row(0), abc.row(1), abc.row(2), margin);
          Matrix g(3, dim);
          g << r.grad.anchor, r.grad.positive, r.grad.negative;
          return to_vector(g);
        }(),
        tol);
  }});

  cases.push_back({"contrastive", [](std::mt19937_64& rng, double tol) {
    const auto dim = static_cast<Eigen::Index>(pick(rng, 1, 5));
    const MarginParams margin{0.9};
    const bool same = pick(rng, 0, 1) == 1;
    Matrix ab;
    double dist = 0.0;
    do {
      ab = normal_matrix(2, dim, rng, 0.4);
      dist = (ab.row(0) - ab.row(1)).norm();
    } while (!same && (dist < 1e-2 || margin.margin - dist < 1e-2));
    return oracle::grad_check(
        "contrastive",
        [&](std::span<const double> x) {
          const Matrix m = as_matrix(x, 2, dim);
          return contrastive_loss(m.row(0), m.row(1), same, margin).value;
        },
        to_vector(ab), [&] {
          const auto r = contrastive_loss(ab.row(0), ab.row(1), same, margin);
          Matrix g(2, dim);
          g << r.grad.a, r.grad.b;
          return to_vector(g);
        }(),
        tol);
  }});

  cases.push_back({"softmax_ce", [](std::mt19937_64& rng, double tol) {
    const auto rows = static_cast<Eigen::Index>(pick(rng, 1, 5));
    const auto classes = static_cast<Eigen::Index>(pick(rng, 2, 6));
    std::vector<int> labels(static_cast<std::size_t>(rows));
    for (int& y : labels) y = static_cast<int>(pick(rng, 0, static_cast<std::size_t>(classes - 1)));
    const Matrix z = normal_matrix(rows, classes, rng, 2.0);
    return oracle::grad_check(
        "softmax_ce",
        [&](std::span<const double> x) {
          return softmax_ce_loss(LogitsBatch{as_matrix(x, rows, classes), labels}).value;
        },
        to_vector(z), to_vector(softmax_ce_loss(LogitsBatch{z, labels}).grad), tol);
  }});

  cases.push_back({"network", detail::check_network});
  cases.push_back({"step_objective", detail::check_step});
  return cases;
}

/// Runs `instances` random draws of every case from one seeded stream.
inline GradientSuiteResult run_gradient_suite(const std::vector<GradientCase>& cases,
                                              std::size_t instances, std::uint64_t seed,
                                              double tolerance = 1e-4) {
  GradientSuiteResult result;
  result.instances = instances;
  for (const GradientCase& c : cases) {
    std::mt19937_64 rng(derive_seed(seed, fnv1a(c.name)));
    oracle::GradCheckReport merged;
    merged.name = c.name;
    merged.tolerance = tolerance;
    for (std::size_t i = 0; i < instances; ++i) merged.merge(c.check(rng, tolerance));
    result.pass = result.pass && merged.pass;
    result.reports.push_back(std::move(merged));
  }
  return result;
}

}  // namespace darkrank
