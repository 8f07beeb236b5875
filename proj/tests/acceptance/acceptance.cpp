// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "darkrank/gradcheck.hpp"
#include "darkrank/metrics.hpp"
#include "darkrank/oracle.hpp"
#include "darkrank/ranking.hpp"
#include "darkrank/trainer.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace darkrank;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ScoreList random_scores(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return ScoreList(std::move(v));
}

Verdict permutation_model() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_mass = 0.0;
  double worst_kl = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 5);
    const ScoreList t = random_scores(n, rng);
    const ScoreList s = random_scores(n, rng);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double mass = 0.0;
    do {
      mass += std::exp(perm_log_prob(s, Permutation(order)));
    } while (std::next_permutation(order.begin(), order.end()));
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
    const double kl = soft_darkrank_loss(t, s).value;
    worst_kl = std::max(worst_kl, std::abs(kl - oracle::naive_soft_loss(t.values(), s.values())));
  }
  const double secs = seconds_since(t0);
  return {worst_mass <= 1e-9 && worst_kl <= 1e-9 && secs < 60.0,
          fmt("max |sum P - 1| %.2e, max |KL - naive| %.2e, %.2fs", worst_mass, worst_kl, secs)};
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const GradientSuiteResult r = run_gradient_suite(gradient_cases(), 100, 0, 1e-4);
  const double secs = seconds_since(t0);
  const oracle::GradCheckReport* worst = &r.reports.front();
  for (const auto& c : r.reports) {
    if (c.max_relative_error > worst->max_relative_error) worst = &c;
  }
  return {r.pass && secs < 120.0,
          fmt("%zu components x %zu instances, worst %s %.2e, %.2fs", r.reports.size(), r.instances,
              worst->name.c_str(), worst->max_relative_error, secs)};
}

Verdict mode_and_invariance() {
  std::mt19937_64 rng(303);
  std::size_t mode_mismatch = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const ScoreList s = random_scores(1 + static_cast<std::size_t>(trial % 6), rng);
    const auto dist = oracle::enumerate_distribution(s.values());
    if (best_permutation(s).order().size() != dist.n ||
        !std::ranges::equal(best_permutation(s).order(), dist.permutations[dist.argmax()])) {
      ++mode_mismatch;
    }
  }

  std::size_t target_mismatch = 0;
  std::uniform_real_distribution<double> unit(0.05, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> d(2 + static_cast<std::size_t>(trial % 7));
    for (double& x : d) x = unit(rng);
    std::optional<Permutation> reference;
    for (double alpha : {0.5, 1.0, 3.0, 10.0}) {
      for (double beta : {1.0, 2.0, 3.0, 4.0}) {
        std::vector<double> s(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) s[i] = -alpha * std::pow(d[i], beta);
        const Permutation p = best_permutation(ScoreList(s));
        if (!reference) reference = p;
        if (p != *reference) ++target_mismatch;
      }
    }
  }

  double worst_shift = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 5);
    const ScoreList t = random_scores(n, rng);
    const ScoreList s = random_scores(n, rng);
    const double c = std::normal_distribution<double>(0.0, 10.0)(rng);
    const Permutation truth = best_permutation(t);
    const double pairs[][2] = {
        {soft_darkrank_loss(t, s).value, soft_darkrank_loss(t.shifted(c), s.shifted(c)).value},
        {hard_darkrank_loss(t, s).value, hard_darkrank_loss(t.shifted(c), s.shifted(c)).value},
        {listnet_loss(t, s).value, listnet_loss(t.shifted(c), s.shifted(c)).value},
        {listmle_loss(truth, s).value, listmle_loss(truth, s.shifted(c)).value},
    };
    for (const auto& p : pairs) worst_shift = std::max(worst_shift, std::abs(p[0] - p[1]));
  }
  return {mode_mismatch == 0 && target_mismatch == 0 && worst_shift <= 1e-9,
          fmt("mode mismatches %zu/500, alpha/beta target changes %zu/1600, max shift change %.2e",
              mode_mismatch, target_mismatch, worst_shift)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

struct DistillationRuns {
  static constexpr const char* kVariants[] = {"none", "soft", "hard", "kd", "kd+soft"};
  std::vector<double> teacher;
  std::vector<std::vector<double>> student{std::size(kVariants)};
  double seconds = 0.0;
  std::string error;

  double median_of(const std::string& v) const {
    for (std::size_t i = 0; i < std::size(kVariants); ++i) {
      if (v == kVariants[i]) return median(student[i]);
    }
    return std::nan("");
  }
};

DistillationRuns run_default_experiment() {
  constexpr std::size_t kSeeds = 5;
  DistillationRuns runs;
  runs.teacher.assign(kSeeds, 0.0);
  for (auto& v : runs.student) v.assign(kSeeds, 0.0);
  const auto t0 = Clock::now();
  const ExperimentConfig base;
  const LabeledDataset data = generate(base.dataset.synthetic);
  std::vector<std::string> errors(kSeeds);
  std::vector<std::thread> pool;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    pool.emplace_back([&, s] {
      try {
        ExperimentConfig cfg = base;
        cfg.seed = s;
        const TrainResult teacher = train_teacher(cfg, data);
        runs.teacher[s] = teacher.report.metrics.at("recall_at_1");
        for (std::size_t v = 0; v < std::size(DistillationRuns::kVariants); ++v) {
          cfg.variant = TransferVariant::parse(DistillationRuns::kVariants[v]);
          runs.student[v][s] = train(cfg, data, &teacher.network).report.metrics.at("recall_at_1");
        }
      } catch (const std::exception& e) {
        errors[s] = e.what();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) runs.error = e;
  }
  runs.seconds = seconds_since(t0);
  for (std::size_t s = 0; s < kSeeds; ++s) {
    std::printf("  seed %zu recall@1: teacher %.3f", s, runs.teacher[s]);
    for (std::size_t v = 0; v < std::size(DistillationRuns::kVariants); ++v) {
      std::printf("  %s %.3f", DistillationRuns::kVariants[v], runs.student[v][s]);
    }
    std::printf("\n");
  }
  return runs;
}

Verdict directional(const DistillationRuns& r) {
  if (!r.error.empty()) return {false, "training failed: " + r.error};
  const double none = r.median_of("none");
  const double soft = r.median_of("soft");
  const double hard = r.median_of("hard");
  const double teacher = median(r.teacher);
  bool teacher_best = true;
  for (const auto& v : r.student) teacher_best = teacher_best && teacher >= median(v);
  return {soft >= none + 0.02 && hard >= none + 0.02 && teacher_best && r.seconds < 600.0,
          fmt("median recall@1 teacher %.3f none %.3f soft %.3f hard %.3f kd %.3f kd+soft %.3f, %.1fs",
              teacher, none, soft, hard, r.median_of("kd"), r.median_of("kd+soft"), r.seconds)};
}

Verdict complementarity(const DistillationRuns& r) {
  if (!r.error.empty()) return {false, "training failed: " + r.error};
  const double both = r.median_of("kd+soft");
  const double floor = std::max(r.median_of("kd"), r.median_of("soft")) - 0.01;
  return {both >= floor, fmt("kd+soft %.3f vs max(kd, soft) - 0.01 = %.3f", both, floor)};
}

// Average precision of one leave-one-out query by pairwise counting: the rank
// of item j is one plus the number of items strictly closer to the query.
double pairwise_ap(const Matrix& e, const std::vector<int>& labels, std::size_t q) {
  const std::size_t n = labels.size();
  std::vector<double> d(n);
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = (e.row(static_cast<Eigen::Index>(j)) - e.row(static_cast<Eigen::Index>(q))).norm();
  }
  double sum = 0.0;
  std::size_t relevant = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == q || labels[j] != labels[q]) continue;
    double rank = 1.0;
    double hits = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == q || k == j || d[k] >= d[j]) continue;
      rank += 1.0;
      if (labels[k] == labels[q]) hits += 1.0;
    }
    sum += hits / rank;
    ++relevant;
  }
  return sum / static_cast<double>(relevant);
}

double pair_f1(const std::vector<int>& c, const std::vector<int>& t) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const bool sc = c[i] == c[j];
      const bool st = t[i] == t[j];
      tp += sc && st;
      fp += sc && !st;
      fn += !sc && st;
    }
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

double table_nmi(const std::vector<int>& c, const std::vector<int>& t, int kc, int kt) {
  const double n = static_cast<double>(c.size());
  std::vector<double> joint(static_cast<std::size_t>(kc * kt), 0.0), a(kc, 0.0), b(kt, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    joint[static_cast<std::size_t>(c[i] * kt + t[i])] += 1;
    a[c[i]] += 1;
    b[t[i]] += 1;
  }
  double mi = 0, ha = 0, hb = 0;
  for (int i = 0; i < kc; ++i) {
    if (a[i] > 0) ha -= a[i] / n * std::log(a[i] / n);
    for (int j = 0; j < kt; ++j) {
      const double nij = joint[static_cast<std::size_t>(i * kt + j)];
      if (nij > 0) mi += nij / n * std::log(n * nij / (a[i] * b[j]));
    }
  }
  for (int j = 0; j < kt; ++j) {
    if (b[j] > 0) hb -= b[j] / n * std::log(b[j] / n);
  }
  return 2 * mi / (ha + hb);
}

Verdict metrics_correctness() {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> normal;
  double worst_map = 0.0, worst_f1 = 0.0, worst_nmi = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 8 + static_cast<std::size_t>(trial % 40);
    const int classes = 2 + trial % 4;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    Matrix e(static_cast<Eigen::Index>(n), 4);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = normal(rng);
    double expected = 0.0;
    for (std::size_t q = 0; q < n; ++q) expected += pairwise_ap(e, labels, q);
    expected /= static_cast<double>(n);
    worst_map = std::max(worst_map, std::abs(mean_average_precision(leave_one_out_retrieval(e, labels)).value - expected));

    const std::size_t m = 2 + rng() % 199;
    const int kc = 1 + static_cast<int>(rng() % 6), kt = 2 + static_cast<int>(rng() % 5);
    std::vector<int> cand(m), truth(m);
    for (std::size_t i = 0; i < m; ++i) {
      cand[i] = static_cast<int>(rng() % static_cast<unsigned>(kc));
      truth[i] = static_cast<int>(rng() % static_cast<unsigned>(kt));
    }
    worst_f1 = std::max(worst_f1, std::abs(f1_score({cand, truth}) - pair_f1(cand, truth)));
    worst_nmi = std::max(worst_nmi, std::abs(nmi({cand, truth}) - table_nmi(cand, truth, kc, kt)));
  }

  // Hand cases from the operation examples.
  bool hand = true;
  auto query = [](std::vector<bool> rel) {
    QueryRanking q;
    for (std::size_t i = 0; i < rel.size(); ++i) q.gallery.push_back(i);
    q.relevant = std::move(rel);
    return q;
  };
  auto first_at = [&](std::size_t pos) {
    std::vector<bool> rel(10, false);
    rel[pos - 1] = true;
    return query(rel);
  };
  RetrievalResult cmc;
  cmc.queries = {first_at(1), first_at(3), first_at(7)};
  hand = hand && cmc_rank_k(cmc, 5) == 2.0 / 3.0;
  RetrievalResult top1;
  top1.queries = {first_at(1), first_at(1)};
  hand = hand && cmc_rank_k(top1, 1) == 1.0 && cmc_rank_k(cmc, 10) == 1.0;
  RetrievalResult ap;
  ap.queries = {query({true, false, true, false})};
  hand = hand && std::abs(mean_average_precision(ap).value - 5.0 / 6.0) <= 1e-15;
  hand = hand && mean_average_precision(top1).value == 1.0;
  const std::vector<int> balanced = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
  const double p = 3.0 / 11.0;
  hand = hand && std::abs(f1_score({std::vector<int>(12, 0), balanced}) - 2 * p / (p + 1)) <= 1e-15;
  hand = hand && f1_score({balanced, balanced}) == 1.0 && std::abs(nmi({balanced, balanced}) - 1.0) <= 1e-15;

  return {worst_map <= 1e-9 && worst_f1 <= 1e-9 && worst_nmi <= 1e-9 && hand,
          fmt("max error mAP %.2e F1 %.2e NMI %.2e, hand cases %s", worst_map, worst_f1, worst_nmi,
              hand ? "exact" : "WRONG")};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("DARKRANK_LOG=error ") + DARKRANK_CLI_PATH + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / "darkrank_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ExperimentConfig cfg;
  cfg.dataset.synthetic.num_identities = 8;
  cfg.dataset.synthetic.samples_per_identity = 6;
  cfg.dataset.synthetic.feature_dim = 8;
  cfg.dataset.synthetic.heldout_fraction = 0.25;
  cfg.teacher = {{32}, 8, Activation::relu};
  cfg.student = {{16}, 8, Activation::relu};
  cfg.schedule = {6, {3}, 0.1};
  cfg.variant = TransferVariant::parse("kd+soft+hard");
  cfg.seed = 11;
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2);
  const std::string config = "--config '" + (dir / "config.json").string() + "'";
  if (run_cli("train-teacher " + config + " --out '" + (dir / "teacher").string() + "'") != 0) {
    return {false, "train-teacher failed"};
  }
  const std::string teacher = " --teacher '" + (dir / "teacher" / "teacher.drk").string() + "'";
  for (const char* run : {"a", "b"}) {
    if (run_cli("distill " + config + teacher + " --out '" + (dir / run).string() + "'") != 0) {
      return {false, std::string("distill run ") + run + " failed"};
    }
  }
  const std::string a = slurp(dir / "a" / "metrics.json");
  const std::string b = slurp(dir / "b" / "metrics.json");
  const bool same = !a.empty() && a == b;
  const bool same_ckpt = slurp(dir / "a" / "student.drk") == slurp(dir / "b" / "student.drk");
  fs::remove_all(dir);
  return {same && same_ckpt, fmt("metrics.json %s (%zu bytes), student checkpoint %s", same ? "identical" : "DIFFERS",
                                 a.size(), same_ckpt ? "identical" : "DIFFERS")};
}

Verdict capacity_boundary() {
  std::mt19937_64 rng(808);
  const ScoreList t9 = random_scores(9, rng);
  const ScoreList s9 = random_scores(9, rng);
  bool capacity = false;
  std::string message;
  try {
    soft_darkrank_loss(t9, s9);
  } catch (const CapacityError& e) {
    message = e.what();
    capacity = message.find("hard transfer") != std::string::npos;
  } catch (const std::exception& e) {
    message = std::string("wrong error type: ") + e.what();
  }
  const ScoreList t50 = random_scores(50, rng);
  const ScoreList s50 = random_scores(50, rng);
  double worst = 0.0;
  double sink = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto t0 = Clock::now();
    sink += hard_darkrank_loss(t50, s50).value;
    worst = std::max(worst, seconds_since(t0));
  }
  return {capacity && worst < 0.01 && std::isfinite(sink),
          fmt("n=9 soft: %s; n=50 hard: slowest of 1000 calls %.3f ms",
              capacity ? "CapacityError" : ("no capacity error (" + message + ")").c_str(), worst * 1e3)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Verdict& v) {
    std::printf("[%s] %d. %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  };
  auto guarded = [](const std::function<Verdict()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Verdict{false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "permutation-model correctness", guarded(permutation_model));
  report(2, "gradient suite", guarded(gradient_suite));
  report(3, "mode and invariance", guarded(mode_and_invariance));
  const DistillationRuns runs = run_default_experiment();
  report(4, "directional distillation", guarded([&] { return directional(runs); }));
  report(5, "kd+soft complementarity", guarded([&] { return complementarity(runs); }));
  report(6, "metrics correctness", guarded(metrics_correctness));
  report(7, "determinism", guarded(determinism));
  report(8, "capacity boundary", guarded(capacity_boundary));
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
