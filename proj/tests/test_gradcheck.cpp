#include "darkrank/gradcheck.hpp"

#include <gtest/gtest.h>

#include <set>

namespace darkrank {
namespace {

TEST(GradientSuite, EveryComponentPasses) {
  const auto result = run_gradient_suite(gradient_cases(), 25, 3);
  EXPECT_TRUE(result.pass);
  for (const auto& r : result.reports) {
    EXPECT_TRUE(r.pass) << r.name << " " << r.max_relative_error;
    EXPECT_FALSE(r.entries.empty()) << r.name;
  }
}

TEST(GradientSuite, CoversEveryDifferentiableComponent) {
  std::set<std::string> names;
  for (const auto& c : gradient_cases()) names.insert(c.name);
  for (const char* n : {"perm_log_prob", "soft_darkrank", "hard_darkrank", "listnet", "listmle",
                        "kd", "direct_match", "fitnet", "triplet", "contrastive", "softmax_ce",
                        "network", "step_objective"}) {
    EXPECT_TRUE(names.contains(n)) << n;
  }
}

TEST(GradientSuite, DetectsSignFlippedGradient) {
  GradientCase flipped{"flipped_fitnet", [](std::mt19937_64& rng, double tol) {
    std::normal_distribution<double> dist;
    Matrix t(2, 3), s(2, 3);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = dist(rng);
      s.data()[i] = dist(rng);
    }
    const Matrix wrong = -fitnet_loss(t, s).grad;
    return oracle::grad_check(
        "flipped_fitnet",
        [&](std::span<const double> x) {
          return fitnet_loss(t, Eigen::Map<const Matrix>(x.data(), 2, 3)).value;
        },
        std::vector<double>(s.data(), s.data() + s.size()),
        std::vector<double>(wrong.data(), wrong.data() + wrong.size()), tol);
  }};
  const auto result = run_gradient_suite({flipped}, 3, 1);
  EXPECT_FALSE(result.pass);
  EXPECT_GT(result.reports[0].max_relative_error, 1.0);
}

TEST(GradientSuite, DeterministicUnderSeed) {
  const auto a = run_gradient_suite(gradient_cases(), 3, 11);
  const auto b = run_gradient_suite(gradient_cases(), 3, 11);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    EXPECT_EQ(a.reports[i].max_relative_error, b.reports[i].max_relative_error);
  }
}

TEST(Oracle, CapacityAndRelativeError) {
  EXPECT_THROW(oracle::enumerate_distribution(std::vector<double>(9, 0.0)), CapacityError);
  EXPECT_EQ(oracle::enumerate_distribution(std::vector<double>(4, 0.0)).permutations.size(), 24u);
  EXPECT_NEAR(oracle::relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_NEAR(oracle::relative_error(0.0, 1e-9), 0.1, 1e-15);
}

}  // namespace
}  // namespace darkrank
