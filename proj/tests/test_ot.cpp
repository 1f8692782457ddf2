#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>

#include "test_support.hpp"
#include "uld/losses.hpp"
#include "uld/ot.hpp"

using namespace uld;

namespace {

double total_variation(const ProbVector& p, const ProbVector& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

void expect_feasible(const TransportPlan& plan, const ProbVector& p, const ProbVector& q,
                     const CostMatrix& c, double tol) {
  double cost = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      ASSERT_GE(plan.flows(i, j), 0.0);
      row += plan.flows(i, j);
      cost += plan.flows(i, j) * c(i, j);
    }
    ASSERT_NEAR(row, p[i], tol);
  }
  for (std::size_t j = 0; j < q.size(); ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) col += plan.flows(i, j);
    ASSERT_NEAR(col, q[j], tol);
  }
  ASSERT_NEAR(cost, plan.cost, 1e-9);
}

std::string random_word(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(0, 6);
  std::uniform_int_distribution<int> ch(0, 2);
  std::string s(static_cast<std::size_t>(len(rng)), 'a');
  for (auto& c : s) c = static_cast<char>('a' + ch(rng));
  return s;
}

}  // namespace

TEST(ExactOt, Examples) {
  const auto c2 = CostMatrix::uniform01(2);
  EXPECT_NEAR(exact_ot(ProbVector({0.3, 0.7}), ProbVector({0.3, 0.7}), c2).cost, 0.0, 1e-15);
  EXPECT_NEAR(exact_ot(ProbVector({1.0, 0.0}), ProbVector({0.0, 1.0}), c2).cost, 1.0, 1e-15);
  EXPECT_NEAR(exact_ot(ProbVector({0.7, 0.3}), ProbVector({0.4, 0.6}), c2).cost, 0.3, 1e-12);
}

TEST(ExactOt, IdentityPlanWhenEqual) {
  const ProbVector p({0.2, 0.5, 0.3});
  const auto plan = exact_ot(p, p, CostMatrix::uniform01(3));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(plan.flows(i, i), p[i], 1e-15);
}

TEST(ExactOt, ShapeAndScaleErrors) {
  EXPECT_THROW(exact_ot(ProbVector({1.0}), ProbVector({0.5, 0.5}), CostMatrix::uniform01(2)),
               ParameterError);
  std::vector<double> big(kExactOtMaxSupport + 1, 1.0 / (kExactOtMaxSupport + 1));
  const ProbVector p(big);
  EXPECT_THROW(exact_ot(p, p, CostMatrix(Matrix(1, 1), CostKind::custom)), ScaleError);
}

TEST(ExactOt, ZeroOneCostEqualsTotalVariation) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 40;
    const auto p = fixtures::random_prob(rng, n);
    const auto q = fixtures::random_prob(rng, n);
    const auto c = CostMatrix::uniform01(n);
    const auto plan = exact_ot(p, q, c);
    ASSERT_NEAR(plan.cost, total_variation(p, q), 1e-9);
    expect_feasible(plan, p, q, c, 1e-7);
  }
}

TEST(ExactOt, LineCostAgreesWithCdfOracle) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 30;
    const auto p = fixtures::random_prob(rng, n);
    const auto q = fixtures::random_prob(rng, n);
    const auto c = CostMatrix::line(n);
    const auto plan = exact_ot(p, q, c);
    ASSERT_NEAR(plan.cost, w1_1d_cdf(p, q), 1e-7);
    expect_feasible(plan, p, q, c, 1e-7);
  }
}

TEST(ExactOt, RectangularRandomCostsAreFeasibleAndDualCertified) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 13;
    const std::size_t m = 1 + (trial * 5) % 17;
    Matrix cm(n, m);
    for (auto& v : cm.data) v = unit(rng);
    const CostMatrix c(cm, CostKind::custom);
    const auto p = fixtures::random_prob(rng, n);
    const auto q = fixtures::random_prob(rng, m);
    const auto plan = exact_ot(p, q, c);
    expect_feasible(plan, p, q, c, 1e-7);
    double dual = 0.0;
    for (std::size_t i = 0; i < n; ++i) dual += plan.source_dual[i] * p[i];
    for (std::size_t j = 0; j < m; ++j) dual += plan.target_dual[j] * q[j];
    ASSERT_NEAR(dual, plan.cost, 1e-7);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        ASSERT_LE(plan.source_dual[i] + plan.target_dual[j], c(i, j) + 1e-9);
      }
    }
  }
}

TEST(W1Cdf, Examples) {
  EXPECT_NEAR(w1_1d_cdf(ProbVector({1.0, 0.0, 0.0}), ProbVector({0.0, 0.0, 1.0})), 2.0, 1e-15);
  EXPECT_EQ(w1_1d_cdf(ProbVector({0.2, 0.8}), ProbVector({0.2, 0.8})), 0.0);
  const ProbVector p({0.5, 0.5, 0.0});
  const ProbVector q({0.0, 0.5, 0.5});
  EXPECT_NEAR(w1_1d_cdf(p, q), 1.0, 1e-15);
  EXPECT_NEAR(exact_ot(p, q, CostMatrix::line(3)).cost, 1.0, 1e-12);
  EXPECT_THROW(w1_1d_cdf(ProbVector({1.0}), ProbVector({0.5, 0.5})), ParameterError);
}

TEST(BruteForce, Examples) {
  const ProbVector p({0.7, 0.2, 0.1});
  const ProbVector q({0.1, 0.5, 0.4});
  EXPECT_NEAR(brute_force_alignment_min(p, q), 0.4, 1e-12);
  EXPECT_NEAR(uld_w1_step(p, q), 0.4, 1e-12);
  EXPECT_EQ(brute_force_alignment_min(p, p), 0.0);
  EXPECT_EQ(brute_force_alignment_min(ProbVector({1.0}), ProbVector({1.0})), 0.0);
  std::vector<double> nine(9, 1.0 / 9.0);
  EXPECT_THROW(brute_force_alignment_min(ProbVector(nine), ProbVector(nine)), ScaleError);
}

TEST(BruteForce, EqualsClosedFormUpToSix) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 600; ++trial) {
    const std::size_t n = 1 + trial % 6;
    const auto p = fixtures::random_prob(rng, n);
    const auto q = fixtures::random_prob(rng, n);
    ASSERT_NEAR(brute_force_alignment_min(p, q), uld_w1_step(p, q), 1e-12);
  }
}

TEST(Sinkhorn, IdentityIsNearlyFree) {
  const std::size_t n = 8;
  std::mt19937_64 rng(25);
  const auto p = fixtures::random_prob(rng, n);
  const auto plan = sinkhorn(p, p, CostMatrix::uniform01(n), {.epsilon = 0.01});
  EXPECT_LE(plan.cost, 0.01 * std::log(static_cast<double>(n)) + 1e-6);
}

TEST(Sinkhorn, SmallEpsilonApproachesExact) {
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 16;
    Matrix cm(n, n);
    for (auto& v : cm.data) v = unit(rng);
    const CostMatrix c(cm, CostKind::custom);
    const auto p = fixtures::random_prob(rng, n);
    const auto q = fixtures::random_prob(rng, n);
    SinkhornOptions opt{.epsilon = 1e-3, .max_iter = 200000, .tol = 1e-9};
    const auto plan = sinkhorn(p, q, c, opt);
    EXPECT_NEAR(plan.cost, exact_ot(p, q, c).cost, 1e-2);
    expect_feasible(plan, p, q, c, 1e-6);
  }
}

TEST(Sinkhorn, StopsOnToleranceAndReportsMarginals) {
  std::mt19937_64 rng(27);
  const auto p = fixtures::random_prob(rng, 10);
  const auto q = fixtures::random_prob(rng, 10);
  const auto plan = sinkhorn(p, q, CostMatrix::uniform01(10), {.epsilon = 0.05, .tol = 1e-8});
  ASSERT_TRUE(plan.converged);
  EXPECT_LT(plan.marginal_violation, 1e-8);
  for (std::size_t i = 0; i < 10; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 10; ++j) row += plan.flows(i, j);
    EXPECT_NEAR(row, p[i], 1e-8);
  }
}

TEST(Sinkhorn, ReportsNonConvergence) {
  std::mt19937_64 rng(28);
  const auto p = fixtures::random_prob(rng, 10);
  const auto q = fixtures::random_prob(rng, 10);
  const auto plan = sinkhorn(p, q, CostMatrix::line(10), {.epsilon = 1e-3, .max_iter = 2, .tol = 1e-12});
  EXPECT_FALSE(plan.converged);
  EXPECT_EQ(plan.iterations, 2u);
}

TEST(Levenshtein, Examples) {
  EXPECT_EQ(levenshtein("cat", "cats"), 1u);
  EXPECT_EQ(levenshtein("cat", "cat"), 0u);
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
}

TEST(Levenshtein, MetricProperties) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 3000; ++trial) {
    const auto a = random_word(rng);
    const auto b = random_word(rng);
    const auto c = random_word(rng);
    ASSERT_EQ(levenshtein(a, a), 0u);
    ASSERT_EQ(levenshtein(a, b), levenshtein(b, a));
    ASSERT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
  }
}

TEST(Levenshtein, CostMatrixOverVocabularies) {
  Vocabulary a;
  a.add("cat");
  a.add("kitten");
  Vocabulary b;
  b.add("cats");
  b.add("sitting");
  const auto c = levenshtein_cost_matrix(a, b);
  EXPECT_EQ(c.kind(), CostKind::levenshtein);
  const auto ia = static_cast<std::size_t>(*a.find("cat"));
  const auto ik = static_cast<std::size_t>(*a.find("kitten"));
  const auto jb = static_cast<std::size_t>(*b.find("cats"));
  const auto js = static_cast<std::size_t>(*b.find("sitting"));
  EXPECT_EQ(c(ia, jb), 1.0);
  EXPECT_EQ(c(ik, js), 3.0);
  const auto self = levenshtein_cost_matrix(a, a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(self(i, i), 0.0);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(self(i, j), self(j, i));
  }
}

TEST(EmbeddingL2, Examples) {
  Matrix a(2, 2);
  a(1, 0) = 3.0;
  a(1, 1) = 4.0;
  const auto c = embedding_l2_cost_matrix(a, a);
  EXPECT_EQ(c(0, 0), 0.0);
  EXPECT_EQ(c(1, 1), 0.0);
  EXPECT_NEAR(c(0, 1), 5.0, 1e-15);
  EXPECT_EQ(c(0, 1), c(1, 0));
  EXPECT_THROW(embedding_l2_cost_matrix(a, Matrix(2, 3)), ParameterError);
}

TEST(EmbeddingL2, NonNegativeAndSymmetric) {
  std::mt19937_64 rng(30);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix e(12, 5);
  for (auto& v : e.data) v = normal(rng);
  const auto c = embedding_l2_cost_matrix(e, e);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      EXPECT_GE(c(i, j), 0.0);
      EXPECT_EQ(c(i, j), c(j, i));
    }
  }
}
