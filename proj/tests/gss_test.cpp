#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "autofi/gradsuite.hpp"
#include "autofi/gss.hpp"
#include "autofi/ops.hpp"

using namespace autofi;
using gss::MiSign;

namespace {

TensorD rows(std::size_t b, std::size_t d, std::vector<double> v) { return TensorD({b, d}, std::move(v)); }

TensorD random_probs(std::size_t b, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  TensorD z({b, d});
  for (double& x : z.values()) x = n(rng);
  return softmax_rows(z);
}

// Plain two-term KL without any flooring; valid for strictly positive rows.
double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(static_cast<long double>(p[i]) / q[i]);
  return static_cast<double>(s);
}

}  // namespace

TEST(Entropy, UniformAndOneHot) {
  const std::vector<double> u(8, 0.125), h{0, 0, 1, 0};
  EXPECT_NEAR(gss::entropy(u), std::log(8.0), 1e-12);
  EXPECT_NEAR(gss::entropy(h), 0.0, 1e-12);
}

TEST(KlDiv, SelfIsZero) {
  std::mt19937_64 rng(1);
  const TensorD p = random_probs(1, 6, rng);
  EXPECT_NEAR(gss::kl_div(p.values(), p.values()), 0.0, 1e-15);
}

TEST(KlDiv, HalfVersusQuarter) {
  EXPECT_NEAR(kl_oracle({0.5, 0.5}, {0.25, 0.75}), 0.1438, 1e-4);
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  EXPECT_NEAR(gss::kl_div(p, q), 0.1438, 1e-4);
}

TEST(KlDiv, DisjointSupportIsClampedAtFloor) {
  EXPECT_NEAR(std::log(1.0 / 1e-7), 16.118, 1e-3);
  const std::vector<double> p{1, 0}, q{0, 1};
  const double v = gss::kl_div(p, q, 1e-7);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 16.118, 1e-3);
}

TEST(KlDiv, FloatOverloadAgrees) {
  const std::vector<float> p{0.5f, 0.5f}, q{0.25f, 0.75f};
  EXPECT_NEAR(gss::kl_div(std::span<const float>(p), std::span<const float>(q)), 0.1438, 1e-4);
  EXPECT_THROW(gss::kl_div(std::span<const float>(p), std::span<const float>(q.data(), 1)), std::invalid_argument);
}

TEST(ProbConsistency, Examples) {
  const TensorD p1 = rows(1, 2, {0.5, 0.5}), p2 = rows(1, 2, {0.25, 0.75});
  const double oracle = (kl_oracle({0.5, 0.5}, {0.25, 0.75}) + kl_oracle({0.25, 0.75}, {0.5, 0.5})) / 2;
  EXPECT_NEAR(oracle, 0.1373, 1e-4);
  EXPECT_NEAR(gss::prob_consistency_loss(p1, p2), 0.1373, 1e-4);
  EXPECT_DOUBLE_EQ(gss::prob_consistency_loss(p1, p2), gss::prob_consistency_loss(p2, p1));
  EXPECT_NEAR(gss::prob_consistency_loss(p1, p1), 0.0, 1e-15);
  EXPECT_THROW(gss::prob_consistency_loss(p1, rows(1, 3, {0.2, 0.3, 0.5})), std::invalid_argument);
}

TEST(MutualInfo, Examples) {
  const std::size_t D = 4;
  EXPECT_NEAR(gss::mutual_info_loss(TensorD({3, D}, 0.25)), 0.0, 1e-12);
  TensorD eye({D, D});
  for (std::size_t i = 0; i < D; ++i) eye.at(i, i) = 1.0;
  EXPECT_NEAR(gss::mutual_info_loss(eye), -std::log(double(D)), 1e-5);
  TensorD collapsed({5, D});
  for (std::size_t i = 0; i < 5; ++i) collapsed.at(i, 2) = 1.0;
  EXPECT_NEAR(gss::mutual_info_loss(collapsed), 0.0, 1e-5);
  // The literal sign rewards collapse instead: it is minimised at zero entropy.
  EXPECT_NEAR(gss::mutual_info_loss(collapsed, MiSign::literal), 0.0, 1e-5);
  EXPECT_NEAR(gss::mutual_info_loss(eye, MiSign::literal), std::log(double(D)), 1e-5);
  EXPECT_NEAR(gss::marginal_entropy(eye), std::log(double(D)), 1e-12);
  EXPECT_NEAR(gss::marginal_entropy(collapsed), 0.0, 1e-5);
}

TEST(CosineSim, Examples) {
  const std::vector<double> a{0.3, -1.2, 2.0}, na{-0.3, 1.2, -2.0};
  EXPECT_NEAR(gss::cosine_sim(a, a), 1.0, 1e-15);
  EXPECT_NEAR(gss::cosine_sim(a, na), 0.0, 1e-15);
  EXPECT_NEAR(gss::cosine_sim(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.5, 1e-15);
  EXPECT_THROW(gss::cosine_sim(a, std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(GeometricEmbedding, Examples) {
  const TensorD q2 = gss::geometric_embedding(rows(2, 3, {0.2, 0.3, 0.5, 0.6, 0.1, 0.3}));
  EXPECT_EQ(q2, rows(2, 2, {0, 1, 1, 0}));

  const TensorD same = gss::geometric_embedding(TensorD({3, 4}, 0.25));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(same.at(i, j), i == j ? 0.0 : 0.5, 1e-12);

  // Oracle: similarities of row 1 to rows 0 and 2, then normalise.
  const double k10 = (0.0 + 1.0) / 2.0;
  const double k12 = (0.5 / (1.0 * std::sqrt(0.5)) + 1.0) / 2.0;
  EXPECT_NEAR(k12, 0.85355, 1e-5);
  EXPECT_NEAR(k10 / (k10 + k12), 0.3694, 1e-3);

  const TensorD q = gss::geometric_embedding(rows(3, 2, {1, 0, 0, 1, 0.5, 0.5}));
  EXPECT_NEAR(q.at(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(q.at(0, 1), 0.3694, 1e-3);
  EXPECT_NEAR(q.at(0, 2), 0.6306, 1e-3);
  EXPECT_THROW(gss::geometric_embedding(rows(1, 2, {0.5, 0.5})), std::invalid_argument);
}

TEST(GeometricLoss, Examples) {
  std::mt19937_64 rng(2);
  const TensorD q = gss::geometric_embedding(random_probs(5, 4, rng));
  EXPECT_NEAR(gss::geometric_loss(q, q), 0.0, 1e-15);
  const TensorD a = gss::geometric_embedding(random_probs(2, 4, rng));
  const TensorD b = gss::geometric_embedding(random_probs(2, 4, rng));
  EXPECT_NEAR(gss::geometric_loss(a, b), 0.0, 1e-12);

  const TensorD q1 = rows(3, 3, {0, 0.5, 0.5, 0.5, 0, 0.5, 0.5, 0.5, 0});
  const TensorD q2 = rows(3, 3, {0, 0.25, 0.75, 0.5, 0, 0.5, 0.5, 0.5, 0});
  EXPECT_NEAR(gss::geometric_loss(q1, q2), 0.1438 / 3, 1e-4);
}

TEST(TotalLoss, ComponentsAndWeights) {
  std::mt19937_64 rng(3);
  TensorD collapsed({4, 3});
  for (std::size_t i = 0; i < 4; ++i) collapsed.at(i, 1) = 1.0;
  const auto c = gss::total_loss(collapsed, collapsed, {2.0, 1000.0});
  EXPECT_NEAR(c.prob, 0.0, 1e-12);
  EXPECT_NEAR(c.geo, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(c.total, 2.0 * c.mi);

  const TensorD p1 = random_probs(4, 3, rng), p2 = random_probs(4, 3, rng);
  const auto only_p = gss::total_loss(p1, p2, {0.0, 0.0});
  EXPECT_EQ(only_p.total, gss::prob_consistency_loss(p1, p2));

  const auto full = gss::total_loss(p1, p2, {1.5, 30.0});
  EXPECT_NEAR(full.total, full.prob + 1.5 * full.mi + 30.0 * full.geo, 1e-12);
  EXPECT_NEAR(full.mi, (gss::mutual_info_loss(p1) + gss::mutual_info_loss(p2)) / 2, 1e-12);
  EXPECT_THROW(gss::total_loss(p1, p2, {-1.0, 0.0}), std::invalid_argument);
}

TEST(TotalLoss, FloatAndDoubleAgree) {
  std::mt19937_64 rng(4);
  const TensorD p1 = random_probs(8, 5, rng), p2 = random_probs(8, 5, rng);
  const auto d = gss::total_loss(p1, p2, {1.0, 1000.0});
  const auto f = gss::total_loss(p1.cast<float>(), p2.cast<float>(), {1.0, 1000.0});
  EXPECT_NEAR(f.total, d.total, 1e-4 * std::max(1.0, std::abs(d.total)));
}

TEST(TotalLoss, ScalesToFullBatch) {
  std::mt19937_64 rng(5);
  const TensorD p1 = random_probs(128, 32, rng), p2 = random_probs(128, 32, rng);
  TensorD g1, g2;
  const auto c = gss::total_loss(p1, p2, {1.0, 1000.0}, &g1, &g2);
  EXPECT_TRUE(std::isfinite(c.total));
  EXPECT_EQ(g1.dims(), p1.dims());
  EXPECT_TRUE(all_finite(g2));
}

TEST(GradSuite, EveryRegisteredLossPasses) {
  const auto names = gradsuite::registered_losses();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto checks = gradsuite::run(seed);
    ASSERT_EQ(checks.size(), names.size());
    for (std::size_t i = 0; i < checks.size(); ++i) {
      EXPECT_EQ(checks[i].name, names[i]);
      EXPECT_TRUE(checks[i].passed()) << checks[i].name << " seed " << seed << " err "
                                      << checks[i].report.max_rel_error;
    }
  }
}

TEST(GradSuite, LargerBatchStillPasses) {
  for (const auto& c : gradsuite::run(11, 16, 32)) EXPECT_TRUE(c.passed()) << c.name;
}
