#include "gfn/core_math.h"

#include <cmath>

#include <gtest/gtest.h>

#include "gfn/errors.h"
#include "test_util.h"

namespace gfn {
namespace {

using testing::numeric_gradient;
using testing::random_vector;
using testing::random_vectors;
using testing::rel_error;

TEST(CosineSim, KnownValues) {
  EXPECT_DOUBLE_EQ(cosine_sim(Embedding{1, 2, 2}, Embedding{1, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_sim(Embedding{1, 0}, Embedding{0, 1}), 0.0);
  EXPECT_NEAR(cosine_sim(Embedding{1, 1}, Embedding{1, 0}), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(CosineSim, Symmetric) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Embedding u = random_vector(rng, 8), v = random_vector(rng, 8);
    EXPECT_DOUBLE_EQ(cosine_sim(u, v), cosine_sim(v, u));
  }
}

TEST(CosineSim, RejectsBadInput) {
  EXPECT_THROW(cosine_sim(Embedding{0, 0}, Embedding{1, 0}), DegenerateInputError);
  EXPECT_THROW(cosine_sim(Embedding{1, 0}, Embedding{1, 0, 0}), ContractError);
  EXPECT_THROW(cosine_sim(Embedding{}, Embedding{}), ContractError);
  EXPECT_THROW(cosine_sim(Embedding{NAN, 1}, Embedding{1, 0}), ContractError);
}

TEST(CosineSim, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    Embedding u = random_vector(rng, 8), v = random_vector(rng, 8);
    Embedding gu(8, 0.0), gv(8, 0.0);
    cosine_sim_backward(u, v, 1.0, gu, gv);
    EXPECT_LE(rel_error(gu, numeric_gradient([&] { return cosine_sim(u, v); }, u)), 1e-6);
    EXPECT_LE(rel_error(gv, numeric_gradient([&] { return cosine_sim(u, v); }, v)), 1e-6);
  }
}

TEST(LogisticWeight, KnownValues) {
  for (double a : {0.05, 0.2, 3.0}) {
    EXPECT_DOUBLE_EQ(logistic_weight(0.0, a, LogisticOrientation::kIncreasing), 0.5);
    EXPECT_DOUBLE_EQ(logistic_weight(0.0, a, LogisticOrientation::kDecreasing), 0.5);
  }
  EXPECT_NEAR(logistic_weight(1.0, 0.2), 0.99330715, 1e-8);
  EXPECT_NEAR(logistic_weight(0.37, 0.1, LogisticOrientation::kIncreasing) +
                  logistic_weight(0.37, 0.1, LogisticOrientation::kDecreasing),
              1.0, 1e-15);
  EXPECT_THROW(logistic_weight(0.1, 0.0), ContractError);
}

TEST(LogisticWeight, IncreasingIsMonotoneAndSaturates) {
  double prev = logistic_weight(-1.0, 0.2);
  for (double s = -0.99; s <= 1.0; s += 0.01) {
    const double w = logistic_weight(s, 0.2);
    EXPECT_GT(w, prev);
    prev = w;
  }
  EXPECT_TRUE(std::isfinite(logistic_weight(1e6, 1e-3)));
  EXPECT_TRUE(std::isfinite(logistic_weight(-1e6, 1e-3)));
  EXPECT_GT(logistic_weight(-1e6, 1e-3, LogisticOrientation::kDecreasing), 0.99);
}

TEST(ContrastivePairLoss, SingleCandidateIsZero) {
  const std::vector<Embedding> c = {{0.3, -1.0, 2.0}};
  const auto r = contrastive_pair_loss(Embedding{1, 2, 3}, c, 0, 0.1);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad_anchor) EXPECT_EQ(g, 0.0);
}

TEST(ContrastivePairLoss, KnownScalarCase) {
  // sim to the positive is 0.8, sim to the negative is 0.
  const Embedding anchor = {1.0, 0.0, 0.0};
  const std::vector<Embedding> c = {{0.8, 0.6, 0.0}, {0.0, 0.0, 1.0}};
  const auto r = contrastive_pair_loss(anchor, c, 0, 0.1);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-8.0)), 1e-8);
  EXPECT_NEAR(r.loss, 3.3540e-4, 1e-8);
}

TEST(ContrastivePairLoss, UniformSimilarityGivesLogK) {
  const Embedding anchor = {1.0, 0.0};
  for (std::size_t k = 1; k <= 6; ++k) {
    std::vector<Embedding> c(k, Embedding{1.0, 1.0});
    EXPECT_NEAR(contrastive_pair_loss(anchor, c, k - 1, 0.1).loss, std::log(double(k)), 1e-12);
  }
}

TEST(ContrastivePairLoss, Errors) {
  EXPECT_THROW(contrastive_pair_loss(Embedding{1, 0}, std::vector<Embedding>{}, 0, 0.1),
               ContractError);
  EXPECT_THROW(contrastive_pair_loss(Embedding{1, 0}, std::vector<Embedding>{{1, 0}}, 1, 0.1),
               ContractError);
  EXPECT_THROW(contrastive_pair_loss(Embedding{0, 0}, std::vector<Embedding>{{1, 0}}, 0, 0.1),
               DegenerateInputError);
  EXPECT_THROW(contrastive_pair_loss(Embedding{1, 0}, std::vector<Embedding>{{1, 0}}, 0, 0.0),
               ContractError);
}

TEST(ContrastivePairLoss, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    Embedding a = random_vector(rng, 8);
    std::vector<Embedding> c = random_vectors(rng, 1 + rng.index(5), 8);
    const std::size_t pos = rng.index(c.size());
    const auto r = contrastive_pair_loss(a, c, pos, 0.1);
    auto f = [&] { return contrastive_pair_loss(a, c, pos, 0.1).loss; };
    EXPECT_LE(rel_error(r.grad_anchor, numeric_gradient(f, a)), 1e-4);
    for (std::size_t k = 0; k < c.size(); ++k) {
      EXPECT_LE(rel_error(r.grad_candidates[k], numeric_gradient(f, c[k])), 1e-4);
    }
  }
}

TEST(ContrastivePairLoss, StoppedCandidatesGetNoGradient) {
  Rng rng(2);
  const Embedding a = random_vector(rng, 4);
  const auto c = random_vectors(rng, 3, 4);
  const StopMask stop = {0, 1, 0};
  const auto r = contrastive_pair_loss(a, c, 0, 0.1, stop);
  for (double g : r.grad_candidates[1]) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(r.loss, contrastive_pair_loss(a, c, 0, 0.1).loss);
}

TEST(ContrastivePairLoss, ScaleInvariant) {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    Embedding a = random_vector(rng, 6);
    auto c = random_vectors(rng, 4, 6);
    const double base = contrastive_pair_loss(a, c, 2, 0.1).loss;
    for (double& v : a) v *= 2.0;
    EXPECT_NEAR(contrastive_pair_loss(a, c, 2, 0.1).loss, base, 1e-10);
    for (double& v : c[1]) v *= 3.5;
    EXPECT_NEAR(contrastive_pair_loss(a, c, 2, 0.1).loss, base, 1e-10);
  }
}

TEST(ContrastivePairLoss, DecreasesAsPositiveSimilarityRises) {
  const Embedding anchor = {1.0, 0.0, 0.0};
  const std::vector<Embedding> negs = {{0.2, 1.0, 0.0}, {-0.3, 0.0, 1.0}};
  double prev = INFINITY;
  for (double angle = 3.0; angle >= 0.0; angle -= 0.1) {
    std::vector<Embedding> c = {{std::cos(angle), std::sin(angle), 0.0}};
    c.insert(c.end(), negs.begin(), negs.end());
    const double l = contrastive_pair_loss(anchor, c, 0, 0.1).loss;
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(ContrastivePairLoss, StableAtLowTemperature) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Embedding a = random_vector(rng, 8);
    const auto c = random_vectors(rng, 6, 8);
    const auto r = contrastive_pair_loss(a, c, rng.index(6), 0.01);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_GE(r.loss, 0.0);
    for (const auto& g : r.grad_candidates) {
      for (double v : g) EXPECT_TRUE(std::isfinite(v));
    }
  }
}

}  // namespace
}  // namespace gfn
