#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ubp/error.hpp"
#include "ubp/layers.hpp"
#include "uq_checks.hpp"

using namespace ubp;
using namespace ubp::uq;

namespace {

McSampleSet make_set(std::vector<double> mu, std::vector<double> log_var) {
  McSampleSet s;
  s.mu = std::move(mu);
  s.log_var = std::move(log_var);
  return s;
}

nn::NetworkSpec small_net(double p) {
  nn::NetworkSpec spec;
  spec.name = "small";
  spec.input_shape = {5};
  spec.head = {nn::DenseLayer{5, 32}, nn::ActivationLayer{}, nn::DropoutLayer{p},
               nn::DenseLayer{32, 4}};
  return spec;
}

FusionContext unit_context() {
  FusionContext ctx;
  for (auto& row : ctx.mean_aleatoric) row = {0.5, 0.5};
  for (auto& row : ctx.mean_epistemic) row = {0.5, 0.5};
  return ctx;
}

}  // namespace

TEST(McSample, ZeroDropoutGivesIdenticalSamples) {
  const auto spec = small_net(0.0);
  const auto params = nn::init_parameters(spec, 1);
  const std::vector<double> x{0.1, 0.2, -0.3, 0.4, 1.0};
  const auto sets = mc_sample(spec, params, x, 10, 5, Modality::kImg);
  for (const auto& s : sets) {
    EXPECT_EQ(s.size(), 10u);
    for (double m : s.mu) EXPECT_EQ(m, s.mu[0]);
    EXPECT_LT(epistemic(s), 1e-12);
  }
  EXPECT_EQ(sets[0].target, Target::kSbp);
  EXPECT_EQ(sets[1].target, Target::kDbp);
  EXPECT_EQ(sets[0].modality, Modality::kImg);
}

TEST(McSample, FixedSeedDeterministicAndDropoutSpreads) {
  const auto spec = small_net(0.5);
  const auto params = nn::init_parameters(spec, 1);
  const std::vector<double> x{0.1, 0.2, -0.3, 0.4, 1.0};
  const auto a = mc_sample(spec, params, x, 10, 5, Modality::kRppg);
  const auto b = mc_sample(spec, params, x, 10, 5, Modality::kRppg);
  EXPECT_EQ(a[0].mu, b[0].mu);
  EXPECT_EQ(a[1].log_var, b[1].log_var);
  EXPECT_GT(epistemic(a[0]), 0.0);
}

TEST(McSample, BatchMatchesSingleInput) {
  const auto spec = small_net(0.5);
  const auto params = nn::init_parameters(spec, 2);
  const std::vector<double> x{0.1, 0.2, -0.3, 0.4, 1.0, -1, 0.5, 0.5, 0.2, 0.0};
  const auto batch = mc_sample_batch(spec, params, x, 2, 6, 9, Modality::kPpg);
  ASSERT_EQ(batch.size(), 2u);
  for (const auto& sets : batch) EXPECT_EQ(sets[0].size(), 6u);
}

TEST(Aleatoric, HandValues) {
  EXPECT_NEAR(aleatoric(make_set({0, 1, 2}, {std::log(4.0), std::log(4.0), std::log(4.0)})), 4.0, 1e-12);
  EXPECT_NEAR(aleatoric(make_set({0, 1}, {std::log(4.0), std::log(6.0)})), 5.0, 1e-12);
  EXPECT_EQ(aleatoric(make_set({3, 3}, {0, 0})), 1.0);
}

TEST(Epistemic, HandValues) {
  EXPECT_EQ(epistemic(make_set({7, 7, 7}, {0, 0, 0})), 0.0);
  EXPECT_NEAR(epistemic(make_set({120, 124}, {0, 0})), 4.0, 1e-9);
}

TEST(Epistemic, MatchesTwoPassOracle) {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto set = uqcheck::random_set(rng, 2 + rng.index(20));
    double mean = 0.0;
    for (double m : set.mu) mean += m;
    mean /= set.size();
    double var = 0.0;
    for (double m : set.mu) var += (m - mean) * (m - mean);
    var /= set.size();
    EXPECT_NEAR(epistemic(set), var, 1e-9 * std::max(var, 1e-12));
  }
}

TEST(McSampleSet, InvalidSetsAreUsageErrors) {
  for (const auto& set : {make_set({1}, {0}), make_set({1, 2}, {0}),
                          make_set({1, NAN}, {0, 0})}) {
    try {
      set.validate();
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kUsage);
    }
  }
}

TEST(TotalUncertainty, SumsComponents) {
  const std::array<ModalityUncertainty, 3> zero{};
  EXPECT_EQ(total_uncertainty(zero), 0.0);
  const std::array<ModalityUncertainty, 3> u{{{1, 2}, {3, 4}, {5, 6}}};
  EXPECT_EQ(total_uncertainty(u), 21.0);
  const std::vector<ModalityUncertainty> two{{1, 2}, {3, 4}};
  EXPECT_THROW(total_uncertainty(two), Error);
}

TEST(TotalUncertainty, LawOfTotalVariance) {
  EXPECT_LT(uqcheck::total_variance_error(1000, 3), 1e-9);
}

TEST(Uda, EqualUncertaintiesGiveArithmeticMean) {
  const std::array<double, 3> pred{100, 110, 150};
  const std::array<ModalityUncertainty, 3> u{{{1, 0}, {1, 0}, {1, 0}}};
  const auto f = uda_fuse(pred, u, unit_context(), Target::kSbp);
  for (double w : f.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(f.fused, 120.0, 1e-9);
}

TEST(Uda, HandWeights) {
  const std::array<double, 3> pred{100, 120, 140};
  const std::array<ModalityUncertainty, 3> u{{{0.5, 0.5}, {1.5, 0.5}, {3.0, 1.0}}};
  const auto f = uda_fuse(pred, u, unit_context(), Target::kDbp);
  EXPECT_NEAR(f.weights[0], 4.0 / 7.0, 1e-12);
  EXPECT_NEAR(f.weights[1], 2.0 / 7.0, 1e-12);
  EXPECT_NEAR(f.weights[2], 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(f.fused, 780.0 / 7.0, 1e-9);
  EXPECT_NEAR(f.total_uncertainty, 7.0, 1e-12);
  EXPECT_NEAR(f.aleatoric_total, 5.0, 1e-12);
  EXPECT_NEAR(f.epistemic_total, 2.0, 1e-12);
}

TEST(Uda, NormalizesByContext) {
  FusionContext ctx = unit_context();
  ctx.mean_aleatoric[2][0] = 3.5;  // img/sbp normalizer 4
  const std::array<double, 3> pred{100, 120, 140};
  const std::array<ModalityUncertainty, 3> u{{{1, 0}, {1, 0}, {4, 0}}};
  const auto f = uda_fuse(pred, u, ctx, Target::kSbp);
  for (double w : f.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
}

TEST(Uda, DoublingLeavesWeights) {
  const std::array<double, 3> u{0.3, 1.2, 2.5};
  const std::array<double, 3> d{0.6, 2.4, 5.0};
  const auto a = uda_weights(u);
  const auto b = uda_weights(d);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(a[m], b[m], 1e-15);
}

TEST(Uda, RandomTripleProperties) {
  const auto r = uqcheck::uda_properties(1000, 21);
  EXPECT_LE(r.max_weight_error, 1e-12);
  EXPECT_TRUE(r.sums_to_one);
  EXPECT_TRUE(r.monotone);
  EXPECT_TRUE(r.permutation_equivariant);
  EXPECT_TRUE(r.scale_invariant);
}

TEST(Uda, FusedIsConvexCombination) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const std::array<double, 3> pred{rng.uniform(80, 180), rng.uniform(80, 180), rng.uniform(80, 180)};
    std::array<ModalityUncertainty, 3> u{};
    for (auto& v : u) v = {rng.uniform(0.01, 2), rng.uniform(0.01, 2)};
    const auto f = uda_fuse(pred, u, unit_context(), Target::kSbp);
    EXPECT_GE(f.fused, *std::min_element(pred.begin(), pred.end()) - 1e-9);
    EXPECT_LE(f.fused, *std::max_element(pred.begin(), pred.end()) + 1e-9);
  }
}

TEST(Uda, ZeroUncertaintyLimit) {
  const auto one = uda_weights(std::array<double, 3>{0.0, 1.0, 2.0});
  EXPECT_EQ(one, (std::array<double, 3>{1.0, 0.0, 0.0}));
  const auto all = uda_weights(std::array<double, 3>{0.0, 0.0, 0.0});
  for (double w : all) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(Uda, NonPositiveContextIsUsageError) {
  FusionContext ctx;
  const std::array<double, 3> pred{1, 2, 3};
  const std::array<ModalityUncertainty, 3> u{{{1, 0}, {1, 0}, {1, 0}}};
  EXPECT_THROW(uda_fuse(pred, u, ctx, Target::kSbp), Error);
  EXPECT_THROW(ctx.validate(), Error);
}

TEST(MeanFuse, EqualWeights) {
  const std::array<double, 3> pred{90, 120, 150};
  const std::array<ModalityUncertainty, 3> u{{{1, 0}, {2, 0}, {30, 0}}};
  const auto f = mean_fuse(pred, u);
  EXPECT_NEAR(f.fused, 120.0, 1e-12);
  EXPECT_NEAR(f.total_uncertainty, 33.0, 1e-12);
}

TEST(Triage, HandCases) {
  const std::vector<double> u{3, 1, 2};
  EXPECT_EQ(triage_rank(u, 1.0 / 3.0), (std::vector<std::size_t>{1}));
  EXPECT_EQ(triage_rank(u, 1.0).size(), 3u);
  const std::vector<double> ties{1, 1, 1, 0};
  EXPECT_EQ(triage_rank(ties, 0.5), (std::vector<std::size_t>{3, 0}));
  EXPECT_THROW(triage_rank(std::vector<double>{}, 0.5), Error);
  EXPECT_THROW(triage_rank(u, 0.0), Error);
}

TEST(Triage, MatchesSortOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(60);
    std::vector<double> u(n);
    for (auto& v : u) v = rng.uniform();
    const double x = rng.uniform(0.01, 1.0);
    const auto keep = static_cast<std::size_t>(std::ceil(x * n));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return u[a] < u[b] || (u[a] == u[b] && a < b); });
    idx.resize(keep);
    EXPECT_EQ(triage_rank(u, x), idx);
  }
}
