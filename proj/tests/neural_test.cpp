#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ubp/error.hpp"
#include "ubp/layers.hpp"
#include "ubp/neural.hpp"

using namespace ubp;
using namespace ubp::nn;

namespace {

NetworkSpec linear_spec() {
  NetworkSpec spec;
  spec.name = "linear";
  spec.input_shape = {2};
  spec.head = {DenseLayer{2, 4}};
  return spec;
}

NetworkSpec dropout_spec(double p) {
  NetworkSpec spec;
  spec.name = "drop";
  spec.input_shape = {6};
  spec.head = {DenseLayer{6, 16}, ActivationLayer{ActivationKind::kTanh}, DropoutLayer{p},
               DenseLayer{16, 4}};
  return spec;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ubp::Error thrown";
  return ErrorKind::kUsage;
}

}  // namespace

TEST(Forward, LinearHandComputed) {
  const auto spec = linear_spec();
  auto params = init_parameters(spec, 1);
  ASSERT_EQ(params.size(), 2u);
  params[0].value = {1, 2, 0.3, 0.4, -1, 0.5, 0, -2};
  params[1].value = {0.1, 0.2, 0.3, 0.4};
  const std::vector<double> x{1, 2};
  const auto out = predict(spec, params, x, 1, false, 0).outputs[0];
  EXPECT_DOUBLE_EQ(out.mu_sbp, 1 + 4 + 0.1);
  EXPECT_DOUBLE_EQ(out.s_sbp, 0.3 + 0.8 + 0.2);
  EXPECT_DOUBLE_EQ(out.mu_dbp, -1 + 1 + 0.3);
  EXPECT_DOUBLE_EQ(out.s_dbp, 0 - 4 + 0.4);
}

TEST(Forward, LogVarianceIsClamped) {
  const auto spec = linear_spec();
  auto params = init_parameters(spec, 1);
  params[0].value = {0, 0, 100, 0, 0, 0, -100, 0};
  const auto out = predict(spec, params, std::vector<double>{1, 0}, 1, false, 0).outputs[0];
  EXPECT_EQ(out.s_sbp, kLogVarianceMax);
  EXPECT_EQ(out.s_dbp, kLogVarianceMin);
}

TEST(Forward, ZeroDropoutIgnoresActiveFlag) {
  const auto spec = dropout_spec(0.0);
  const auto params = init_parameters(spec, 3);
  const std::vector<double> x{0.1, -0.4, 0.3, 0.9, -1.2, 0.5};
  const auto a = predict(spec, params, x, 1, true, 11).outputs[0];
  const auto b = predict(spec, params, x, 1, false, 11).outputs[0];
  EXPECT_EQ(a.mu_sbp, b.mu_sbp);
  EXPECT_EQ(a.s_dbp, b.s_dbp);
}

TEST(Forward, FixedSeedIsDeterministic) {
  const auto spec = dropout_spec(0.5);
  const auto params = init_parameters(spec, 3);
  const std::vector<double> x{0.1, -0.4, 0.3, 0.9, -1.2, 0.5};
  const auto a = predict(spec, params, x, 1, true, 11).outputs[0];
  const auto b = predict(spec, params, x, 1, true, 11).outputs[0];
  const auto c = predict(spec, params, x, 1, true, 12).outputs[0];
  EXPECT_EQ(a.mu_sbp, b.mu_sbp);
  EXPECT_EQ(a.mu_dbp, b.mu_dbp);
  EXPECT_NE(a.mu_sbp, c.mu_sbp);
}

TEST(Forward, ShapeMismatchIsConfigError) {
  auto spec = linear_spec();
  spec.head = {DenseLayer{3, 4}};
  EXPECT_EQ(kind_of([&] { spec.validate(); }), ErrorKind::kConfiguration);
  auto bad_head = linear_spec();
  bad_head.head = {DenseLayer{2, 3}};
  EXPECT_EQ(kind_of([&] { bad_head.validate(); }), ErrorKind::kConfiguration);
  const auto good = linear_spec();
  const auto params = init_parameters(good, 1);
  Tape tape;
  auto ps = params;
  const Var x = tape.constant({1, 3}, {1, 2, 3});
  EXPECT_EQ(kind_of([&] { forward(tape, good, ps, x, false, 0); }), ErrorKind::kConfiguration);
}

TEST(Forward, DropoutProbabilityMustBeBelowOne) {
  Tape tape;
  Rng rng(1);
  const Var x = tape.constant({1, 2}, {1, 2});
  EXPECT_EQ(kind_of([&] { dropout(x, 1.0, true, rng); }), ErrorKind::kConfiguration);
}

TEST(Forward, DropoutExpectationEqualsInput) {
  Rng rng(17);
  const std::size_t n = 50;
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(0.5, 2.0);
  std::vector<double> sum(n, 0.0);
  const int masks = 20000;
  for (int m = 0; m < masks; ++m) {
    Tape tape;
    const Var y = dropout(tape.constant({1, n}, x), 0.5, true, rng);
    for (std::size_t i = 0; i < n; ++i) sum[i] += y.value()[i];
  }
  double total_in = 0.0, total_out = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total_in += x[i];
    total_out += sum[i] / masks;
  }
  EXPECT_NEAR(total_out / total_in, 1.0, 0.01);
}

TEST(Forward, ModalityNetworksValidateAndRoundTripJson) {
  for (const auto& spec : {rppg_network(), ppg_network(), image_network()}) {
    EXPECT_NO_THROW(spec.validate());
    EXPECT_EQ(to_json(spec_from_json(to_json(spec))), to_json(spec));
  }
  EXPECT_TRUE(ppg_network().is_pulse_network());
  EXPECT_FALSE(rppg_network().is_pulse_network());
}

TEST(Backward, EmptyTapeIsUsageError) {
  Tape tape;
  EXPECT_EQ(kind_of([&] { tape.backward(Var(&tape, 0)); }), ErrorKind::kUsage);
}

TEST(Backward, SecondSweepIsUsageError) {
  ParameterSet ps{ParamTensor("w", {1})};
  Tape tape;
  const Var loss = mse(tape.parameter(ps[0]), std::vector<double>{1.0});
  tape.backward(loss);
  EXPECT_EQ(kind_of([&] { tape.backward(loss); }), ErrorKind::kUsage);
}

TEST(Backward, NonScalarIsUsageError) {
  ParameterSet ps{ParamTensor("w", {3})};
  Tape tape;
  const Var w = tape.parameter(ps[0]);
  EXPECT_EQ(kind_of([&] { tape.backward(w); }), ErrorKind::kUsage);
}

TEST(NllLoss, PerfectUnitVarianceIsZero) {
  const std::vector<HeteroscedasticOutput> out{{0, 0, 0, 0}};
  const std::vector<std::array<double, 2>> labels{{0, 0}};
  EXPECT_EQ(nll_loss(out, labels), 0.0);
}

TEST(NllLoss, HandEvaluation) {
  // DBP term zeroed: r = 0, s = 0.
  const std::vector<HeteroscedasticOutput> out{{2.0, std::log(4.0), 0.0, 0.0}};
  const std::vector<std::array<double, 2>> labels{{0.0, 0.0}};
  EXPECT_NEAR(nll_loss(out, labels), 0.5 + 0.5 * std::log(4.0), 1e-12);
  EXPECT_NEAR(nll_loss(out, labels), 1.1931, 1e-4);
}

TEST(NllLoss, BatchMeanAndGraphFormAgree) {
  const std::vector<HeteroscedasticOutput> out{{0.5, -0.3, 1.0, 0.2}, {-1.0, 0.4, 0.3, -0.6}};
  const std::vector<std::array<double, 2>> labels{{0.1, -0.2}, {0.7, 0.9}};
  double expect = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double rs = out[i].mu_sbp - labels[i][0];
    const double rd = out[i].mu_dbp - labels[i][1];
    expect += rs * rs / (2 * std::exp(out[i].s_sbp)) + out[i].s_sbp / 2;
    expect += rd * rd / (2 * std::exp(out[i].s_dbp)) + out[i].s_dbp / 2;
  }
  expect /= 2;
  EXPECT_NEAR(nll_loss(out, labels), expect, 1e-12);
  Tape tape;
  const Var head = tape.constant({2, 4}, {0.5, -0.3, 1.0, 0.2, -1.0, 0.4, 0.3, -0.6});
  EXPECT_NEAR(nll(head, std::vector<double>{0.1, -0.2, 0.7, 0.9}).value()[0], expect, 1e-12);
}

TEST(NllLoss, EmptyBatchIsUsageError) {
  EXPECT_EQ(kind_of([] { nll_loss({}, {}); }), ErrorKind::kUsage);
}

TEST(NllLoss, StationaryAtLogResidualSquared) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double r = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 3.0);
    auto f = [&](double s) {
      const std::vector<HeteroscedasticOutput> out{{r, s, 0.0, 0.0}};
      const std::vector<std::array<double, 2>> labels{{0.0, 0.0}};
      return nll_loss(out, labels);
    };
    EXPECT_NEAR(oracle::golden_section_min(f, -10.0, 10.0), std::log(r * r), 1e-3);
  }
}

TEST(PulseLoss, IdenticalIsZero) {
  std::vector<double> p(20);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::sin(0.3 * i);
  const auto t = signals::derive_triplet(p);
  EXPECT_EQ(pulse_loss(t, t), 0.0);
}

TEST(PulseLoss, ConstantOffsetHitsOnlyPpgTerm) {
  std::vector<double> p(20);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::sin(0.3 * i);
  auto q = p;
  for (auto& v : q) v += 0.7;
  const auto a = signals::derive_triplet(q);
  const auto b = signals::derive_triplet(p);
  // The shifted derivatives cancel only up to rounding.
  EXPECT_NEAR(pulse_loss(a, b), 5.0 * 0.49, 1e-12);
}

TEST(PulseLoss, MatchesThreeTermOracle) {
  Rng rng(8);
  signals::PulseTriplet a, b;
  a.ppg.resize(30);
  b.ppg.resize(30);
  for (auto& v : a.ppg) v = rng.normal();
  for (auto& v : b.ppg) v = rng.normal();
  a = signals::derive_triplet(a.ppg);
  b = signals::derive_triplet(b.ppg);
  auto msev = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s / x.size();
  };
  const double expect = 5 * msev(a.ppg, b.ppg) + 10 * msev(a.vpg, b.vpg) + 15 * msev(a.apg, b.apg);
  EXPECT_NEAR(pulse_loss(a, b), expect, 1e-9);

  Tape tape;
  const Var pred = tape.constant({1, 30}, a.ppg);
  EXPECT_NEAR(pulse_loss(pred, b.ppg).value()[0], expect, 1e-9);
}

TEST(PulseLoss, LengthMismatchIsUsageError) {
  const auto a = signals::derive_triplet(std::vector<double>(10, 1.0));
  const auto b = signals::derive_triplet(std::vector<double>(11, 1.0));
  EXPECT_EQ(kind_of([&] { pulse_loss(a, b); }), ErrorKind::kUsage);
}

TEST(JointLoss, IsUnweightedSum) {
  EXPECT_EQ(joint_ppg_loss(0.0, 0.0), 0.0);
  EXPECT_EQ(joint_ppg_loss(1.5, 2.5), 4.0);
}

TEST(JointLoss, GradientsReachReconstructionAndHead) {
  const auto spec = ppg_network(12, 40);
  auto params = init_parameters(spec, 5);
  Rng rng(6);
  std::vector<double> input(2 * numel(spec.input_shape));
  for (auto& v : input) v = rng.normal();
  Tape tape;
  Shape shape{2};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  const auto pass = forward(tape, spec, params, tape.constant(shape, input), true, 3);
  std::vector<double> truth(pass.pulse->value().size());
  for (auto& v : truth) v = rng.normal();
  tape.backward(joint_ppg_loss(pulse_loss(*pass.pulse, truth),
                               nll(pass.head, std::vector<double>{0.3, -0.2, 1.0, 0.4})));
  double recon = 0.0, head = 0.0;
  for (const auto& p : params) {
    double n = 0.0;
    for (double g : p.grad) n += g * g;
    if (p.name.rfind("reconstruction", 0) == 0) recon += n;
    if (p.name.rfind("head", 0) == 0) head += n;
  }
  EXPECT_GT(recon, 0.0);
  EXPECT_GT(head, 0.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterSet ps{ParamTensor("w", {3})};
  ps[0].value = {1, -2, 3};
  AdamState state;
  optimizer_step(ps, state, 0.1);
  EXPECT_EQ(ps[0].value, (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps{ParamTensor("w", {1})};
  ps[0].value = {0.5};
  ps[0].grad = {1.0};
  AdamState state;
  optimizer_step(ps, state, 0.01);
  EXPECT_NEAR(ps[0].value[0], 0.5 - 0.01, 1e-9);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  ParameterSet ps{ParamTensor("w", {1})};
  ps[0].value = {1.0};
  AdamState state;
  for (int i = 0; i < 200; ++i) {
    ps[0].grad = {2.0 * ps[0].value[0]};
    optimizer_step(ps, state, 0.1);
  }
  EXPECT_LT(std::abs(ps[0].value[0]), 1e-3);
}
