#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ubp/checkpoint.hpp"
#include "ubp/error.hpp"
#include "ubp/pipeline.hpp"
#include "ubp/rng.hpp"

using namespace ubp;
using namespace ubp::pipeline;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ubp::Error thrown";
  return ErrorKind::kUsage;
}

std::vector<int> ids(int n) {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = i;
  return out;
}

std::set<int> as_set(const std::vector<int>& v) { return {v.begin(), v.end()}; }

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 16;
  c.samples_per_video = {6, 2, 3};
  c.mc_samples = 3;
  return c;
}

}  // namespace

TEST(Folds, TenSubjectsFiveFolds) {
  const auto plan = make_folds(ids(10), 5, 1);
  ASSERT_EQ(plan.folds.size(), 5u);
  std::multiset<int> covered;
  for (const auto& f : plan.folds) {
    EXPECT_EQ(f.test.size(), 2u);
    EXPECT_EQ(f.train.size() + f.validation.size(), 8u);
    EXPECT_EQ(f.validation.size(), 2u);
    std::set<int> pool = as_set(f.train);
    pool.insert(f.validation.begin(), f.validation.end());
    EXPECT_EQ(pool.size(), 8u);
    for (int s : f.test) {
      EXPECT_FALSE(pool.count(s));
      covered.insert(s);
    }
  }
  const auto all = ids(10);
  EXPECT_EQ(covered, std::multiset<int>(all.begin(), all.end()));
}

TEST(Folds, ValidationIsTwentyPercent) {
  const auto plan = make_folds(ids(100), 5, 3);
  for (const auto& f : plan.folds) {
    EXPECT_EQ(f.validation.size(), 16u);
    EXPECT_EQ(f.train.size(), 64u);
  }
}

TEST(Folds, DeterministicPerSeed) {
  const auto a = make_folds(ids(30), 5, 8);
  const auto b = make_folds(ids(30), 5, 8);
  const auto c = make_folds(ids(30), 5, 9);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.digest(), c.digest());
}

TEST(Folds, TooFewSubjectsIsConfigError) {
  EXPECT_EQ(kind_of([] { make_folds(ids(4), 5, 1); }), ErrorKind::kConfiguration);
}

TEST(Folds, RecordsOfOneSubjectStayTogether) {
  const auto records = synth::generate_dataset(12, 2, 3, 4);
  const auto plan = make_folds(records, 3, 2);
  for (const auto& f : plan.folds) {
    const auto test = records_for(records, f.test);
    const auto train = records_for(records, f.train);
    for (auto i : test) {
      for (auto j : train) EXPECT_NE(records[i].subject.subject_id, records[j].subject.subject_id);
    }
  }
}

TEST(Oversample, ThresholdRule) {
  EXPECT_EQ(oversample_multiplicity(120, 80), 1);
  EXPECT_EQ(oversample_multiplicity(155, 80), 2);
  EXPECT_EQ(oversample_multiplicity(110, 70), 1);
  EXPECT_EQ(oversample_multiplicity(150, 100), 1);
  EXPECT_EQ(oversample_multiplicity(109.9, 80), 2);
  EXPECT_EQ(oversample_multiplicity(120, 69.9), 2);
  EXPECT_EQ(oversample_multiplicity(120, 100.1), 2);
  EXPECT_EQ(oversample_multiplicity(170, 105), 2);
}

TEST(Oversample, ListsOutOfRangeRecordsTwice) {
  const auto records = synth::generate_dataset(20, 1, 2, 6);
  std::vector<std::size_t> all(records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto out = oversample(records, all);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto n = std::count(out.begin(), out.end(), i);
    EXPECT_EQ(n, oversample_multiplicity(records[i].sbp, records[i].dbp));
  }
}

TEST(Window, FullRecordWhenLengthEqualsWindow) {
  EXPECT_EQ(sample_window_start(150, 150, 3), 0u);
}

TEST(Window, ShortRecordIsDegenerate) {
  EXPECT_EQ(kind_of([] { sample_window_start(100, 150, 3); }), ErrorKind::kDegenerateInput);
}

TEST(Window, FixedSeedSameWindow) {
  const auto records = synth::generate_dataset(5, 1, 1, 2);
  const synth::GeneratorConfig gen;
  const auto a = sample_window(records[0], gen, 150, 77);
  const auto b = sample_window(records[0], gen, 150, 77);
  EXPECT_EQ(a.start, b.start);
  EXPECT_EQ(a.rppg, b.rppg);
  EXPECT_EQ(a.st_map, b.st_map);
  EXPECT_EQ(a.appearance, b.appearance);
  EXPECT_EQ(a.rppg.size(), 3u * 150u);
  EXPECT_EQ(a.st_map.size(), 3u * 224u * 150u);
  EXPECT_EQ(a.ppg_target.size(), 150u);
  EXPECT_EQ(a.appearance, synth::appearance_at(records[0], a.start + 75, gen));
}

TEST(Window, StartsAreUniform) {
  const std::size_t bins = 151;
  std::vector<double> counts(bins, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[sample_window_start(300, 150, derive_seed(5, i))] += 1.0;
  const double expected = static_cast<double>(draws) / bins;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Wilson-Hilferty approximation of the 99th percentile.
  const double df = bins - 1.0;
  const double z = 2.3263;
  const double critical = df * std::pow(1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df)), 3);
  EXPECT_LT(chi2, critical);
}

TEST(Window, ReboundKeepsOnlyUnchangedInputs) {
  const auto records = synth::generate_dataset(5, 1, 1, 2);
  const synth::GeneratorConfig gen;
  WindowSource source(records, gen, 150);
  auto changed = records;
  changed[0].seed = derive_seed(changed[0].seed, 1);
  for (std::size_t i = 0; i < changed[0].traces.values.size(); ++i) {
    changed[0].traces.values[i] += static_cast<double>(i % 7);
  }
  WindowSource fresh(changed, gen, 150);
  const uq::Modality modalities[] = {uq::Modality::kRppg, uq::Modality::kPpg};
  for (auto m : modalities) {
    source.prepare(m);
    fresh.prepare(m);
  }
  auto rebound = source.rebound(changed);
  auto input = [](const WindowSource& s, uq::Modality m, std::size_t r) {
    std::vector<double> out;
    s.append_input(m, r, 0, out);
    return out;
  };
  for (auto m : modalities) {
    EXPECT_EQ(kind_of([&] { input(rebound, m, 0); }), ErrorKind::kUsage);
    EXPECT_EQ(input(rebound, m, 1), input(source, m, 1));
  }
  const std::vector<std::size_t> first{0};
  for (auto m : modalities) {
    rebound.prepare(m, first);
    EXPECT_EQ(input(rebound, m, 0), input(fresh, m, 0));
    EXPECT_NE(input(rebound, m, 0), input(source, m, 0));
  }
  changed.pop_back();
  EXPECT_EQ(kind_of([&] { (void)source.rebound(changed); }), ErrorKind::kUsage);
}

TEST(Scaler, AffineRoundTrip) {
  std::vector<std::array<double, 2>> labels{{120, 80}, {140, 90}, {100, 60}, {131, 77}};
  const auto s = LabelScaler::fit(labels);
  EXPECT_NEAR(s.scale(s.mean[0], uq::Target::kSbp), 0.0, 1e-12);
  EXPECT_NEAR(s.mean[0], 122.75, 1e-12);
  Rng rng(2);
  std::vector<double> v(50);
  for (auto& x : v) x = rng.uniform(60, 200);
  const auto back = s.unscale(s.scale(v, uq::Target::kDbp), uq::Target::kDbp);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(back[i], v[i], 1e-9);
  EXPECT_EQ(LabelScaler::from_json(s.to_json()).digest(), s.digest());
}

TEST(Scaler, UnfittedIsUsageError) {
  LabelScaler s;
  EXPECT_EQ(kind_of([&] { s.scale(1.0, uq::Target::kSbp); }), ErrorKind::kUsage);
}

TEST(Scaler, ConstantLabelsAreDegenerate) {
  std::vector<std::array<double, 2>> labels{{120, 80}, {120, 80}};
  EXPECT_EQ(kind_of([&] { LabelScaler::fit(labels); }), ErrorKind::kDegenerateInput);
}

TEST(Scaler, TestRecordsDoNotMoveTheScaler) {
  auto records = synth::generate_dataset(15, 1, 2, 3);
  const auto plan = make_folds(records, 3, 1);
  const auto train = records_for(records, plan.folds[0].train);
  const auto before = fit_scaler(records, train).digest();
  for (auto i : records_for(records, plan.folds[0].test)) records[i].sbp += 30.0;
  EXPECT_EQ(fit_scaler(records, train).digest(), before);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
  c = {};
  c.thresholds.sbp_low = 160;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
}

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate(uq::Modality::kImg, 1), 1e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(uq::Modality::kRppg, 10), 1e-3);
  EXPECT_DOUBLE_EQ(c.learning_rate(uq::Modality::kRppg, 11), 5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(uq::Modality::kPpg, 26), 2.5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(uq::Modality::kPpg, 1, true), 1e-5);
}

class TrainFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    synth::GeneratorConfig gen;
    gen.noise_sigma = 0.05;
    gen.noise_spread = 0.0;
    records_ = synth::generate_dataset(20, 1, 2, 12, gen);
    plan_ = make_folds(records_, 4, 3);
    source_ = std::make_unique<WindowSource>(records_, gen, 150);
  }

  std::vector<synth::SyntheticRecord> records_;
  FoldPlan plan_;
  std::unique_ptr<WindowSource> source_;
};

TEST_F(TrainFixture, RppgValidationLossDrops) {
  auto config = quick_config();
  config.epochs = 6;
  const auto r = train_modality(uq::Modality::kRppg, plan_.folds[0], 0, config, *source_, 5);
  ASSERT_EQ(r.validation_losses.size(), 6u);
  EXPECT_LT(r.validation_losses.back(), r.validation_losses.front());
  EXPECT_EQ(r.checkpoint.validation_loss,
            *std::min_element(r.validation_losses.begin(), r.validation_losses.end()));
  for (double v : r.validation_losses) EXPECT_LE(r.checkpoint.validation_loss, v);
}

TEST_F(TrainFixture, IdenticalSeedsGiveIdenticalCheckpoints) {
  auto config = quick_config();
  config.epochs = 2;
  for (auto m : uq::kModalities) {
    const auto a = train_modality(m, plan_.folds[1], 1, config, *source_, 9);
    const auto b = train_modality(m, plan_.folds[1], 1, config, *source_, 9);
    ASSERT_EQ(a.checkpoint.params.size(), b.checkpoint.params.size());
    for (std::size_t i = 0; i < a.checkpoint.params.size(); ++i) {
      EXPECT_EQ(a.checkpoint.params[i].value, b.checkpoint.params[i].value) << uq::to_string(m);
    }
    EXPECT_EQ(a.train_losses, b.train_losses);
    EXPECT_EQ(a.scaler.digest(), b.scaler.digest());
  }
}

TEST_F(TrainFixture, InitFromMustMatchNetwork) {
  auto config = quick_config();
  config.epochs = 1;
  const auto img = train_modality(uq::Modality::kImg, plan_.folds[0], 0, config, *source_, 1);
  TrainOptions options;
  options.init_from = &img.checkpoint;
  EXPECT_EQ(kind_of([&] {
              train_modality(uq::Modality::kRppg, plan_.folds[0], 0, config, *source_, 1, options);
            }),
            ErrorKind::kConfiguration);
  EXPECT_NO_THROW(
      train_modality(uq::Modality::kImg, plan_.folds[0], 0, config, *source_, 1, options));
}
