#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ubp/checkpoint.hpp"
#include "ubp/config.hpp"
#include "ubp/dataset_io.hpp"
#include "ubp/error.hpp"
#include "ubp/report.hpp"
#include "ubp/rng.hpp"

using namespace ubp;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("ubp_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ubp::Error thrown";
  return ErrorKind::kUsage;
}

void append_byte(const fs::path& p) {
  std::ofstream out(p, std::ios::app | std::ios::binary);
  out << ' ';
}

}  // namespace

TEST(Sha256, KnownVector) {
  EXPECT_EQ(nn::sha256_hex(std::string("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Traces, CsvRoundTripIsExact) {
  TempDir tmp;
  Rng rng(1);
  signals::RoiTraceSet traces(3, 40, 29.97);
  traces.roi_labels = signals::default_roi_labels();
  for (auto& v : traces.values) v = rng.uniform(0, 255);
  const auto path = tmp.path() / "traces.csv";
  io::write_traces_csv(path, traces);
  EXPECT_TRUE(fs::exists(path.string() + ".json"));
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "roi,channel,frame,value");
  const auto back = io::read_traces_csv(path);
  EXPECT_EQ(back.values, traces.values);
  EXPECT_EQ(back.frame_rate, 29.97);
  EXPECT_EQ(back.roi_labels, traces.roi_labels);
}

TEST(Dataset, SaveLoadRoundTrip) {
  TempDir tmp;
  ExperimentConfig config;
  config.subjects = 5;
  const auto records = synth::generate_dataset(5, 1, 2, 3, config.generator);
  const auto digest = io::save_dataset(tmp.path(), records, config);
  EXPECT_EQ(digest.size(), 64u);
  const auto ds = io::load_dataset(tmp.path());
  ASSERT_EQ(ds.records.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(ds.records[i].record_id, records[i].record_id);
    EXPECT_EQ(ds.records[i].traces.values, records[i].traces.values);
    EXPECT_EQ(ds.records[i].ppg_truth, records[i].ppg_truth);
    EXPECT_EQ(ds.records[i].sbp, records[i].sbp);
    EXPECT_EQ(ds.records[i].subject.appearance, records[i].subject.appearance);
    EXPECT_EQ(ds.records[i].subject.group_label, records[i].subject.group_label);
  }
}

TEST(Dataset, TamperedFileIsIntegrityError) {
  TempDir tmp;
  ExperimentConfig config;
  const auto records = synth::generate_dataset(5, 1, 1, 3);
  io::save_dataset(tmp.path(), records, config);
  append_byte(tmp.path() / records[2].record_id / "labels.json");
  EXPECT_EQ(kind_of([&] { io::load_dataset(tmp.path()); }), ErrorKind::kIntegrity);
}

TEST(Dataset, MissingDirectoryIsMissingInput) {
  EXPECT_EQ(kind_of([] { io::load_dataset("/nonexistent/ubp/dataset"); }),
            ErrorKind::kMissingInput);
}

TEST(Checkpoint, RoundTripAndIntegrity) {
  TempDir tmp;
  nn::Checkpoint ck;
  ck.spec = nn::image_network(8, 0.5);
  ck.params = nn::init_parameters(ck.spec, 4);
  ck.modality = "img";
  ck.fold = 2;
  ck.seed = 99;
  ck.epoch = 7;
  ck.validation_loss = 1.25;
  ck.extra["note"] = "x";
  const auto stem = tmp.path() / "fold2_img";
  nn::save_checkpoint(ck, stem);
  const auto back = nn::load_checkpoint(stem);
  EXPECT_EQ(back.modality, "img");
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.validation_loss, 1.25);
  EXPECT_EQ(back.extra, ck.extra);
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) EXPECT_EQ(back.params[i].value, ck.params[i].value);

  append_byte(stem.string() + ".bin");
  EXPECT_EQ(kind_of([&] { nn::load_checkpoint(stem); }), ErrorKind::kIntegrity);
  fs::remove(stem.string() + ".bin");
  EXPECT_EQ(kind_of([&] { nn::load_checkpoint(stem); }), ErrorKind::kMissingInput);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.seed = 17;
  c.subjects = 40;
  c.modalities = {uq::Modality::kPpg};
  c.generator.groups = {{"light", 1.0, 1.0}, {"dark", 0.4, 2.0}};
  c.train.epochs = 3;
  c.train.samples_per_video = {5, 4, 3};
  const auto back = experiment_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownKeyIsConfigError) {
  const auto j = nlohmann::json::parse(R"({"train": {"epochz": 3}})");
  EXPECT_EQ(kind_of([&] { experiment_from_json(j); }), ErrorKind::kConfiguration);
  const auto top = nlohmann::json::parse(R"({"bogus": 1})");
  EXPECT_EQ(kind_of([&] { experiment_from_json(top); }), ErrorKind::kConfiguration);
  const auto wrong_type = nlohmann::json::parse(R"({"subjects": "many"})");
  EXPECT_EQ(kind_of([&] { experiment_from_json(wrong_type); }), ErrorKind::kConfiguration);
}

TEST(Config, ModalityList) {
  EXPECT_EQ(parse_modalities("img,rppg"),
            (std::vector<uq::Modality>{uq::Modality::kRppg, uq::Modality::kImg}));
  EXPECT_EQ(kind_of([] { parse_modalities("rppg,rppg"); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse_modalities("face"); }), ErrorKind::kConfiguration);
}

TEST(Config, TooFewSubjectsFailsValidation) {
  ExperimentConfig c;
  c.subjects = 2;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
}

TEST(Report, MetricsCsvRoundTrip) {
  TempDir tmp;
  std::vector<report::MetricsRow> rows(2);
  rows[0].fold = "0";
  rows[0].method = "uda-fuse";
  rows[0].metrics = {9.5, 0.61, false, 63.2, 80.1, 'D'};
  rows[1].fold = "all";
  rows[1].target = uq::Target::kDbp;
  rows[1].method = "mean-regressor";
  rows[1].metrics = {8.1, 0.0, true, 70.0, 100.0, 'C'};
  const auto path = tmp.path() / "metrics.csv";
  report::write_metrics_csv(path, rows);
  EXPECT_EQ(report::read_text(path).substr(0, 37), "fold,target,method,mae,corr,suc10,mas");
  const auto back = report::read_metrics_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].fold, "all");
  EXPECT_EQ(back[1].method, "mean-regressor");
  EXPECT_EQ(back[1].target, uq::Target::kDbp);
  EXPECT_NEAR(back[0].metrics.mae, 9.5, 1e-6);
  EXPECT_EQ(back[1].metrics.bhs, 'C');
}

TEST(Report, CurveAndPredictionRoundTrip) {
  TempDir tmp;
  eval::ConfidenceCurve curve{{0.5, 1.0}, {80.0, 70.0}};
  report::write_curve_csv(tmp.path() / "c.csv", curve);
  const auto c = report::read_curve_csv(tmp.path() / "c.csv");
  EXPECT_EQ(c.x, curve.x);
  EXPECT_EQ(c.suc10, curve.suc10);

  std::vector<report::PredictionRow> rows{{"s1_r0", 1, "A", uq::Target::kSbp, "ppg", 120, 118.5, 0.4}};
  report::write_predictions_csv(tmp.path() / "p.csv", rows);
  const auto p = report::read_predictions_csv(tmp.path() / "p.csv");
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].sample_id, "s1_r0");
  EXPECT_EQ(p[0].prediction, 118.5);
  const auto files = report::write_plots(tmp.path(), rows, &curve);
  EXPECT_EQ(files.size(), 2u);
  for (const auto& f : files) EXPECT_NE(report::read_text(f).find("<svg"), std::string::npos);
}

TEST(Report, NumberFormat) {
  EXPECT_EQ(report::format_number(-0.0), "0.000000");
  EXPECT_EQ(report::format_number(1.5), "1.500000");
}
