#include <unistd.h>

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support/synthetic.hpp"
#include "trailcam/cli.hpp"

using namespace trailcam;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "trailcam");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    // ctest runs each case in its own process, possibly concurrently
    root_ = fs::temp_directory_path() / ("trailcam_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    synth::DatasetSpec spec;
    spec.sites = 2;
    spec.per_day = 12;
    ds_ = new synth::Dataset(synth::make_dataset(root_, spec));
  }
  static void TearDownTestSuite() {
    delete ds_;
    fs::remove_all(root_);
  }

  std::vector<std::string> base(std::vector<std::string> extra, const std::string& out) const {
    std::vector<std::string> a = {"--config", ds_->config.string(), "--out", (root_ / out).string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }

  static fs::path root_;
  static synth::Dataset* ds_;
};

fs::path CliTest::root_;
synth::Dataset* CliTest::ds_ = nullptr;

}  // namespace

TEST_F(CliTest, IngestSummarises) {
  Result r = run({"ingest", ds_->manifest.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["images"], 48);
  EXPECT_EQ(j["animal"], 24);
  EXPECT_EQ(j["per_site"]["s2"], 24);
}

TEST_F(CliTest, UsageAndIoErrorsMapToExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"ingest", "/nonexistent/manifest.csv"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  Result bad = run(base({"crop", ds_->manifest.string(), "--site", "s9"}, "o_err"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("s9"), std::string::npos);
  EXPECT_EQ(run(base({"mean", ds_->manifest.string(), "--site", "s1"}, "o_err")).code, 1);  // no --date
  EXPECT_EQ(run(base({"tp-exp", ds_->manifest.string(), "--mu0", "1.5"}, "o_err")).code, 1);
}

TEST_F(CliTest, CropWritesWindowsAndRetention) {
  Result r = run(base({"crop", ds_->manifest.string(), "--site", "s1"}, "o_crop"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(root_ / "o_crop/crops/s1/crop.json"));
  EXPECT_EQ(j["window"]["size"], 160);
  EXPECT_EQ(j["retention_rate"], 1.0);
  EXPECT_EQ(load_image(root_ / "o_crop/crops/s1/s1_d1_0.png").width, 160);
}

TEST_F(CliTest, SampleBalancesPerSite) {
  Result r = run(base({"sample", ds_->manifest.string(), "--site", "s2", "--frame-width", "320"}, "o_sample"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["animal"], j["no_animal"]);
  EXPECT_GT(j["animal"].get<int>(), 0);
  std::string text = slurp(root_ / "o_sample/training_s2.csv");
  EXPECT_NE(text.find("hflip"), std::string::npos);
}

TEST_F(CliTest, MeanRegisterThenDriftCheckMatches) {
  const std::string states = (root_ / "states_a").string();
  Result m = run(base({"mean", ds_->manifest.string(), "--site", "s1", "--date", "2021-06-01", "--register",
                       "--state-root", states},
                      "o_mean"));
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_TRUE(fs::exists(root_ / "o_mean/means/s1/2021-06-01.json"));
  Result d = run(base({"drift-check", ds_->manifest.string(), "--site", "s1", "--date", "2021-06-02", "--state-root", states},
                      "o_mean"));
  ASSERT_EQ(d.code, 0) << d.err;
  auto j = nlohmann::json::parse(slurp(root_ / "o_mean/drift_s1_2021-06-02.json"));
  EXPECT_EQ(j["retrain"], false);
  EXPECT_EQ(j["matched_state_date"], "2021-06-01");
  Result rti = run(base({"rti-matrix", "--site", "s1", "--state-root", states}, "o_mean"));
  ASSERT_EQ(rti.code, 0) << rti.err;
  EXPECT_EQ(rti.out.substr(0, 16), "date,2021-06-01\n");
}

TEST_F(CliTest, DriftCheckOnUnprimedSiteFails) {
  Result d = run(base({"drift-check", ds_->manifest.string(), "--site", "s2", "--date", "2021-06-02", "--state-root",
                       (root_ / "states_empty").string()},
                      "o_unprimed"));
  EXPECT_EQ(d.code, 1);
  EXPECT_NE(d.err.find("unprimed"), std::string::npos);
}

TEST_F(CliTest, LowThresholdTriggersRetrainWithSubset) {
  const std::string states = (root_ / "states_b").string();
  ASSERT_EQ(run(base({"mean", ds_->manifest.string(), "--site", "s2", "--date", "2021-06-01", "--register", "--state-root",
                      states},
                     "o_retrain"))
                .code,
            0);
  // different noise on each day keeps RTI above a tiny threshold
  Result d = run(base({"drift-check", ds_->manifest.string(), "--site", "s2", "--date", "2021-06-02", "--state-root", states,
                       "--threshold", "1e-9", "--quota", "6", "--balanced-subset"},
                      "o_retrain"));
  ASSERT_EQ(d.code, 3) << d.err;
  std::istringstream subset(slurp(root_ / "o_retrain/retrain_s2_2021-06-02.csv"));
  auto recs = ingest_manifest(subset);
  EXPECT_EQ(recs.size(), 6u);
  EXPECT_EQ(std::count_if(recs.begin(), recs.end(), [](auto& r) { return r.label == Label::animal; }), 3);
  EXPECT_TRUE(StateStore(states).contains("s2", "2021-06-02"));
}

TEST_F(CliTest, PredictAndEvaluateWithOracle) {
  Result p = run(base({"predict", ds_->manifest.string()}, "o_pred"));
  ASSERT_EQ(p.code, 0) << p.err;
  Result e = run(base({"eval-classify", (root_ / "o_pred/predictions.csv").string(), ds_->manifest.string()}, "o_pred"));
  ASSERT_EQ(e.code, 0) << e.err;
  auto j = nlohmann::json::parse(e.out);
  EXPECT_EQ(j["sensitivity"], 1.0);
  EXPECT_EQ(j["specificity"], 1.0);
}

TEST_F(CliTest, ExternalPredictorThroughCli) {
  const std::string spec = std::string("day='") + TRAILCAM_FAKE_PREDICTOR + "' --p-animal 0.2";
  Result p = run(base({"predict", ds_->manifest.string(), "--site", "s1", "--predictor", spec}, "o_ext"));
  ASSERT_EQ(p.code, 0) << p.err;
  std::string text = slurp(root_ / "o_ext/predictions.csv");
  EXPECT_NE(text.find("NoAnimal,external:0"), std::string::npos);
  Result bad = run(base({"predict", ds_->manifest.string(), "--site", "s1", "--predictor",
                         std::string("day='") + TRAILCAM_FAKE_PREDICTOR + "' --mode missing"},
                        "o_ext"));
  EXPECT_EQ(bad.code, 2);
}

TEST_F(CliTest, ExperimentsWithOracleSucceedEverywhere) {
  Result tp = run(base({"tp-exp", ds_->manifest.string(), "--seed", "3"}, "o_exp"));
  ASSERT_EQ(tp.code, 0) << tp.err;
  auto tj = nlohmann::json::parse(slurp(root_ / "o_exp/tp_report.json"));
  EXPECT_EQ(tj["x_bar"], 1.0);
  EXPECT_EQ(tj["n"], 24);
  std::vector<std::string> tn_args = {"tn-exp", ds_->manifest.string(), "--seed", "3", "--templates"};
  std::string list;
  for (auto& t : ds_->templates) list += (list.empty() ? "" : ",") + t.string();
  tn_args.push_back(list);
  Result tn = run(base(tn_args, "o_exp"));
  ASSERT_EQ(tn.code, 0) << tn.err;
  auto nj = nlohmann::json::parse(slurp(root_ / "o_exp/tn_report.json"));
  EXPECT_EQ(nj["x_bar"], 1.0);
  EXPECT_EQ(nj["n"], 72);
  EXPECT_EQ(nj["per_template"].size(), 3u);
}

TEST_F(CliTest, ReplaysAndNotes) {
  fs::path f = root_ / "rates.json";
  std::ofstream(f) << R"({"rates":{"sensitivity":0.814,"specificity":0.777},"reported":{"y_index":61}})";
  Result r = run({"eval-classify", "--replay", f.string(), "--out", (root_ / "o_replay").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["rounding_checks"][0]["consistent"], false);
  EXPECT_FALSE(j["rounding_checks"][0]["note"].is_null());
  std::ofstream(root_ / "broken.json") << "{nope";
  EXPECT_EQ(run({"eval-classify", "--replay", (root_ / "broken.json").string(), "--out", (root_ / "o_replay").string()}).code,
            1);
}
