#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "support/synthetic.hpp"
#include "trailcam/drift.hpp"

using namespace trailcam;
namespace fs = std::filesystem;

namespace {

BackgroundState state_of(const TrailImage& img, const std::string& date, const std::string& site = "1") {
  BackgroundState s;
  s.site_id = site;
  s.date = date;
  s.mean = MeanImage(img.width, img.height);
  s.mean.accumulate(img);
  return s;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("trailcam_drift_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DriftConfig small_windows() {
  DriftConfig c;
  c.window = 40;
  c.stride = 20;
  return c;
}

}  // namespace

TEST(Drift, IdenticalStateMatches) {
  TrailImage bg = synth::drift_background(120, 1);
  std::vector<BackgroundState> states = {state_of(bg, "2021-06-01")};
  DriftDecision d = check_drift("1", "2021-06-05", state_of(bg, "2021-06-05").mean, states, small_windows());
  EXPECT_FALSE(d.retrain);
  EXPECT_EQ(d.min_rti, 0.0);
  EXPECT_EQ(d.matched_state_date, "2021-06-01");
}

TEST(Drift, IlluminationShiftDoesNotTrigger) {
  TrailImage bg = synth::drift_background(120, 2);
  std::vector<BackgroundState> states = {state_of(bg, "2021-06-01")};
  DriftDecision d = check_drift("1", "2021-06-02", state_of(synth::shifted(bg, 1.0f / 16), "2021-06-02").mean, states,
                                small_windows());
  EXPECT_EQ(d.min_rti, 0.0);
  EXPECT_FALSE(d.retrain);
}

TEST(Drift, DisplacedObjectTriggersOnlyWhenEveryStateDiffers) {
  TrailImage before = synth::drift_background(120, 3), after = before, other = before;
  synth::paint_object(before, 5, 5, 30, 5);
  synth::paint_object(after, 85, 85, 30, 5);
  synth::paint_object(other, 85, 5, 30, 5);
  DriftConfig cfg = small_windows();
  MeanImage today = state_of(after, "2021-06-09").mean;

  std::vector<BackgroundState> far = {state_of(before, "2021-06-01"), state_of(other, "2021-06-02")};
  StructureMatrix m = structure_matrix(today, far[0].mean, cfg.window, cfg.stride);
  int low = 0;
  for (double v : m.values) low += v <= 0.6;
  ASSERT_GE(low, 2);
  DriftDecision d = check_drift("1", "2021-06-09", today, far, cfg);
  EXPECT_TRUE(d.retrain);
  EXPECT_FALSE(d.matched_state_date.has_value());
  EXPECT_GT(d.min_rti, 0.1);
  ASSERT_EQ(d.rtis.size(), 2u);

  far.push_back(state_of(after, "2021-06-03"));
  DriftDecision ok = check_drift("1", "2021-06-09", today, far, cfg);
  EXPECT_FALSE(ok.retrain);
  EXPECT_EQ(ok.matched_state_date, "2021-06-03");
}

TEST(Drift, TieGoesToEarliestDate) {
  TrailImage bg = synth::drift_background(80, 4);
  std::vector<BackgroundState> states = {state_of(bg, "2021-06-04"), state_of(bg, "2021-06-02")};
  DriftDecision d = check_drift("1", "2021-06-09", states[0].mean, states, small_windows());
  EXPECT_EQ(d.matched_state_date, "2021-06-02");
}

TEST(Drift, ThresholdIsInclusive) {
  TrailImage a = synth::drift_background(80, 5), b = a;
  synth::paint_object(b, 0, 0, 30, 5);
  DriftConfig cfg = small_windows();
  std::vector<BackgroundState> states = {state_of(a, "2021-06-01")};
  const double v = rti_between(state_of(b, "x").mean, states[0].mean, cfg);
  cfg.threshold = v;
  EXPECT_TRUE(check_drift("1", "2021-06-02", state_of(b, "2021-06-02").mean, states, cfg).retrain);
  cfg.threshold = std::nextafter(v, 1.0);
  EXPECT_FALSE(check_drift("1", "2021-06-02", state_of(b, "2021-06-02").mean, states, cfg).retrain);
}

TEST(Drift, UnprimedAndForeignStatesAreErrors) {
  TrailImage bg = synth::drift_background(80, 6);
  std::vector<BackgroundState> none;
  EXPECT_THROW(check_drift("1", "2021-06-01", state_of(bg, "2021-06-01").mean, none), ValidationError);
  std::vector<BackgroundState> foreign = {state_of(bg, "2021-06-01", "2")};
  EXPECT_THROW(check_drift("1", "2021-06-01", foreign[0].mean, foreign, small_windows()), ValidationError);
}

TEST(Drift, DecisionJson) {
  DriftDecision d;
  d.site_id = "7";
  d.date = "2021-06-01";
  d.rtis = {{"2021-05-01", 0.25}};
  d.retrain = true;
  auto j = to_json(d);
  EXPECT_EQ(j["site_id"], "7");
  EXPECT_TRUE(j["matched_state_date"].is_null());
  EXPECT_EQ(j["rtis"][0]["rti"], 0.25);
}

TEST(DailyMean, SkipsNightAndChecksSiteAndDate) {
  const UtcOffset tz = UtcOffset::parse("+02:00");
  SiteGeometry g{{20, 20}, 40, tz};
  const std::int64_t noon = local_midnight("2021-06-01", tz) + 12 * 3600;
  TrailImage day = synth::day_rgb(synth::random_gray(60, 50, 1, 40, 200));
  day.site_id = "1";
  day.timestamp = noon;
  TrailImage night = TrailImage::filled(60, 50, 1, 0.3f);
  night.site_id = "1";
  night.timestamp = noon + 60;
  std::vector<TrailImage> frames = {day, night, day};
  BackgroundState s = build_daily_mean("1", "2021-06-01", frames, g);
  EXPECT_EQ(s.source_count(), 2u);
  EXPECT_EQ(s.mean.width(), 40);
  auto gray = to_grayscale(crop_window(day, {20, 20}, 40));
  auto mean = s.mean.mean();
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(mean[i], gray.pixels[i], 1e-7);

  EXPECT_THROW(build_daily_mean("1", "2021-06-02", frames, g), ValidationError);
  EXPECT_THROW(build_daily_mean("2", "2021-06-01", frames, g), ValidationError);
  std::vector<TrailImage> nights = {night};
  EXPECT_THROW(build_daily_mean("1", "2021-06-01", nights, g), ValidationError);
}

TEST(StateStore, RoundTripAndOrdering) {
  StateStore store(scratch("store"));
  TrailImage a = synth::drift_background(30, 7), b = synth::drift_background(30, 8);
  store.register_state(state_of(b, "2021-06-03"));
  store.register_state(state_of(a, "2021-06-01"));
  EXPECT_TRUE(store.contains("1", "2021-06-01"));
  EXPECT_FALSE(store.contains("1", "2021-06-02"));
  auto states = store.states("1");
  ASSERT_EQ(states.size(), 2u);
  EXPECT_EQ(states[0].date, "2021-06-01");
  EXPECT_EQ(states[1].source_count(), 1u);
  auto m = states[0].mean.mean();
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], a.pixels[i], 1e-7);
  EXPECT_THROW(store.register_state(state_of(a, "2021-06-01")), ValidationError);
  EXPECT_TRUE(store.states("9").empty());
  EXPECT_THROW(store.states("../x"), ValidationError);
}

TEST(Subset, EvenSplitAcrossLabels) {
  std::vector<SubsetCandidate> c;
  for (int i = 0; i < 5; ++i) c.push_back({"A" + std::to_string(i), 1622505600 + i * 60, Label::animal});
  for (int i = 0; i < 3; ++i) c.push_back({"N" + std::to_string(i), 1622505600 + 900 + i * 400, Label::no_animal});
  SubsetConfig cfg;
  cfg.quota = 4;
  auto ids = select_retraining_subset(c, cfg);
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(std::count_if(ids.begin(), ids.end(), [](auto& s) { return s[0] == 'A'; }), 2);
}

TEST(Subset, ShortfallMovesToOtherLabel) {
  std::vector<SubsetCandidate> c = {{"A0", 1622505600, Label::animal}};
  for (int i = 0; i < 10; ++i) c.push_back({"N" + std::to_string(i), 1622505600 + i * 200, Label::no_animal});
  SubsetConfig cfg;
  cfg.quota = 6;
  auto ids = select_retraining_subset(c, cfg);
  ASSERT_EQ(ids.size(), 6u);
  EXPECT_EQ(ids[0], "A0");
}

TEST(Subset, UnlabelledIsStratifiedAndDefaultQuotaCaps) {
  std::vector<SubsetCandidate> c;
  for (int i = 0; i < 300; ++i) c.push_back({"u" + std::to_string(i), 1622505600 + i * 30, std::nullopt});
  SubsetConfig cfg;
  auto ids = select_retraining_subset(c, cfg);
  EXPECT_EQ(ids.size(), 200u);
  EXPECT_EQ(select_retraining_subset(c, cfg), ids);
  // 300 images over 150 minutes in 3-minute bins: every bin contributes
  std::set<int> bins;
  for (auto& id : ids) bins.insert(std::stoi(id.substr(1)) * 30 / 180);
  EXPECT_EQ(bins.size(), 50u);
}

TEST(Heatmap, DiagonalZeroAndSymmetric) {
  std::vector<BackgroundState> means;
  for (int d = 0; d < 4; ++d) {
    TrailImage img = synth::drift_background(80, 40 + d);
    synth::paint_object(img, 10 * d, 10, 20, 5);
    means.push_back(state_of(img, "2021-06-0" + std::to_string(d + 1)));
  }
  RtiHeatmap h = rti_heatmap(means, small_windows());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(h.at(i, i), 0.0);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(h.at(i, j), h.at(j, i));
  }
  std::ostringstream out;
  write_rti_csv(out, h);
  EXPECT_EQ(out.str().substr(0, 48), "date,2021-06-01,2021-06-02,2021-06-03,2021-06-04");
}
