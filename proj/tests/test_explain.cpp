#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support/synthetic.hpp"
#include "trailcam/explain.hpp"

using namespace trailcam;

namespace {

TrailImage frame(const std::string& id, std::int64_t ts, std::uint64_t seed, const std::string& site = "1") {
  TrailImage img = synth::random_gray(24, 24, seed, 60, 200);
  img.id = id;
  img.timestamp = ts;
  img.site_id = site;
  return img;
}

Prediction by_label(Label l) { return make_prediction(l == Label::animal ? 1.0 : 0.0, l == Label::animal ? 0.0 : 1.0, "t"); }

std::vector<SiteTally> reported_tp() { return {{"1", 346, 333}, {"2", 342, 322}, {"3", 502, 478}}; }

std::vector<TnSiteTally> reported_tn() {
  return {{"1", {{541, 541}, {541, 540}, {541, 541}}},
          {"2", {{540, 533}, {540, 530}, {540, 532}}},
          {"3", {{621, 619}, {621, 615}, {621, 619}}}};
}

}  // namespace

TEST(Disi, TimePlusDissimilarity) {
  TrailImage tp = frame("tp", 1000, 1), c = tp;
  c.id = "c";
  c.timestamp = 1120;
  DisiRecord r = disi(tp, c);
  EXPECT_DOUBLE_EQ(r.time_term, 2.0);
  EXPECT_NEAR(r.dissim_term, 0.0, 1e-12);
  EXPECT_NEAR(r.disi, 2.0, 1e-12);

  TrailImage other = frame("o", 880, 2);
  DisiRecord s = disi(tp, other);
  EXPECT_DOUBLE_EQ(s.time_term, 2.0);
  EXPECT_NEAR(s.dissim_term, 1.0 - ssim_full(tp, other), 1e-15);
  EXPECT_DOUBLE_EQ(s.disi, s.time_term + s.dissim_term);

  DisiConfig structure_only;
  structure_only.similarity = SimilarityKind::structure;
  EXPECT_NEAR(disi(tp, other, structure_only).dissim_term, 1.0 - ssim_structure(tp, other), 1e-15);
}

TEST(Disi, RejectsOtherSitesAndSizes) {
  TrailImage a = frame("a", 1, 1, "1"), b = frame("b", 1, 2, "2");
  EXPECT_THROW(disi(a, b), ValidationError);
  TrailImage small = TrailImage::filled(10, 10, 1, 0.5f);
  EXPECT_THROW(disi(a, small), ValidationError);
}

TEST(Twin, MinimumWithEarliestTieBreak) {
  TrailImage tp = frame("tp", 6000, 1);
  TrailImage before = tp, after = tp, far = tp;
  before.id = "z_before";
  before.timestamp = 5940;
  after.id = "a_after";
  after.timestamp = 6060;
  far.id = "far";
  far.timestamp = 9000;
  std::vector<TrailImage> pool = {after, far, before};
  DisiRecord r = find_twin(tp, pool);
  EXPECT_EQ(r.candidate_id, "z_before");
  std::vector<TrailImage> none;
  EXPECT_THROW(find_twin(tp, none), ValidationError);
}

TEST(Twin, InvariantUnderPermutation) {
  TrailImage tp = frame("tp", 50000, 1);
  std::vector<TrailImage> pool;
  for (int i = 0; i < 30; ++i) pool.push_back(frame("c" + std::to_string(i), 50000 + (i % 7 - 3) * 60, 10 + i % 5));
  const std::string expect = find_twin(tp, pool).candidate_id;
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(pool.begin(), pool.end(), rng);
    EXPECT_EQ(find_twin(tp, pool).candidate_id, expect);
  }
}

TEST(Location, FollowsEmpiricalFrequencies) {
  std::vector<Point> pts(9, Point{10, 10});
  pts.push_back({90, 90});
  auto dist = location_distribution("1", pts, 100, 100, 0.0);
  std::mt19937_64 rng(5);
  int first = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) first += sample_location(dist, rng).x == 10;
  EXPECT_NEAR(first / static_cast<double>(n), 0.9, 0.02);
}

TEST(Location, JitterStaysBoundedAndInFrame) {
  auto dist = location_distribution("1", {{50, 50}, {2, 97}}, 100, 100, 25.0);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 5000; ++i) {
    Point p = sample_location(dist, rng);
    EXPECT_GE(p.x, 0);
    EXPECT_LE(p.x, 99);
    EXPECT_GE(p.y, 0);
    EXPECT_LE(p.y, 99);
    const bool near_a = std::abs(p.x - 50) <= 25 && std::abs(p.y - 50) <= 25;
    const bool near_b = std::abs(p.x - 2) <= 25 && std::abs(p.y - 97) <= 25;
    EXPECT_TRUE(near_a || near_b);
  }
}

TEST(Location, FromRecordsInWindowCoordinates) {
  AnnotationRecord r;
  r.site_id = "4";
  r.boxes = {{110, 210, 20, 20, ""}, {5, 5, 2, 2, ""}};
  std::vector<AnnotationRecord> rs = {r};
  auto dist = location_distribution(rs, CropWindow{100, 200, 50});
  EXPECT_EQ(dist.site_id, "4");
  ASSERT_EQ(dist.points.size(), 1u);
  EXPECT_EQ(dist.points[0].x, 20);
  EXPECT_EQ(dist.points[0].y, 20);
  EXPECT_THROW(location_distribution("1", {}, 10, 10), ValidationError);
  EXPECT_THROW(location_distribution("1", {{10, 3}}, 10, 10), ValidationError);
}

TEST(Insert, PastesCentredAndClips) {
  TrailImage f = TrailImage::filled(10, 10, 1, 0.0f);
  TrailImage t = TrailImage::filled(3, 3, 1, 1.0f);
  TrailImage out = insert_template(f, t, {5, 5});
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) EXPECT_EQ(out.at(x, y), (x >= 4 && x <= 6 && y >= 4 && y <= 6) ? 1.0f : 0.0f);
  TrailImage corner = insert_template(f, t, {0, 0});
  float sum = 0;
  for (float v : corner.pixels) sum += v;
  EXPECT_EQ(sum, 4.0f);
  EXPECT_THROW(insert_template(t, f, {1, 1}), ValidationError);
}

TEST(Insert, MaskBlendsAndChannelsConvert) {
  TrailImage f = TrailImage::filled(6, 6, 3, 0.2f);
  TrailImage t = TrailImage::filled(2, 2, 1, 0.6f);
  std::vector<float> mask = {1.0f, 0.5f, 0.0f, 1.0f};
  TrailImage out = insert_template(f, t, {3, 3}, mask);
  EXPECT_FLOAT_EQ(out.at(2, 2, 1), 0.6f);
  EXPECT_FLOAT_EQ(out.at(3, 2, 0), 0.4f);
  EXPECT_FLOAT_EQ(out.at(2, 3, 2), 0.2f);
  EXPECT_FLOAT_EQ(out.at(3, 3, 2), 0.6f);
  TrailImage color = synth::bird_template(4, 4, 1);
  TrailImage gray_frame = TrailImage::filled(8, 8, 1, 0.5f);
  EXPECT_FLOAT_EQ(insert_template(gray_frame, color, {4, 4}).at(2, 2), to_grayscale(color).at(0, 0));
}

TEST(TpExperiment, OracleTwinsAreAllNoAnimal) {
  std::vector<TrailImage> tps = {frame("t1", 1000, 1), frame("t2", 5000, 2), frame("t3", 1000, 3, "2")};
  std::vector<TrailImage> pool = {frame("n1", 1060, 4), frame("n2", 4900, 5), frame("n3", 1200, 6, "2")};
  ImagePredictor always_empty = [](const TrailImage&) { return by_label(Label::no_animal); };
  TpReport r = tp_experiment(tps, pool, always_empty);
  ASSERT_EQ(r.per_site.size(), 2u);
  EXPECT_EQ(r.per_site[0].n, 2);
  EXPECT_EQ(r.stats.x_bar, 1.0);
  EXPECT_EQ(r.twins[1].record.candidate_id, "n2");
  TpConfig parallel;
  parallel.jobs = 4;
  EXPECT_EQ(to_json(tp_experiment(tps, pool, always_empty, parallel)).dump(), to_json(r).dump());
}

TEST(TpExperiment, SitesWithoutCandidatesAreSkipped) {
  std::vector<TrailImage> tps = {frame("t1", 1000, 1), frame("t2", 1000, 2), frame("t3", 1000, 3, "9")};
  std::vector<TrailImage> pool = {frame("n1", 1060, 4)};
  TpReport r = tp_experiment(tps, pool, [](const TrailImage&) { return by_label(Label::animal); });
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].image_id, "t3");
  EXPECT_EQ(r.stats.successes, 0);
}

TEST(TnExperiment, SeededAndDisturbedIds) {
  std::vector<TrailImage> tns = {frame("n1", 1, 1), frame("n2", 2, 2)};
  std::vector<TrailImage> templates = {synth::bird_template(4, 4, 1), synth::bird_template(5, 3, 2),
                                       synth::bird_template(3, 3, 3)};
  std::map<std::string, LocationDistribution> dists = {{"1", location_distribution("1", {{12, 12}}, 24, 24, 5.0)}};
  std::vector<std::string> seen;
  ImagePredictor record = [&](const TrailImage& img) {
    seen.push_back(img.id);
    return by_label(Label::animal);
  };
  TnConfig cfg;
  cfg.seed = 3;
  TnReport a = tn_experiment(tns, templates, dists, record, cfg);
  EXPECT_EQ(seen.front(), "n1@insert1");
  EXPECT_EQ(seen.back(), "n2@insert3");
  EXPECT_EQ(a.stats.n, 6);
  EXPECT_EQ(a.stats.x_bar, 1.0);
  TnReport b = tn_experiment(tns, templates, dists, record, cfg);
  for (std::size_t i = 0; i < a.trials.size(); ++i) EXPECT_EQ(a.trials[i].location.x, b.trials[i].location.x);
  cfg.aggregation = TnAggregation::template_mean;
  EXPECT_EQ(tn_experiment(tns, templates, dists, record, cfg).stats.n, 2);
  std::vector<TrailImage> two(templates.begin(), templates.begin() + 2);
  EXPECT_THROW(tn_experiment(tns, two, dists, record, {}), ValidationError);
}

TEST(Replay, TruePositiveTable) {
  TpReport r = tp_replay(reported_tp(), 0.95);
  EXPECT_EQ(r.stats.n, 1190);
  EXPECT_EQ(r.stats.successes, 1133);
  EXPECT_NEAR(r.stats.p_value, 0.63, 0.01);
  EXPECT_NEAR(r.stats.upper_bound, 0.962, 0.001);
  auto j = to_json(r);
  EXPECT_EQ(j["per_site"].size(), 3u);
  auto back = tp_replay_from_json(nlohmann::json::parse(j.dump()), 0.95);
  EXPECT_EQ(back.stats.successes, 1133);
}

TEST(Replay, TrueNegativeTable) {
  TnReport mean = tn_replay(reported_tn(), TnAggregation::template_mean, 0.95);
  EXPECT_EQ(mean.stats.n, 1702);
  EXPECT_EQ(mean.stats.successes, 1690);
  EXPECT_GE(mean.stats.p_value, 0.999);
  EXPECT_NEAR(mean.stats.upper_bound, 0.996, 0.001);
  ASSERT_EQ(mean.per_template.size(), 3u);
  EXPECT_EQ(mean.per_template[0].successes, 1693);
  EXPECT_EQ(mean.per_template[1].successes, 1685);
  EXPECT_EQ(mean.per_template[2].successes, 1692);

  TnReport pooled = tn_replay(reported_tn(), TnAggregation::pooled, 0.95);
  EXPECT_EQ(pooled.stats.n, 5106);
  EXPECT_EQ(pooled.stats.successes, 5070);
  EXPECT_GE(pooled.stats.p_value, 0.999);
}

TEST(Replay, MalformedFilesAreValidationErrors) {
  EXPECT_THROW(tp_replay_from_json(nlohmann::json::parse(R"({"experiment":"tn"})"), 0.95), ValidationError);
  EXPECT_THROW(tp_replay_from_json(nlohmann::json::parse(R"({"experiment":"tp","per_site":[{"n":3}]})"), 0.95),
               ValidationError);
  EXPECT_THROW(
      tn_replay_from_json(nlohmann::json::parse(R"({"experiment":"tn","aggregation":"median","per_site":[]})"), 0.95),
      ValidationError);
}
