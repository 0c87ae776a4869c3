#pragma once

// Statistical explainability experiments.
//
// TP experiment: every true-positive frame is paired with its "twin", the
// same-site NoAnimal frame of minimum DISI (time gap in minutes plus
// 1 - SSIM). The classifier should call the twin NoAnimal.
//
// TN experiment: every true-negative frame is disturbed once per animal
// template, pasted at a location drawn from the site's animal-visit
// distribution. The classifier should now call the frame Animal.
//
// Both experiments code outcomes 0/1 and run a one-sided t-test against mu0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trailcam/csv.hpp"
#include "trailcam/dataset.hpp"
#include "trailcam/error.hpp"
#include "trailcam/gateway.hpp"
#include "trailcam/image.hpp"
#include "trailcam/parallel.hpp"
#include "trailcam/similarity.hpp"
#include "trailcam/stats.hpp"

namespace trailcam {

using stats::ExperimentStats;

// ---------------------------------------------------------------------------
// DISI and twin search

enum class SimilarityKind { full, structure };

struct DisiConfig {
  SimilarityParams params;
  SimilarityKind similarity = SimilarityKind::full;
};

struct DisiRecord {
  std::string tp_image_id;
  std::string candidate_id;
  double time_term = 0.0;    // minutes
  double dissim_term = 0.0;  // 1 - SIM
  double disi = 0.0;
};

inline DisiRecord disi(const TrailImage& tp, const TrailImage& cand, const DisiConfig& cfg = {}) {
  if (!tp.site_id.empty() && !cand.site_id.empty() && tp.site_id != cand.site_id)
    throw ValidationError("disi: '" + tp.id + "' and '" + cand.id + "' come from different sites");
  if (tp.width != cand.width || tp.height != cand.height)
    throw ValidationError("disi: '" + tp.id + "' and '" + cand.id + "' differ in size");
  DisiRecord r;
  r.tp_image_id = tp.id;
  r.candidate_id = cand.id;
  r.time_term = std::abs(static_cast<double>(tp.timestamp - cand.timestamp)) / 60.0;
  const double sim = cfg.similarity == SimilarityKind::full ? ssim_full(tp, cand, cfg.params)
                                                            : ssim_structure(tp, cand, cfg.params);
  r.dissim_term = 1.0 - sim;
  r.disi = r.time_term + r.dissim_term;
  return r;
}

// Minimum DISI; ties go to the earlier timestamp, then the smaller id.
inline std::pair<DisiRecord, const TrailImage*> find_twin(const TrailImage& tp, std::span<const TrailImage* const> candidates,
                                                          const DisiConfig& cfg = {}) {
  if (candidates.empty()) throw ValidationError("find_twin: no NoAnimal candidates for '" + tp.id + "'");
  std::optional<DisiRecord> best;
  const TrailImage* best_img = nullptr;
  for (const TrailImage* c : candidates) {
    DisiRecord r = disi(tp, *c, cfg);
    const bool better = !best || r.disi < best->disi ||
                        (r.disi == best->disi && (c->timestamp < best_img->timestamp ||
                                                  (c->timestamp == best_img->timestamp && c->id < best_img->id)));
    if (better) {
      best = r;
      best_img = c;
    }
  }
  return {*best, best_img};
}

inline DisiRecord find_twin(const TrailImage& tp, std::span<const TrailImage> candidates, const DisiConfig& cfg = {}) {
  std::vector<const TrailImage*> ptrs;
  for (const auto& c : candidates) ptrs.push_back(&c);
  return find_twin(tp, std::span<const TrailImage* const>(ptrs), cfg).first;
}

// ---------------------------------------------------------------------------
// Animal visiting locations

struct LocationDistribution {
  std::string site_id;
  std::vector<Point> points;
  double jitter_radius = 25.0;
  int frame_width = 0;
  int frame_height = 0;
};

inline LocationDistribution location_distribution(const std::string& site_id, std::vector<Point> points, int frame_width,
                                                  int frame_height, double jitter_radius = 25.0) {
  if (points.empty()) throw ValidationError("location distribution for site '" + site_id + "' is empty");
  if (jitter_radius < 0.0) throw ValidationError("jitter radius must be >= 0");
  for (const auto& p : points)
    if (p.x < 0 || p.y < 0 || p.x >= frame_width || p.y >= frame_height)
      throw ValidationError("visiting location outside the frame");
  return {site_id, std::move(points), jitter_radius, frame_width, frame_height};
}

// Box centres expressed in the coordinates of `window`; centres outside it
// are dropped.
inline LocationDistribution location_distribution(std::span<const AnnotationRecord> records, const CropWindow& window,
                                                  double jitter_radius = 25.0) {
  std::vector<Point> pts;
  std::string site;
  for (const auto& r : records) {
    if (site.empty()) site = r.site_id;
    for (const auto& b : r.boxes) {
      Point c = b.center();
      Point local{c.x - window.origin_x, c.y - window.origin_y};
      if (local.x >= 0 && local.y >= 0 && local.x < window.size && local.y < window.size) pts.push_back(local);
    }
  }
  return location_distribution(site, std::move(pts), window.size, window.size, jitter_radius);
}

// A stored centre drawn uniformly plus uniform jitter per axis, clamped.
inline Point sample_location(const LocationDistribution& dist, std::mt19937_64& rng) {
  if (dist.points.empty()) throw ValidationError("cannot sample an empty location distribution");
  std::uniform_int_distribution<std::size_t> pick(0, dist.points.size() - 1);
  Point p = dist.points[pick(rng)];
  if (dist.jitter_radius > 0.0) {
    std::uniform_real_distribution<double> jitter(-dist.jitter_radius, dist.jitter_radius);
    p.x += jitter(rng);
    p.y += jitter(rng);
  }
  p.x = std::clamp(p.x, 0.0, static_cast<double>(dist.frame_width - 1));
  p.y = std::clamp(p.y, 0.0, static_cast<double>(dist.frame_height - 1));
  return p;
}

// ---------------------------------------------------------------------------
// Template insertion

// Rectangular paste centred at `center`, clipped at the frame border. An
// optional per-pixel mask in [0,1] alpha-blends the template.
inline TrailImage insert_template(const TrailImage& frame, const TrailImage& tmpl, Point center,
                                  std::span<const float> mask = {}) {
  if (tmpl.width > frame.width || tmpl.height > frame.height)
    throw ValidationError("template '" + tmpl.id + "' is larger than frame '" + frame.id + "'");
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(tmpl.width) * tmpl.height)
    throw ValidationError("template mask does not match template size");
  TrailImage patch = tmpl;
  if (frame.channels == 1 && patch.channels == 3) patch = to_grayscale(patch);
  if (frame.channels == 3 && patch.channels == 1) {
    TrailImage color = patch.reshaped(patch.width, patch.height, 3);
    for (int y = 0; y < patch.height; ++y)
      for (int x = 0; x < patch.width; ++x)
        for (int c = 0; c < 3; ++c) color.at(x, y, c) = patch.at(x, y);
    patch = std::move(color);
  }
  TrailImage out = frame;
  const int left = static_cast<int>(std::lround(center.x)) - patch.width / 2;
  const int top = static_cast<int>(std::lround(center.y)) - patch.height / 2;
  for (int ty = 0; ty < patch.height; ++ty) {
    const int y = top + ty;
    if (y < 0 || y >= frame.height) continue;
    for (int tx = 0; tx < patch.width; ++tx) {
      const int x = left + tx;
      if (x < 0 || x >= frame.width) continue;
      const float alpha = mask.empty() ? 1.0f : std::clamp(mask[static_cast<std::size_t>(ty) * patch.width + tx], 0.0f, 1.0f);
      for (int c = 0; c < frame.channels; ++c) {
        const float v = alpha == 1.0f ? patch.at(tx, ty, c) : alpha * patch.at(tx, ty, c) + (1.0f - alpha) * out.at(x, y, c);
        out.at(x, y, c) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

using ImagePredictor = std::function<Prediction(const TrailImage&)>;

struct SkippedItem {
  std::string image_id;
  std::string reason;
};

struct SiteTally {
  std::string site_id;
  std::int64_t n = 0;
  std::int64_t successes = 0;
};

struct TwinResult {
  DisiRecord record;
  Prediction prediction;
  bool success = false;
};

struct TpConfig {
  double mu0 = 0.95;
  DisiConfig disi;
  unsigned jobs = 1;  // twin searches only; the predictor is called serially
};

struct TpReport {
  ExperimentStats stats;
  std::vector<SiteTally> per_site;
  std::vector<TwinResult> twins;
  std::vector<SkippedItem> skipped;
};

inline ExperimentStats tally_stats(std::span<const SiteTally> tallies, double mu0) {
  std::int64_t n = 0, k = 0;
  for (const auto& t : tallies) {
    if (t.n < 0 || t.successes < 0 || t.successes > t.n) throw ValidationError("invalid tally for site '" + t.site_id + "'");
    n += t.n;
    k += t.successes;
  }
  return stats::one_sided_t_test(n, k, mu0);
}

// Success means the twin was labelled NoAnimal. Sites are reported in order
// of first appearance among the TP frames.
inline TpReport tp_experiment(std::span<const TrailImage> tp_images, std::span<const TrailImage> no_animal_pool,
                              const ImagePredictor& predictor, const TpConfig& cfg = {}) {
  TpReport report;
  std::map<std::string, std::vector<const TrailImage*>> pool_by_site;
  for (const auto& img : no_animal_pool) pool_by_site[img.site_id].push_back(&img);

  std::vector<std::optional<DisiRecord>> twins(tp_images.size());
  std::vector<const TrailImage*> twin_images(tp_images.size(), nullptr);
  parallel_for(tp_images.size(), cfg.jobs, [&](std::size_t i) {
    const TrailImage& tp = tp_images[i];
    auto it = pool_by_site.find(tp.site_id);
    if (it == pool_by_site.end()) return;
    auto [record, image] = find_twin(tp, std::span<const TrailImage* const>(it->second), cfg.disi);
    twins[i] = record;
    twin_images[i] = image;
  });

  std::map<std::string, std::size_t> site_index;
  for (std::size_t i = 0; i < tp_images.size(); ++i) {
    const TrailImage& tp = tp_images[i];
    if (!twins[i]) {
      report.skipped.push_back({tp.id, "no NoAnimal candidates at site '" + tp.site_id + "'"});
      continue;
    }
    TwinResult tr;
    tr.record = *twins[i];
    tr.prediction = predictor(*twin_images[i]);
    tr.success = tr.prediction.label == Label::no_animal;
    auto [pos, inserted] = site_index.emplace(tp.site_id, report.per_site.size());
    if (inserted) report.per_site.push_back({tp.site_id, 0, 0});
    SiteTally& t = report.per_site[pos->second];
    ++t.n;
    t.successes += tr.success ? 1 : 0;
    report.twins.push_back(std::move(tr));
  }
  report.stats = tally_stats(report.per_site, cfg.mu0);
  return report;
}

inline TpReport tp_replay(std::vector<SiteTally> per_site, double mu0) {
  TpReport report;
  report.per_site = std::move(per_site);
  report.stats = tally_stats(report.per_site, mu0);
  return report;
}

// How per-template outcomes fold into one sample: every trial counted
// (pooled), or one sample per TN image holding the mean success count over
// templates (template_mean).
enum class TnAggregation { pooled, template_mean };

inline const char* to_string(TnAggregation a) { return a == TnAggregation::pooled ? "pooled" : "template_mean"; }

struct TnConfig {
  double mu0 = 0.95;
  std::size_t template_count = 3;
  std::uint64_t seed = 0;
  TnAggregation aggregation = TnAggregation::pooled;
};

struct TemplateTally {
  std::int64_t n = 0;
  std::int64_t successes = 0;
};

struct TnSiteTally {
  std::string site_id;
  std::vector<TemplateTally> per_template;
};

struct TrialResult {
  std::string tn_image_id;
  std::size_t template_index = 0;
  Point location;
  Prediction prediction;
  bool success = false;
};

struct TnReport {
  ExperimentStats stats;
  TnAggregation aggregation = TnAggregation::pooled;
  std::vector<TemplateTally> per_template;
  std::vector<TnSiteTally> per_site;
  std::vector<TrialResult> trials;
  std::vector<SkippedItem> skipped;
};

inline ExperimentStats aggregate_tn(std::span<const TemplateTally> per_template, TnAggregation aggregation, double mu0) {
  if (per_template.empty()) throw ValidationError("TN experiment without templates");
  std::int64_t n = 0, k = 0;
  for (const auto& t : per_template) {
    n += t.n;
    k += t.successes;
  }
  if (aggregation == TnAggregation::template_mean) {
    const double m = static_cast<double>(per_template.size());
    n = std::llround(static_cast<double>(n) / m);
    k = std::llround(static_cast<double>(k) / m);
  }
  return stats::one_sided_t_test(n, k, mu0);
}

inline void finish_tn(TnReport& report, double mu0) {
  const std::size_t templates = report.per_site.empty() ? 0 : report.per_site.front().per_template.size();
  report.per_template.assign(templates, {});
  for (const auto& s : report.per_site)
    for (std::size_t t = 0; t < templates; ++t) {
      report.per_template[t].n += s.per_template[t].n;
      report.per_template[t].successes += s.per_template[t].successes;
    }
  report.stats = aggregate_tn(report.per_template, report.aggregation, mu0);
}

// Success means the disturbed frame was labelled Animal. Disturbed frames are
// passed to the predictor under disturbed_id(tn.id, template).
inline TnReport tn_experiment(std::span<const TrailImage> tn_images, std::span<const TrailImage> templates,
                              const std::map<std::string, LocationDistribution>& distributions,
                              const ImagePredictor& predictor, const TnConfig& cfg = {}) {
  if (templates.size() != cfg.template_count)
    throw ValidationError("TN experiment expects " + std::to_string(cfg.template_count) + " templates, got " +
                          std::to_string(templates.size()));
  TnReport report;
  report.aggregation = cfg.aggregation;
  std::mt19937_64 rng(cfg.seed);
  std::map<std::string, std::size_t> site_index;
  for (const auto& tn : tn_images) {
    auto dist = distributions.find(tn.site_id);
    if (dist == distributions.end()) {
      report.skipped.push_back({tn.id, "no location distribution for site '" + tn.site_id + "'"});
      continue;
    }
    auto [pos, inserted] = site_index.emplace(tn.site_id, report.per_site.size());
    if (inserted) report.per_site.push_back({tn.site_id, std::vector<TemplateTally>(templates.size())});
    for (std::size_t t = 0; t < templates.size(); ++t) {
      const Point where = sample_location(dist->second, rng);
      TrailImage disturbed;
      try {
        disturbed = insert_template(tn, templates[t], where);
      } catch (const ValidationError& e) {
        report.skipped.push_back({disturbed_id(tn.id, t), e.what()});
        continue;
      }
      disturbed.id = disturbed_id(tn.id, t);
      TrialResult trial;
      trial.tn_image_id = tn.id;
      trial.template_index = t;
      trial.location = where;
      trial.prediction = predictor(disturbed);
      trial.success = trial.prediction.label == Label::animal;
      TemplateTally& tally = report.per_site[pos->second].per_template[t];
      ++tally.n;
      tally.successes += trial.success ? 1 : 0;
      report.trials.push_back(std::move(trial));
    }
  }
  finish_tn(report, cfg.mu0);
  return report;
}

inline TnReport tn_replay(std::vector<TnSiteTally> per_site, TnAggregation aggregation, double mu0) {
  TnReport report;
  report.aggregation = aggregation;
  report.per_site = std::move(per_site);
  for (const auto& s : report.per_site)
    if (s.per_template.size() != report.per_site.front().per_template.size())
      throw ValidationError("replay sites disagree on the template count");
  finish_tn(report, mu0);
  return report;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::ordered_json stats_json(const ExperimentStats& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["successes"] = s.successes;
  j["x_bar"] = s.x_bar;
  j["t"] = std::isfinite(s.t_stat) ? nlohmann::ordered_json(s.t_stat) : nlohmann::ordered_json(nullptr);
  j["p_value"] = s.p_value;
  j["upper_bound"] = s.upper_bound;
  j["degenerate"] = s.degenerate;
  j["variance_check"] = {{"variance", s.variance_check.variance}, {"ok", s.variance_check.ok}};
  return j;
}

inline double rate(std::int64_t k, std::int64_t n) { return n > 0 ? static_cast<double>(k) / static_cast<double>(n) : 0.0; }

inline nlohmann::ordered_json to_json(const TpReport& r) {
  nlohmann::ordered_json j;
  j["experiment"] = "tp";
  j["mu0"] = r.stats.mu0;
  j.update(stats_json(r.stats));
  j["per_site"] = nlohmann::ordered_json::array();
  for (const auto& s : r.per_site)
    j["per_site"].push_back({{"site_id", s.site_id}, {"n", s.n}, {"successes", s.successes}, {"rate", rate(s.successes, s.n)}});
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& s : r.skipped) j["skipped"].push_back({{"image_id", s.image_id}, {"reason", s.reason}});
  return j;
}

inline nlohmann::ordered_json to_json(const TnReport& r) {
  nlohmann::ordered_json j;
  j["experiment"] = "tn";
  j["mu0"] = r.stats.mu0;
  j["aggregation"] = to_string(r.aggregation);
  j.update(stats_json(r.stats));
  j["per_template"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < r.per_template.size(); ++t) {
    const auto& p = r.per_template[t];
    j["per_template"].push_back(
        {{"template", t + 1}, {"n", p.n}, {"successes", p.successes}, {"rate", rate(p.successes, p.n)}});
  }
  j["per_site"] = nlohmann::ordered_json::array();
  for (const auto& s : r.per_site) {
    nlohmann::ordered_json site;
    site["site_id"] = s.site_id;
    site["per_template"] = nlohmann::ordered_json::array();
    for (const auto& p : s.per_template)
      site["per_template"].push_back({{"n", p.n}, {"successes", p.successes}, {"rate", rate(p.successes, p.n)}});
    j["per_site"].push_back(site);
  }
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& s : r.skipped) j["skipped"].push_back({{"image_id", s.image_id}, {"reason", s.reason}});
  return j;
}

inline void write_twins_csv(std::ostream& out, std::span<const TwinResult> twins) {
  csv::write_row(out, {"tp_image_id", "twin_id", "disi", "time_term", "dissim_term"});
  for (const auto& t : twins)
    csv::write_row(out, {t.record.tp_image_id, t.record.candidate_id, csv::format_number(t.record.disi),
                         csv::format_number(t.record.time_term), csv::format_number(t.record.dissim_term)});
}

// Replay files hold reported per-site counts:
//   {"experiment":"tp","per_site":[{"site_id":..,"n":..,"successes":..}]}
//   {"experiment":"tn","aggregation":"template_mean",
//    "per_site":[{"site_id":..,"n":..,"successes":[..per template..]}]}
inline TpReport tp_replay_from_json(const nlohmann::json& j, double mu0) {
  try {
    if (j.at("experiment").get<std::string>() != "tp") throw ValidationError("replay file is not a TP experiment");
    std::vector<SiteTally> sites;
    for (const auto& s : j.at("per_site"))
      sites.push_back({s.at("site_id").get<std::string>(), s.at("n").get<std::int64_t>(), s.at("successes").get<std::int64_t>()});
    return tp_replay(std::move(sites), mu0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed TP replay file: ") + e.what());
  }
}

inline TnReport tn_replay_from_json(const nlohmann::json& j, double mu0) {
  try {
    if (j.at("experiment").get<std::string>() != "tn") throw ValidationError("replay file is not a TN experiment");
    const std::string agg = j.value("aggregation", std::string("pooled"));
    TnAggregation aggregation;
    if (agg == "pooled")
      aggregation = TnAggregation::pooled;
    else if (agg == "template_mean")
      aggregation = TnAggregation::template_mean;
    else
      throw ValidationError("unknown TN aggregation '" + agg + "'");
    std::vector<TnSiteTally> sites;
    for (const auto& s : j.at("per_site")) {
      TnSiteTally site;
      site.site_id = s.at("site_id").get<std::string>();
      const auto n = s.at("n").get<std::int64_t>();
      for (const auto& k : s.at("successes")) site.per_template.push_back({n, k.get<std::int64_t>()});
      sites.push_back(std::move(site));
    }
    return tn_replay(std::move(sites), aggregation, mu0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed TN replay file: ") + e.what());
  }
}

}  // namespace trailcam
