#pragma once

// Automatic retraining trigger. Each site keeps a set of background states
// (the mean of one day's cropped day-time frames). An incoming day's mean is
// compared against every state through the RTI; when no state is within the
// threshold the day triggers retraining, and a time-stratified subset of its
// frames is selected for the enlarged training set.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trailcam/clock.hpp"
#include "trailcam/csv.hpp"
#include "trailcam/dataset.hpp"
#include "trailcam/error.hpp"
#include "trailcam/image.hpp"
#include "trailcam/io.hpp"
#include "trailcam/similarity.hpp"

namespace trailcam {

struct BackgroundState {
  std::string site_id;
  std::string date;  // YYYY-MM-DD, site-local
  MeanImage mean;

  std::size_t source_count() const { return mean.count(); }
};

// Where a site's fountain window sits and how its clock maps to local days.
struct SiteGeometry {
  Point fountain_center{1632.0, 1224.0};
  int crop_size = 1500;
  UtcOffset tz;
};

struct DriftConfig {
  double threshold = 0.1;
  int window = 500;
  int stride = 250;
  SimilarityParams params;
  DayNightThresholds day_night;
};

// The frame's contribution to a daily mean: its fountain crop in luma, or
// nothing for a night frame. Rejects frames of another site or day.
inline std::optional<TrailImage> background_frame(const TrailImage& img, const std::string& site_id, const std::string& date,
                                                  const SiteGeometry& geometry, const DayNightThresholds& day_night = {}) {
  if (!img.site_id.empty() && img.site_id != site_id)
    throw ValidationError("image '" + img.id + "' belongs to site '" + img.site_id + "', not '" + site_id + "'");
  const std::string captured = local_date(img.timestamp, geometry.tz);
  if (captured != date)
    throw ValidationError("image '" + img.id + "' was captured on " + captured + ", not " + date);
  if (classify_day_night(img, day_night) != DayNight::day) return std::nullopt;
  return to_grayscale(crop_window(img, geometry.fountain_center, geometry.crop_size));
}

// Accumulates prepared frames (see background_frame); nullopt entries are skipped.
template <std::ranges::input_range Frames>
BackgroundState accumulate_background(const std::string& site_id, const std::string& date, Frames&& frames) {
  require_date(date);
  BackgroundState state;
  state.site_id = site_id;
  state.date = date;
  bool started = false;
  for (auto&& frame : frames) {
    const std::optional<TrailImage>& gray = frame;
    if (!gray) continue;
    if (!started) {
      state.mean = MeanImage(gray->width, gray->height);
      started = true;
    }
    state.mean.accumulate(*gray);
  }
  if (!started) throw ValidationError("empty day: no day-time frames for site '" + site_id + "' on " + date);
  return state;
}

// Day frames only, fountain-cropped and converted to luma, averaged.
template <std::ranges::input_range Images>
BackgroundState build_daily_mean(const std::string& site_id, const std::string& date, Images&& images,
                                 const SiteGeometry& geometry, const DayNightThresholds& day_night = {}) {
  require_date(date);
  BackgroundState state;
  state.site_id = site_id;
  state.date = date;
  bool started = false;
  for (auto&& frame : images) {
    std::optional<TrailImage> gray = background_frame(frame, site_id, date, geometry, day_night);
    if (!gray) continue;
    if (!started) {
      state.mean = MeanImage(gray->width, gray->height);
      started = true;
    }
    state.mean.accumulate(*gray);
  }
  if (!started) throw ValidationError("empty day: no day-time frames for site '" + site_id + "' on " + date);
  return state;
}

struct StateRti {
  std::string state_date;
  double rti = 0.0;
};

struct DriftDecision {
  std::string site_id;
  std::string date;
  double threshold = 0.1;
  std::vector<StateRti> rtis;
  double min_rti = 0.0;
  std::optional<std::string> matched_state_date;
  bool retrain = false;
};

inline double rti_between(const MeanImage& a, const MeanImage& b, const DriftConfig& cfg) {
  return rti(structure_matrix(a, b, cfg.window, cfg.stride, cfg.params));
}

// Retrain iff every state is at or above the threshold. The matched state is
// the lowest-RTI state, earliest date on ties.
inline DriftDecision check_drift(const std::string& site_id, const std::string& date, const MeanImage& day_mean,
                                 std::span<const BackgroundState> states, const DriftConfig& cfg = {}) {
  if (states.empty()) throw ValidationError("unprimed site '" + site_id + "': no background states");
  if (!(cfg.threshold > 0.0)) throw ValidationError("drift threshold must be positive");
  DriftDecision d;
  d.site_id = site_id;
  d.date = date;
  d.threshold = cfg.threshold;
  const BackgroundState* best = nullptr;
  double best_rti = 0.0;
  for (const auto& s : states) {
    if (s.site_id != site_id)
      throw ValidationError("background state of site '" + s.site_id + "' offered to site '" + site_id + "'");
    const double v = rti_between(day_mean, s.mean, cfg);
    d.rtis.push_back({s.date, v});
    if (best == nullptr || v < best_rti || (v == best_rti && s.date < best->date)) {
      best = &s;
      best_rti = v;
    }
  }
  d.min_rti = best_rti;
  d.retrain = best_rti >= cfg.threshold;
  if (!d.retrain) d.matched_state_date = best->date;
  return d;
}

inline nlohmann::ordered_json to_json(const DriftDecision& d) {
  nlohmann::ordered_json j;
  j["site_id"] = d.site_id;
  j["date"] = d.date;
  j["threshold"] = d.threshold;
  j["rtis"] = nlohmann::ordered_json::array();
  for (const auto& r : d.rtis) j["rtis"].push_back({{"state_date", r.state_date}, {"rti", r.rti}});
  j["retrain"] = d.retrain;
  if (d.matched_state_date)
    j["matched_state_date"] = *d.matched_state_date;
  else
    j["matched_state_date"] = nullptr;
  return j;
}

// ---------------------------------------------------------------------------
// Retraining subset

struct SubsetCandidate {
  std::string image_id;
  std::int64_t timestamp = 0;
  std::optional<Label> label;
};

inline std::vector<SubsetCandidate> subset_candidates(std::span<const AnnotationRecord> records, bool with_labels) {
  std::vector<SubsetCandidate> out;
  for (const auto& r : records)
    out.push_back({r.image_id, r.timestamp, with_labels ? std::optional<Label>(r.label) : std::nullopt});
  return out;
}

struct SubsetConfig {
  int bin_minutes = 3;
  std::optional<std::size_t> quota;  // default: min(200, available)
  std::uint64_t seed = 0;
  UtcOffset tz;
};

inline std::vector<std::string> select_retraining_subset(std::span<const SubsetCandidate> images, const SubsetConfig& cfg) {
  require_bin_minutes(cfg.bin_minutes);
  const std::size_t quota = cfg.quota.value_or(std::min<std::size_t>(200, images.size()));
  if (quota < 1) throw ValidationError("retraining quota must be >= 1");
  auto histogram = [&](std::optional<Label> only) {
    TemporalHistogram h;
    h.bin_minutes = cfg.bin_minutes;
    for (const auto& c : images)
      if (!only || c.label == only) h.bins[time_of_day_bin(c.timestamp, cfg.bin_minutes, cfg.tz)].push_back(c.image_id);
    return h;
  };
  std::mt19937_64 rng(cfg.seed);
  const bool labelled =
      !images.empty() && std::all_of(images.begin(), images.end(), [](const SubsetCandidate& c) { return c.label.has_value(); });
  if (!labelled) return stratified_sample(histogram(std::nullopt), quota, rng);

  TemporalHistogram animals = histogram(Label::animal);
  TemporalHistogram empties = histogram(Label::no_animal);
  std::size_t want_animal = quota - quota / 2;
  std::size_t want_empty = quota / 2;
  // shortfall in one class moves to the other
  if (animals.total() < want_animal) {
    want_empty += want_animal - animals.total();
    want_animal = animals.total();
  } else if (empties.total() < want_empty) {
    want_animal += want_empty - empties.total();
    want_empty = empties.total();
  }
  std::vector<std::string> out = stratified_sample(animals, want_animal, rng);
  auto more = stratified_sample(empties, want_empty, rng);
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

// ---------------------------------------------------------------------------
// State store: <root>/<site_id>/<YYYY-MM-DD>.f32 + .json

class StateStore {
 public:
  explicit StateStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  bool contains(const std::string& site_id, const std::string& date) const {
    return std::filesystem::exists(stem(site_id, date).string() + ".json");
  }

  void register_state(const BackgroundState& state) {
    require_date(state.date);
    if (state.source_count() < 1) throw ValidationError("background state without source frames");
    if (contains(state.site_id, state.date))
      throw ValidationError("background state for site '" + state.site_id + "' on " + state.date + " already exists");
    save_mean_image(stem(state.site_id, state.date), state.mean, state.site_id, state.date);
  }

  // All states of one site, ascending by date.
  std::vector<BackgroundState> states(const std::string& site_id) const {
    std::vector<BackgroundState> out;
    const auto dir = root_ / checked_site(site_id);
    if (!std::filesystem::is_directory(dir)) return out;
    std::vector<std::string> dates;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      std::string date = entry.path().stem().string();
      if (is_valid_date(date)) dates.push_back(date);
    }
    std::sort(dates.begin(), dates.end());
    for (const auto& date : dates) {
      MeanImageFile f = load_mean_image(stem(site_id, date));
      if (f.site_id != site_id || f.date != date)
        throw IoError("state file '" + stem(site_id, date).string() + "' disagrees with its location");
      out.push_back({site_id, date, std::move(f.mean)});
    }
    return out;
  }

 private:
  static const std::string& checked_site(const std::string& site_id) {
    if (site_id.empty() || site_id == "." || site_id == ".." || site_id.find('/') != std::string::npos ||
        site_id.find('\\') != std::string::npos)
      throw ValidationError("site id '" + site_id + "' cannot be used as a store key");
    return site_id;
  }

  std::filesystem::path stem(const std::string& site_id, const std::string& date) const {
    return root_ / checked_site(site_id) / date;
  }

  std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Pairwise RTI heat map between the means of one site.

struct RtiHeatmap {
  std::vector<std::string> dates;
  std::vector<double> values;  // n x n row-major

  double at(std::size_t r, std::size_t c) const { return values[r * dates.size() + c]; }
};

inline RtiHeatmap rti_heatmap(std::span<const BackgroundState> means, const DriftConfig& cfg = {}) {
  RtiHeatmap h;
  const std::size_t n = means.size();
  for (const auto& m : means) h.dates.push_back(m.date);
  h.values.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double v = i == j ? rti_between(means[i].mean, means[i].mean, cfg) : rti_between(means[i].mean, means[j].mean, cfg);
      h.values[i * n + j] = v;
      h.values[j * n + i] = v;
    }
  return h;
}

inline void write_rti_csv(std::ostream& out, const RtiHeatmap& h) {
  std::vector<std::string> header = {"date"};
  header.insert(header.end(), h.dates.begin(), h.dates.end());
  csv::write_row(out, header);
  for (std::size_t r = 0; r < h.dates.size(); ++r) {
    std::vector<std::string> row = {h.dates[r]};
    for (std::size_t c = 0; c < h.dates.size(); ++c) row.push_back(csv::format_number(h.at(r, c)));
    csv::write_row(out, row);
  }
}

}  // namespace trailcam
