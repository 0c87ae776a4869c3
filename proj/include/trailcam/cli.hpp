#pragma once

// Command-line driver. Exit codes: 0 ok, 1 validation/usage, 2 I/O or
// predictor failure, 3 drift-check decided to retrain.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trailcam/config.hpp"
#include "trailcam/csv.hpp"
#include "trailcam/dataset.hpp"
#include "trailcam/drift.hpp"
#include "trailcam/error.hpp"
#include "trailcam/evaluation.hpp"
#include "trailcam/explain.hpp"
#include "trailcam/gateway.hpp"
#include "trailcam/io.hpp"
#include "trailcam/parallel.hpp"

namespace trailcam::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitRetrain = 3;

struct Options {
  std::string config;
  std::string site;
  std::string date;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::vector<std::string> predictors;
  double mu0 = 0.95;
  std::string replay;
  std::string out;
  std::string image_root;
  std::string state_root;

  std::string manifest;
  std::string input;  // predictions / detections file
  bool reg = false;
  bool no_register = false;
  std::string trainer;
  std::optional<std::size_t> quota;
  bool balanced_subset = false;
  std::string mode = "day";
  bool no_flip = false;
  bool no_balance = false;
  double holdout = 0.0;
  int frame_width = 3264;
  double iou_threshold = 0.4;
  std::vector<std::string> templates;
  double jitter = 25.0;
  std::string aggregation = "pooled";
  bool structure_only = false;
};

class Session {
 public:
  Session(const Options& o, std::ostream& out, std::ostream& err) : opt_(o), out_(out), err_(err) {
    if (!o.config.empty()) {
      cfg_ = load_pipeline_config(o.config);
      registry_ = !cfg_.sites.empty();
    }
    if (o.threshold) cfg_.threshold = *o.threshold;
    if (o.seed) cfg_.seed = *o.seed;
    if (o.jobs) cfg_.jobs = *o.jobs;
    if (!o.out.empty()) cfg_.out_dir = o.out;
    if (!o.image_root.empty()) cfg_.image_root = o.image_root;
    if (!o.state_root.empty()) cfg_.state_root = o.state_root;
    for (const auto& p : o.predictors) {
      auto eq = p.find('=');
      const std::string key = eq == std::string::npos ? "" : p.substr(0, eq);
      if (key == "day") {
        cfg_.day_predictor = p.substr(eq + 1);
      } else if (key == "night") {
        cfg_.night_predictor = p.substr(eq + 1);
      } else {
        cfg_.day_predictor = p;
        cfg_.night_predictor = p;
      }
    }
    if (!(o.mu0 > 0.0 && o.mu0 < 1.0)) throw ValidationError("--mu0 must lie in (0,1)");
    cfg_.validate();
  }

  const PipelineConfig& cfg() const { return cfg_; }
  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }
  const Options& opt() const { return opt_; }

  const std::string& need_site() const {
    if (opt_.site.empty()) throw ValidationError("--site is required");
    return opt_.site;
  }
  const std::string& need_date() const {
    if (opt_.date.empty()) throw ValidationError("--date is required");
    require_date(opt_.date);
    return opt_.date;
  }

  SiteConfig site(const std::string& id) const {
    if (registry_) return cfg_.site(id);
    auto it = cfg_.sites.find(id);
    if (it != cfg_.sites.end()) return it->second;
    return SiteConfig{id, std::nullopt, {}};
  }

  std::vector<AnnotationRecord> manifest() const {
    if (opt_.manifest.empty()) throw ValidationError("a manifest path is required");
    auto records = ingest_manifest(opt_.manifest);
    if (registry_)
      for (const auto& r : records) cfg_.site(r.site_id);
    return records;
  }

  Point fountain_center(const std::string& site_id, std::span<const AnnotationRecord> records) const {
    SiteConfig s = site(site_id);
    if (s.fountain_center) return *s.fountain_center;
    auto own = records_for_site(records, site_id);
    bool any_box = false;
    for (const auto& r : own) any_box = any_box || !r.boxes.empty();
    if (!any_box)
      throw ValidationError("site '" + site_id + "' has no configured fountain center and no boxes to estimate one");
    return estimate_fountain_center(own);
  }

  SiteGeometry geometry(const std::string& site_id, std::span<const AnnotationRecord> records) const {
    return SiteGeometry{fountain_center(site_id, records), cfg_.crop_size, site(site_id).tz};
  }

  DriftConfig drift_config() const {
    DriftConfig d;
    d.threshold = cfg_.threshold;
    d.window = cfg_.drift_window;
    d.stride = cfg_.drift_stride;
    d.params = cfg_.similarity;
    d.day_night = cfg_.day_night;
    return d;
  }

  fs::path image_path(const std::string& image_id) const {
    for (const char* ext : {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".PNG", ".JPG", ".JPEG"}) {
      fs::path p = cfg_.image_root / (image_id + ext);
      if (fs::exists(p)) return p;
    }
    throw IoError("no image file for '" + image_id + "' under '" + cfg_.image_root.string() + "'");
  }

  TrailImage load(const AnnotationRecord& r) const {
    TrailImage img = load_image(image_path(r.image_id));
    img.id = r.image_id;
    img.site_id = r.site_id;
    img.timestamp = r.timestamp;
    img.capture_kind = r.capture_kind;
    return img;
  }

  // f(record) for every record, run on the configured thread bound; results
  // keep input order.
  template <class Fn>
  auto map_records(std::span<const AnnotationRecord> records, Fn&& f) const {
    using R = std::invoke_result_t<Fn&, const AnnotationRecord&>;
    std::vector<std::optional<R>> slots(records.size());
    parallel_for(records.size(), cfg_.jobs, [&](std::size_t i) { slots[i].emplace(f(records[i])); });
    std::vector<R> out;
    out.reserve(slots.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
  }

  fs::path out_path(const std::string& name) const {
    fs::create_directories(cfg_.out_dir);
    return cfg_.out_dir / name;
  }

  void write_file(const fs::path& path, const std::string& text) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f << text;
    if (!f) throw IoError("short write to '" + path.string() + "'");
  }

  void write_json(const fs::path& path, const ojson& j) const { write_file(path, j.dump(2) + "\n"); }

  // Predictors are created on first use; baseline predictors are per site.
  Predictor& predictor(DayNight period, const std::string& site_id) {
    const std::string& spec = period == DayNight::day ? cfg_.day_predictor : cfg_.night_predictor;
    PredictorBinding b = PredictorBinding::parse(spec);
    const std::string key = b.kind == PredictorKind::baseline ? spec + "#" + site_id : spec;
    auto it = predictors_.find(key);
    if (it != predictors_.end()) return *it->second;
    std::unique_ptr<Predictor> p;
    switch (b.kind) {
      case PredictorKind::oracle:
        oracle_records_ = manifest();
        p = std::make_unique<OraclePredictor>(oracle_records_);
        break;
      case PredictorKind::baseline: {
        auto states = StateStore(cfg_.state_root).states(site_id);
        if (states.empty()) throw ValidationError("baseline predictor: no background state for site '" + site_id + "'");
        p = std::make_unique<BaselinePredictor>(states.back(), b.baseline);
        break;
      }
      case PredictorKind::external:
        p = std::make_unique<ExternalPredictor>(b.command, "external:" + std::to_string(predictors_.size()),
                                                cfg_.out_dir / "scratch");
        break;
    }
    return *predictors_.emplace(key, std::move(p)).first->second;
  }

  // Prediction on a frame that is already the day region (experiments work
  // on fountain crops).
  ImagePredictor day_region_predictor(const std::string& site_id) {
    return [this, site_id](const TrailImage& img) {
      Predictor& p = predictor(DayNight::day, site_id);
      PreparedFrame f;
      f.source = &img;
      f.period = DayNight::day;
      f.region = img;
      f.model_input = resize(img, 299);
      try {
        return p.predict(f);
      } catch (const PredictorError&) {
        throw;
      } catch (const std::exception& e) {
        throw PredictorError(p.id(), e.what());
      }
    };
  }

 private:
  Options opt_;
  std::ostream& out_;
  std::ostream& err_;
  PipelineConfig cfg_;
  bool registry_ = false;
  std::map<std::string, std::unique_ptr<Predictor>> predictors_;
  std::vector<AnnotationRecord> oracle_records_;
};

inline std::string fmt(double v) { return csv::format_number(v); }

inline std::vector<std::string> sites_of(std::span<const AnnotationRecord> records) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.site_id).second) out.push_back(r.site_id);
  return out;
}

inline ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

// ---------------------------------------------------------------------------

inline int cmd_ingest(Session& s) {
  auto records = s.manifest();
  ojson j;
  j["images"] = records.size();
  std::size_t animals = 0, boxes = 0;
  std::map<std::string, std::size_t> per_site;
  for (const auto& r : records) {
    animals += r.label == Label::animal ? 1 : 0;
    boxes += r.boxes.size();
    ++per_site[r.site_id];
  }
  j["animal"] = animals;
  j["no_animal"] = records.size() - animals;
  j["boxes"] = boxes;
  j["per_site"] = per_site;
  s.out() << j.dump(2) << "\n";
  return kExitOk;
}

inline int cmd_crop(Session& s) {
  auto all = s.manifest();
  const std::string& site = s.need_site();
  auto records = records_for_site(all, site);
  if (records.empty()) throw ValidationError("no images for site '" + site + "'");
  const Point center = s.fountain_center(site, all);
  const fs::path dir = s.out_path("crops") / site;
  auto windows = s.map_records(records, [&](const AnnotationRecord& r) {
    TrailImage img = s.load(r);
    CropWindow w = place_window(img.width, img.height, center, s.cfg().crop_size);
    save_image(dir / (r.image_id + ".png"), crop(img, w));
    return w;
  });
  const CropWindow& w = windows.front();
  bool any_box = false;
  for (const auto& r : records) any_box = any_box || !r.boxes.empty();
  ojson j;
  j["site_id"] = site;
  j["fountain_center"] = {center.x, center.y};
  j["window"] = {{"x", w.origin_x}, {"y", w.origin_y}, {"size", w.size}};
  j["images"] = records.size();
  j["retention_rate"] = nullptr;
  j["retention_ok"] = nullptr;
  if (any_box) {
    const double rate = retention_rate(std::span<const AnnotationRecord>(records), w);
    j["retention_rate"] = rate;
    j["retention_ok"] = retention_acceptable(rate);
  }
  s.write_json(dir / "crop.json", j);
  s.out() << j.dump(2) << "\n";
  return kExitOk;
}

inline std::vector<AnnotationRecord> day_records(Session& s, std::span<const AnnotationRecord> all, const std::string& site,
                                                 const std::string& date) {
  const UtcOffset tz = s.site(site).tz;
  std::vector<AnnotationRecord> out;
  for (const auto& r : all)
    if (r.site_id == site && local_date(r.timestamp, tz) == date) out.push_back(r);
  if (out.empty()) throw ValidationError("empty day: no images for site '" + site + "' on " + date);
  return out;
}

inline BackgroundState daily_mean(Session& s, std::span<const AnnotationRecord> all, const std::string& site,
                                  const std::string& date) {
  auto records = day_records(s, all, site, date);
  const SiteGeometry geo = s.geometry(site, all);
  // bounded batches keep memory at a few frames per thread
  const std::size_t batch = std::max<std::size_t>(1, s.cfg().jobs) * 2;
  std::optional<BackgroundState> state;
  std::vector<std::optional<TrailImage>> frames;
  for (std::size_t start = 0; start < records.size(); start += batch) {
    std::span<const AnnotationRecord> chunk(records.data() + start, std::min(batch, records.size() - start));
    auto part = s.map_records(chunk, [&](const AnnotationRecord& r) {
      return background_frame(s.load(r), site, date, geo, s.cfg().day_night);
    });
    for (auto& f : part) {
      if (!f) continue;
      if (!state) {
        state.emplace();
        state->site_id = site;
        state->date = date;
        state->mean = MeanImage(f->width, f->height);
      }
      state->mean.accumulate(*f);
    }
  }
  if (!state) throw ValidationError("empty day: no day-time frames for site '" + site + "' on " + date);
  return *state;
}

inline int cmd_mean(Session& s) {
  auto all = s.manifest();
  const std::string& site = s.need_site();
  const std::string& date = s.need_date();
  BackgroundState state = daily_mean(s, all, site, date);
  save_mean_image(s.out_path("means") / site / date, state.mean, site, date);
  if (s.opt().reg) StateStore(s.cfg().state_root).register_state(state);
  ojson j;
  j["site_id"] = site;
  j["date"] = date;
  j["frames"] = state.source_count();
  j["width"] = state.mean.width();
  j["height"] = state.mean.height();
  j["registered"] = s.opt().reg;
  s.out() << j.dump(2) << "\n";
  return kExitOk;
}

inline int cmd_sample(Session& s) {
  auto all = s.manifest();
  const std::string& site = s.need_site();
  auto records = records_for_site(all, site);
  TrainingConfig tc;
  tc.flip_augment = !s.opt().no_flip;
  tc.balance = !s.opt().no_balance;
  if (s.opt().mode == "day")
    tc.mode = SamplingMode::day;
  else if (s.opt().mode == "night")
    tc.mode = SamplingMode::night;
  else
    throw ValidationError("--mode must be 'day' or 'night'");
  tc.tz = s.site(site).tz;
  tc.seed = s.cfg().seed;
  tc.frame_width = s.opt().frame_width;
  tc.holdout_fraction = s.opt().holdout;
  TrainingSetManifest m = build_training_set(records, tc);
  std::ostringstream csv_text;
  write_training_manifest(csv_text, m);
  const fs::path path = s.out_path("training_" + site + ".csv");
  s.write_file(path, csv_text.str());
  ojson j;
  j["site_id"] = site;
  j["animal"] = m.count(Label::animal);
  j["no_animal"] = m.count(Label::no_animal);
  j["manifest"] = path.string();
  s.out() << j.dump(2) << "\n";
  return kExitOk;
}

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'')
      q += "'\\''";
    else
      q += c;
  }
  return q + "'";
}

inline int cmd_drift_check(Session& s) {
  auto all = s.manifest();
  const std::string& site = s.need_site();
  const std::string& date = s.need_date();
  StateStore store(s.cfg().state_root);
  auto states = store.states(site);
  BackgroundState today = daily_mean(s, all, site, date);
  DriftDecision d = check_drift(site, date, today.mean, states, s.drift_config());
  s.write_json(s.out_path("drift_" + site + "_" + date + ".json"), to_json(d));
  s.out() << to_json(d).dump(2) << "\n";
  if (!d.retrain) return kExitOk;

  auto day = day_records(s, all, site, date);
  SubsetConfig sc;
  sc.quota = s.opt().quota;
  sc.seed = s.cfg().seed;
  sc.tz = s.site(site).tz;
  auto chosen = select_retraining_subset(subset_candidates(day, s.opt().balanced_subset), sc);
  std::set<std::string> keep(chosen.begin(), chosen.end());
  std::vector<AnnotationRecord> subset;
  for (const auto& r : day)
    if (keep.count(r.image_id)) subset.push_back(r);
  std::ostringstream csv_text;
  write_manifest(csv_text, subset);
  const fs::path subset_path = s.out_path("retrain_" + site + "_" + date + ".csv");
  s.write_file(subset_path, csv_text.str());
  // the triggering day becomes a background state of the retrained model
  if (!s.opt().no_register && !store.contains(site, date)) store.register_state(today);
  if (!s.opt().trainer.empty()) {
    const int rc = std::system((s.opt().trainer + " " + shell_quote(fs::absolute(subset_path).string())).c_str());
    if (rc != 0) s.err() << "trailcam: trainer exited with status " << rc << "\n";
  }
  return kExitRetrain;
}

inline int cmd_rti_matrix(Session& s) {
  const std::string& site = s.need_site();
  auto states = StateStore(s.cfg().state_root).states(site);
  if (states.empty()) throw ValidationError("no background states for site '" + site + "'");
  RtiHeatmap h = rti_heatmap(states, s.drift_config());
  std::ostringstream text;
  write_rti_csv(text, h);
  s.write_file(s.out_path("rti_" + site + ".csv"), text.str());
  s.out() << text.str();
  return kExitOk;
}

inline int cmd_predict(Session& s) {
  auto all = s.manifest();
  std::vector<AnnotationRecord> records = s.opt().site.empty() ? all : records_for_site(all, s.opt().site);
  std::ostringstream text;
  csv::write_row(text, {"image_id", "site_id", "period", "p_animal", "p_no_animal", "label", "predictor_id"});
  const std::size_t batch = std::max<std::size_t>(1, s.cfg().jobs) * 2;
  for (std::size_t start = 0; start < records.size(); start += batch) {
    std::span<const AnnotationRecord> chunk(records.data() + start, std::min(batch, records.size() - start));
    auto frames = s.map_records(chunk, [&](const AnnotationRecord& r) { return s.load(r); });
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& r = chunk[i];
      RouteConfig rc;
      rc.fountain_center = s.fountain_center(r.site_id, all);
      rc.crop_size = s.cfg().crop_size;
      rc.day_night = s.cfg().day_night;
      PreparedFrame f = prepare_frame(frames[i], rc);
      Predictor& p = s.predictor(f.period, r.site_id);
      Prediction pred;
      try {
        pred = p.predict(f);
      } catch (const PredictorError&) {
        throw;
      } catch (const std::exception& e) {
        throw PredictorError(p.id(), e.what());
      }
      csv::write_row(text, {r.image_id, r.site_id, to_string(f.period), fmt(pred.p_animal), fmt(pred.p_no_animal),
                            to_string(pred.label), pred.predictor_id});
    }
  }
  s.write_file(s.out_path("predictions.csv"), text.str());
  s.out() << "wrote " << records.size() << " predictions\n";
  return kExitOk;
}

inline std::map<std::string, Label> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions '" + path + "'");
  IndexedRows t = read_table(in, {"image_id", "label"});
  std::map<std::string, Label> out;
  for (const auto& row : t.rows) {
    const std::string& id = t.get(row, "image_id");
    auto label = parse_label(t.get(row, "label"));
    if (!label) throw ValidationError(detail::row_error(row.line, "label", "expected Animal or NoAnimal"));
    if (!out.emplace(id, *label).second) throw ValidationError(detail::row_error(row.line, "image_id", "duplicate '" + id + "'"));
  }
  return out;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in '" + path + "': " + e.what());
  }
}

inline ojson rounding_checks(const nlohmann::json& reported, const std::map<std::string, std::optional<double>>& computed,
                             double granularity) {
  ojson checks = ojson::array();
  for (const auto& [metric, value] : computed) {
    if (!reported.contains(metric) || !value) continue;
    const double rep = reported.at(metric).get<double>();
    auto note = check_reported_percent(metric, *value, rep, granularity);
    checks.push_back({{"metric", metric},
                      {"computed_percent", *value * 100.0},
                      {"reported_percent", rep},
                      {"consistent", !note.has_value()},
                      {"note", note ? ojson(note->message) : ojson(nullptr)}});
  }
  return checks;
}

inline ConfusionCounts counts_from_json(const nlohmann::json& j) {
  ConfusionCounts c;
  c.tp = j.value("tp", std::int64_t{0});
  c.tn = j.value("tn", std::int64_t{0});
  c.fp = j.value("fp", std::int64_t{0});
  c.fn = j.value("fn", std::int64_t{0});
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) throw ValidationError("negative confusion count");
  return c;
}

inline ojson counts_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}}; }

// Replay file: {"rows":[{"name","tp","tn","fp","fn"}...]} or
// {"rates":{"sensitivity","specificity"}}, plus optional "reported" percents
// and "granularity".
inline ojson classify_replay(const nlohmann::json& j) {
  ojson r;
  std::optional<double> se, sp, yi, acc;
  try {
    if (j.contains("rows")) {
      ConfusionCounts total;
      for (const auto& row : j.at("rows")) total += counts_from_json(row);
      r["counts"] = counts_json(total);
      se = total.sensitivity();
      sp = total.specificity();
      yi = total.y_index();
      acc = total.accuracy();
    } else {
      const auto& rates = j.at("rates");
      se = rates.at("sensitivity").get<double>();
      sp = rates.at("specificity").get<double>();
      yi = *se + *sp - 1.0;
      r["counts"] = nullptr;
    }
    r["sensitivity"] = optional_json(se);
    r["specificity"] = optional_json(sp);
    r["y_index"] = optional_json(yi);
    r["accuracy"] = optional_json(acc);
    r["rounding_checks"] = rounding_checks(j.value("reported", nlohmann::json::object()),
                                           {{"sensitivity", se}, {"specificity", sp}, {"y_index", yi}, {"accuracy", acc}},
                                           j.value("granularity", 1.0));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed classification replay: ") + e.what());
  }
  return r;
}

inline int cmd_eval_classify(Session& s) {
  ojson report;
  if (!s.opt().replay.empty()) {
    report = classify_replay(read_json_file(s.opt().replay));
  } else {
    if (s.opt().input.empty()) throw ValidationError("eval-classify needs a predictions file or --replay");
    auto preds = read_predictions(s.opt().input);
    auto records = s.manifest();
    std::map<std::string, Label> truth;
    std::map<std::string, std::string> site_of;
    for (const auto& r : records) {
      truth[r.image_id] = r.label;
      site_of[r.image_id] = r.site_id;
    }
    std::map<std::string, std::vector<LabelPair>> by_site;
    std::vector<LabelPair> pairs;
    for (const auto& [id, label] : preds) {
      auto t = truth.find(id);
      if (t == truth.end()) throw ValidationError("prediction for unknown image '" + id + "'");
      pairs.push_back({label, t->second});
      by_site[site_of[id]].push_back({label, t->second});
    }
    ConfusionCounts c = confusion(pairs);
    report["counts"] = counts_json(c);
    report["sensitivity"] = optional_json(c.sensitivity());
    report["specificity"] = optional_json(c.specificity());
    report["y_index"] = optional_json(c.y_index());
    report["accuracy"] = optional_json(c.accuracy());
    report["per_site"] = ojson::array();
    for (const auto& [site, sp] : by_site) {
      ConfusionCounts sc = confusion(sp);
      report["per_site"].push_back({{"site_id", site},
                                    {"counts", counts_json(sc)},
                                    {"sensitivity", optional_json(sc.sensitivity())},
                                    {"specificity", optional_json(sc.specificity())}});
    }
    report["unscored"] = records.size() - preds.size();
  }
  s.write_json(s.out_path("eval_classify.json"), report);
  s.out() << report.dump(2) << "\n";
  return kExitOk;
}

// Replay file: {"tp","tn","fp","fn","avg_iou"} plus optional "reported".
inline ojson detect_replay(const nlohmann::json& j) {
  try {
    ConfusionCounts c = counts_from_json(j);
    std::optional<double> avg;
    if (j.contains("avg_iou")) avg = j.at("avg_iou").get<double>();
    DetectionMetrics m = detection_metrics(c, avg);
    ojson r;
    r["counts"] = counts_json(c);
    r["sensitivity"] = optional_json(m.sensitivity);
    r["specificity"] = optional_json(m.specificity);
    r["avg_iou"] = optional_json(m.avg_iou);
    r["avg_iou_percent"] = m.avg_iou ? ojson(std::round(*m.avg_iou * 100.0)) : ojson(nullptr);
    r["rounding_checks"] =
        rounding_checks(j.value("reported", nlohmann::json::object()),
                        {{"sensitivity", m.sensitivity}, {"specificity", m.specificity}, {"avg_iou", m.avg_iou}},
                        j.value("granularity", 1.0));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed detection replay: ") + e.what());
  }
}

inline int cmd_eval_detect(Session& s) {
  ojson report;
  if (!s.opt().replay.empty()) {
    report = detect_replay(read_json_file(s.opt().replay));
  } else {
    if (s.opt().input.empty()) throw ValidationError("eval-detect needs a detections file or --replay");
    auto records = s.manifest();
    std::ifstream in(s.opt().input);
    if (!in) throw IoError("cannot open detections '" + s.opt().input + "'");
    IndexedRows t = read_table(in, {"image_id", "box_x", "box_y", "box_w", "box_h", "score"});
    std::map<std::string, std::vector<ScoredBox>> est;
    for (const auto& row : t.rows) {
      const std::string& id = t.get(row, "image_id");
      auto& list = est[id];
      if (t.get(row, "box_x").empty()) continue;
      ScoredBox sb;
      sb.box.x = detail::parse_number<double>(t.get(row, "box_x"), row.line, "box_x");
      sb.box.y = detail::parse_number<double>(t.get(row, "box_y"), row.line, "box_y");
      sb.box.w = detail::parse_number<double>(t.get(row, "box_w"), row.line, "box_w");
      sb.box.h = detail::parse_number<double>(t.get(row, "box_h"), row.line, "box_h");
      sb.score = detail::parse_number<double>(t.get(row, "score"), row.line, "score");
      list.push_back(sb);
    }
    std::set<std::string> known;
    std::vector<DetectionOutcome> outcomes;
    for (const auto& r : records) {
      known.insert(r.image_id);
      auto it = est.find(r.image_id);
      std::vector<ScoredBox> e = it == est.end() ? std::vector<ScoredBox>{} : it->second;
      outcomes.push_back(match_detections(e, r.boxes, s.opt().iou_threshold));
    }
    for (const auto& [id, unused] : est)
      if (!known.count(id)) throw ValidationError("detections for unknown image '" + id + "'");
    DetectionMetrics m = detection_metrics(outcomes);
    report["counts"] = counts_json(m.counts);
    report["sensitivity"] = optional_json(m.sensitivity);
    report["specificity"] = optional_json(m.specificity);
    report["avg_iou"] = optional_json(m.avg_iou);
    report["iou_threshold"] = s.opt().iou_threshold;
  }
  s.write_json(s.out_path("eval_detect.json"), report);
  s.out() << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Experiments on fountain-cropped day frames (luma).

struct ExperimentFrames {
  std::vector<TrailImage> animal;
  std::vector<TrailImage> no_animal;
  std::map<std::string, CropWindow> windows;
};

inline ExperimentFrames experiment_frames(Session& s, std::span<const AnnotationRecord> all) {
  std::vector<AnnotationRecord> records;
  for (const auto& r : all)
    if (s.opt().site.empty() || r.site_id == s.opt().site) records.push_back(r);
  if (records.empty()) throw ValidationError("no images selected for the experiment");
  std::map<std::string, Point> centers;
  for (const auto& site : sites_of(records)) centers[site] = s.fountain_center(site, all);

  struct Loaded {
    std::optional<TrailImage> crop;
    CropWindow window;
  };
  auto loaded = s.map_records(records, [&](const AnnotationRecord& r) {
    TrailImage img = s.load(r);
    Loaded l;
    l.window = place_window(img.width, img.height, centers.at(r.site_id), s.cfg().crop_size);
    if (classify_day_night(img, s.cfg().day_night) == DayNight::day) l.crop = to_grayscale(crop(img, l.window));
    return l;
  });
  ExperimentFrames f;
  for (std::size_t i = 0; i < records.size(); ++i) {
    f.windows.emplace(records[i].site_id, loaded[i].window);
    if (!loaded[i].crop) continue;
    (records[i].label == Label::animal ? f.animal : f.no_animal).push_back(std::move(*loaded[i].crop));
  }
  return f;
}

// Keeps frames the day predictor labels as their ground truth, i.e. the
// true positives or true negatives.
inline std::vector<TrailImage> correctly_predicted(Session& s, std::vector<TrailImage> frames, Label truth) {
  std::vector<TrailImage> out;
  for (auto& f : frames)
    if (s.day_region_predictor(f.site_id)(f).label == truth) out.push_back(std::move(f));
  return out;
}

inline int cmd_twin(Session& s) {
  auto all = s.manifest();
  ExperimentFrames f = experiment_frames(s, all);
  DisiConfig dc;
  dc.params = s.cfg().similarity;
  dc.similarity = s.opt().structure_only ? SimilarityKind::structure : SimilarityKind::full;
  std::vector<TwinResult> twins(f.animal.size());
  std::map<std::string, std::vector<const TrailImage*>> pool;
  for (const auto& img : f.no_animal) pool[img.site_id].push_back(&img);
  std::vector<char> found(f.animal.size(), 0);
  parallel_for(f.animal.size(), s.cfg().jobs, [&](std::size_t i) {
    auto it = pool.find(f.animal[i].site_id);
    if (it == pool.end()) return;
    twins[i].record = find_twin(f.animal[i], std::span<const TrailImage* const>(it->second), dc).first;
    found[i] = 1;
  });
  std::vector<TwinResult> kept;
  for (std::size_t i = 0; i < twins.size(); ++i) {
    if (found[i])
      kept.push_back(twins[i]);
    else
      s.err() << "trailcam: skipped '" << f.animal[i].id << "': no NoAnimal candidates at its site\n";
  }
  std::ostringstream text;
  write_twins_csv(text, kept);
  s.write_file(s.out_path("twins.csv"), text.str());
  s.out() << text.str();
  return kExitOk;
}

inline int cmd_tp_exp(Session& s) {
  TpReport report;
  if (!s.opt().replay.empty()) {
    report = tp_replay_from_json(read_json_file(s.opt().replay), s.opt().mu0);
  } else {
    auto all = s.manifest();
    ExperimentFrames f = experiment_frames(s, all);
    std::vector<TrailImage> tps = correctly_predicted(s, std::move(f.animal), Label::animal);
    TpConfig tc;
    tc.mu0 = s.opt().mu0;
    tc.jobs = s.cfg().jobs;
    tc.disi.params = s.cfg().similarity;
    tc.disi.similarity = s.opt().structure_only ? SimilarityKind::structure : SimilarityKind::full;
    report = tp_experiment(tps, f.no_animal, [&](const TrailImage& img) { return s.day_region_predictor(img.site_id)(img); },
                           tc);
    std::ostringstream text;
    write_twins_csv(text, report.twins);
    s.write_file(s.out_path("twins.csv"), text.str());
    for (const auto& k : report.skipped) s.err() << "trailcam: skipped '" << k.image_id << "': " << k.reason << "\n";
  }
  ojson j = to_json(report);
  s.write_json(s.out_path("tp_report.json"), j);
  s.out() << j.dump(2) << "\n";
  return kExitOk;
}

inline TnAggregation parse_aggregation(const std::string& text) {
  if (text == "pooled") return TnAggregation::pooled;
  if (text == "template_mean") return TnAggregation::template_mean;
  throw ValidationError("--aggregation must be 'pooled' or 'template_mean'");
}

inline int cmd_tn_exp(Session& s) {
  TnReport report;
  if (!s.opt().replay.empty()) {
    report = tn_replay_from_json(read_json_file(s.opt().replay), s.opt().mu0);
  } else {
    if (s.opt().templates.empty()) throw ValidationError("tn-exp needs --templates");
    auto all = s.manifest();
    ExperimentFrames f = experiment_frames(s, all);
    std::vector<TrailImage> tns = correctly_predicted(s, std::move(f.no_animal), Label::no_animal);
    std::vector<TrailImage> templates;
    for (const auto& p : s.opt().templates) templates.push_back(load_image(p));
    std::map<std::string, LocationDistribution> dists;
    for (const auto& [site, window] : f.windows) {
      std::vector<AnnotationRecord> animals;
      for (const auto& r : all)
        if (r.site_id == site && r.label == Label::animal) animals.push_back(r);
      bool any = false;
      for (const auto& r : animals) any = any || !r.boxes.empty();
      if (any) dists.emplace(site, location_distribution(animals, window, s.opt().jitter));
    }
    TnConfig tc;
    tc.mu0 = s.opt().mu0;
    tc.seed = s.cfg().seed;
    tc.aggregation = parse_aggregation(s.opt().aggregation);
    report = tn_experiment(tns, templates, dists,
                           [&](const TrailImage& img) { return s.day_region_predictor(img.site_id)(img); }, tc);
    std::ostringstream text;
    csv::write_row(text, {"tn_image_id", "template", "x", "y", "label", "success"});
    for (const auto& t : report.trials)
      csv::write_row(text, {t.tn_image_id, std::to_string(t.template_index + 1), fmt(t.location.x), fmt(t.location.y),
                            to_string(t.prediction.label), t.success ? "1" : "0"});
    s.write_file(s.out_path("tn_trials.csv"), text.str());
    for (const auto& k : report.skipped) s.err() << "trailcam: skipped '" << k.image_id << "': " << k.reason << "\n";
  }
  ojson j = to_json(report);
  s.write_json(s.out_path("tn_report.json"), j);
  s.out() << j.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Trail-camera pipeline toolkit", "trailcam"};
  app.fallthrough();
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "pipeline configuration file");
  app.add_option("--site", o.site, "observation site id");
  app.add_option("--date", o.date, "site-local date, YYYY-MM-DD");
  app.add_option("--threshold", o.threshold, "RTI retraining threshold");
  app.add_option("--seed", o.seed, "seed for every random draw");
  app.add_option("--jobs", o.jobs, "worker threads for per-image work");
  app.add_option("--predictor", o.predictors, "day=<spec>, night=<spec> or <spec>; spec is oracle, baseline or a command");
  app.add_option("--mu0", o.mu0, "hypothesised success rate");
  app.add_option("--replay", o.replay, "replay reported counts from a JSON file");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--image-root", o.image_root, "directory holding <image_id>.png|jpg");
  app.add_option("--state-root", o.state_root, "background state store");

  struct Sub {
    CLI::App* app;
    int (*fn)(Session&);
  };
  std::vector<Sub> subs;
  auto add = [&](const char* name, const char* help, int (*fn)(Session&), bool manifest = true) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (manifest) sub->add_option("manifest", o.manifest, "annotation manifest CSV");
    subs.push_back({sub, fn});
    return sub;
  };
  add("ingest", "validate a manifest and summarise it", cmd_ingest);
  add("crop", "write fountain crops of one site", cmd_crop);
  add("mean", "build one day's background mean", cmd_mean)->add_flag("--register", o.reg, "add it to the state store");
  auto* sample = add("sample", "build a training-set manifest", cmd_sample);
  sample->add_option("--mode", o.mode, "day or night");
  sample->add_flag("--no-flip", o.no_flip, "skip horizontal-flip augmentation");
  sample->add_flag("--no-balance", o.no_balance, "keep class sizes as sampled");
  sample->add_option("--holdout", o.holdout, "fraction of sources marked as test");
  sample->add_option("--frame-width", o.frame_width, "frame width used to mirror boxes");
  auto* drift = add("drift-check", "compare a day against the background states", cmd_drift_check);
  drift->add_flag("--no-register", o.no_register, "do not store the day's mean as a new state on retrain");
  drift->add_option("--trainer", o.trainer, "command run with the subset manifest path on retrain");
  drift->add_option("--quota", o.quota, "retraining subset size");
  drift->add_flag("--balanced-subset", o.balanced_subset, "split the subset evenly between labels");
  add("rti-matrix", "pairwise RTI between a site's states", cmd_rti_matrix, false);
  add("predict", "route frames through the predictor bindings", cmd_predict);
  auto* ec = add("eval-classify", "classification metrics", cmd_eval_classify, false);
  ec->add_option("predictions", o.input, "predictions CSV");
  ec->add_option("manifest", o.manifest, "annotation manifest CSV");
  auto* ed = add("eval-detect", "detection metrics", cmd_eval_detect, false);
  ed->add_option("detections", o.input, "detections CSV");
  ed->add_option("manifest", o.manifest, "annotation manifest CSV");
  ed->add_option("--iou", o.iou_threshold, "IoU needed for a true positive");
  add("twin", "find the twin of every animal frame", cmd_twin)->add_flag("--structure-only", o.structure_only);
  add("tp-exp", "twin-image experiment", cmd_tp_exp)->add_flag("--structure-only", o.structure_only);
  auto* tn = add("tn-exp", "template-insertion experiment", cmd_tn_exp);
  tn->add_option("--templates", o.templates, "animal template images")->delimiter(',');
  tn->add_option("--jitter", o.jitter, "location jitter radius in pixels");
  tn->add_option("--aggregation", o.aggregation, "pooled or template_mean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "trailcam: " << e.what() << "\n" << app.help();
    return kExitValidation;
  }

  try {
    Session session(o, out, err);
    for (const auto& s : subs)
      if (s.app->parsed()) return s.fn(session);
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "trailcam: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "trailcam: " << e.what() << "\n";
    return kExitIo;
  } catch (const ProtocolError& e) {
    err << "trailcam: protocol error: " << e.what() << "\n";
    return kExitIo;
  } catch (const PredictorError& e) {
    err << "trailcam: predictor '" << e.predictor_id() << "' failed: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "trailcam: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "trailcam: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace trailcam::cli
