#pragma once

// Dataset curation: manifest ingestion, time-of-capture histograms,
// stratified round-robin sampling, balanced training-set construction with
// flip augmentation, and the crop retention criterion.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "trailcam/clock.hpp"
#include "trailcam/csv.hpp"
#include "trailcam/error.hpp"
#include "trailcam/image.hpp"

namespace trailcam {

enum class Label { animal, no_animal };

inline const char* to_string(Label l) { return l == Label::animal ? "Animal" : "NoAnimal"; }

inline std::optional<Label> parse_label(const std::string& s) {
  if (s == "Animal") return Label::animal;
  if (s == "NoAnimal") return Label::no_animal;
  return std::nullopt;
}

inline std::optional<CaptureKind> parse_capture_kind(const std::string& s) {
  if (s == "motion") return CaptureKind::motion;
  if (s == "diagnostic") return CaptureKind::diagnostic;
  return std::nullopt;
}

struct AnnotationRecord {
  std::string image_id;
  std::string site_id;
  std::int64_t timestamp = 0;
  Label label = Label::no_animal;
  std::vector<BoundingBox> boxes;
  CaptureKind capture_kind = CaptureKind::motion;

  void validate() const {
    if (image_id.empty()) throw ValidationError("record without image_id");
    if (site_id.empty()) throw ValidationError("image '" + image_id + "': empty site_id");
    if (timestamp <= 0) throw ValidationError("image '" + image_id + "': timestamp must be positive");
    if (label == Label::animal && boxes.empty())
      throw ValidationError("image '" + image_id + "': Animal label requires at least one bounding box");
    if (label == Label::no_animal && !boxes.empty())
      throw ValidationError("image '" + image_id + "': NoAnimal label must not carry bounding boxes");
    for (const auto& b : boxes)
      if (!(b.w > 0 && b.h > 0)) throw ValidationError("image '" + image_id + "': box with non-positive size");
  }
};

// ---------------------------------------------------------------------------
// Manifest I/O

inline const std::vector<std::string>& manifest_columns() {
  static const std::vector<std::string> all = {"image_id", "site_id", "timestamp_unix", "capture_kind", "label",
                                               "box_x",    "box_y",   "box_w",          "box_h",        "class_name"};
  return all;
}

namespace detail {

inline std::string row_error(std::size_t line, const std::string& field, const std::string& msg) {
  return "row " + std::to_string(line) + ", field '" + field + "': " + msg;
}

template <class T>
T parse_number(const std::string& text, std::size_t line, const std::string& field) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, value);
  if (text.empty() || res.ec != std::errc() || res.ptr != last)
    throw ValidationError(row_error(line, field, "not a number: '" + text + "'"));
  return value;
}

}  // namespace detail

struct IndexedRows {
  std::vector<std::string> header;
  std::map<std::string, std::size_t> column;
  std::vector<csv::Row> rows;

  const std::string& get(const csv::Row& r, const std::string& name) const { return r.fields.at(column.at(name)); }
};

inline IndexedRows read_table(std::istream& in, const std::vector<std::string>& required) {
  IndexedRows t;
  auto rows = csv::read(in);
  if (rows.empty()) throw ValidationError("missing header row");
  t.header = rows.front().fields;
  for (std::size_t i = 0; i < t.header.size(); ++i) t.column[t.header[i]] = i;
  for (const auto& name : required)
    if (!t.column.count(name)) throw ValidationError("header is missing column '" + name + "'");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].fields.size() != t.header.size())
      throw ValidationError("row " + std::to_string(rows[i].line) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(rows[i].fields.size()));
    t.rows.push_back(std::move(rows[i]));
  }
  return t;
}

// One row per box; NoAnimal images carry a single row with empty box fields.
// Records keep the order of first appearance.
inline std::vector<AnnotationRecord> ingest_manifest(std::istream& in) {
  IndexedRows t = read_table(in, manifest_columns());
  std::vector<AnnotationRecord> records;
  std::unordered_map<std::string, std::size_t> by_id;
  std::unordered_map<std::string, bool> saw_empty_row;

  for (const auto& row : t.rows) {
    const std::size_t line = row.line;
    auto field = [&](const char* name) -> const std::string& { return t.get(row, name); };

    const std::string& id = field("image_id");
    if (id.empty()) throw ValidationError(detail::row_error(line, "image_id", "empty"));
    const std::string& site = field("site_id");
    if (site.empty()) throw ValidationError(detail::row_error(line, "site_id", "empty"));
    auto ts = detail::parse_number<std::int64_t>(field("timestamp_unix"), line, "timestamp_unix");
    if (ts <= 0) throw ValidationError(detail::row_error(line, "timestamp_unix", "must be positive"));
    auto kind = parse_capture_kind(field("capture_kind"));
    if (!kind) throw ValidationError(detail::row_error(line, "capture_kind", "expected motion or diagnostic"));
    auto label = parse_label(field("label"));
    if (!label) throw ValidationError(detail::row_error(line, "label", "expected Animal or NoAnimal"));

    const char* box_fields[] = {"box_x", "box_y", "box_w", "box_h"};
    int present = 0;
    for (const char* f : box_fields) present += field(f).empty() ? 0 : 1;
    if (present != 0 && present != 4)
      throw ValidationError(detail::row_error(line, "box_x", "box fields must be all present or all empty"));
    std::optional<BoundingBox> box;
    if (present == 4) {
      BoundingBox b;
      b.x = detail::parse_number<double>(field("box_x"), line, "box_x");
      b.y = detail::parse_number<double>(field("box_y"), line, "box_y");
      b.w = detail::parse_number<double>(field("box_w"), line, "box_w");
      b.h = detail::parse_number<double>(field("box_h"), line, "box_h");
      b.class_name = field("class_name");
      if (!(b.w > 0)) throw ValidationError(detail::row_error(line, "box_w", "must be positive"));
      if (!(b.h > 0)) throw ValidationError(detail::row_error(line, "box_h", "must be positive"));
      if (b.x < 0) throw ValidationError(detail::row_error(line, "box_x", "must be non-negative"));
      if (b.y < 0) throw ValidationError(detail::row_error(line, "box_y", "must be non-negative"));
      box = b;
    }
    if (*label == Label::animal && !box)
      throw ValidationError(detail::row_error(line, "box_x", "Animal label requires a bounding box"));
    if (*label == Label::no_animal && box)
      throw ValidationError(detail::row_error(line, "box_x", "NoAnimal label must not carry a bounding box"));

    auto it = by_id.find(id);
    if (it == by_id.end()) {
      AnnotationRecord rec;
      rec.image_id = id;
      rec.site_id = site;
      rec.timestamp = ts;
      rec.label = *label;
      rec.capture_kind = *kind;
      if (box) rec.boxes.push_back(*box);
      by_id.emplace(id, records.size());
      saw_empty_row[id] = !box;
      records.push_back(std::move(rec));
      continue;
    }
    AnnotationRecord& rec = records[it->second];
    if (rec.site_id != site) throw ValidationError(detail::row_error(line, "site_id", "differs from earlier row of '" + id + "'"));
    if (rec.timestamp != ts)
      throw ValidationError(detail::row_error(line, "timestamp_unix", "differs from earlier row of '" + id + "'"));
    if (rec.capture_kind != *kind)
      throw ValidationError(detail::row_error(line, "capture_kind", "differs from earlier row of '" + id + "'"));
    if (rec.label != *label) throw ValidationError(detail::row_error(line, "label", "differs from earlier row of '" + id + "'"));
    if (!box || saw_empty_row[id])
      throw ValidationError(detail::row_error(line, "image_id", "duplicate row for image without boxes '" + id + "'"));
    rec.boxes.push_back(*box);
  }
  for (const auto& r : records) r.validate();
  return records;
}

inline std::vector<AnnotationRecord> ingest_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  return ingest_manifest(in);
}

inline std::vector<std::string> manifest_row(const AnnotationRecord& r, const BoundingBox* box) {
  std::vector<std::string> row = {r.image_id, r.site_id, std::to_string(r.timestamp), to_string(r.capture_kind),
                                  to_string(r.label)};
  if (box) {
    row.insert(row.end(), {csv::format_number(box->x), csv::format_number(box->y), csv::format_number(box->w),
                           csv::format_number(box->h), box->class_name});
  } else {
    row.insert(row.end(), {"", "", "", "", ""});
  }
  return row;
}

inline void write_manifest(std::ostream& out, std::span<const AnnotationRecord> records) {
  csv::write_row(out, manifest_columns());
  for (const auto& r : records) {
    if (r.boxes.empty()) {
      csv::write_row(out, manifest_row(r, nullptr));
    } else {
      for (const auto& b : r.boxes) csv::write_row(out, manifest_row(r, &b));
    }
  }
}

inline std::vector<AnnotationRecord> records_for_site(std::span<const AnnotationRecord> records, const std::string& site) {
  std::vector<AnnotationRecord> out;
  for (const auto& r : records)
    if (r.site_id == site) out.push_back(r);
  return out;
}

inline Point estimate_fountain_center(std::span<const AnnotationRecord> records, double bin_size = 50.0) {
  std::vector<BoundingBox> boxes;
  for (const auto& r : records) boxes.insert(boxes.end(), r.boxes.begin(), r.boxes.end());
  return estimate_fountain_center(std::span<const BoundingBox>(boxes), bin_size);
}

// ---------------------------------------------------------------------------
// Temporal histograms and stratified sampling

struct TemporalHistogram {
  int bin_minutes = 15;
  std::map<int, std::vector<std::string>> bins;  // bin index -> image ids

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [k, v] : bins) n += v.size();
    return n;
  }
};

inline int time_of_day_bin(std::int64_t timestamp, int bin_minutes, UtcOffset tz) {
  return static_cast<int>(seconds_since_local_midnight(timestamp, tz) / (60 * static_cast<std::int64_t>(bin_minutes)));
}

inline void require_bin_minutes(int bin_minutes) {
  if (bin_minutes < 1 || 1440 % bin_minutes != 0)
    throw ValidationError("bin width of " + std::to_string(bin_minutes) + " minutes does not divide a day");
}

inline TemporalHistogram temporal_histogram(std::span<const AnnotationRecord> records, int bin_minutes, UtcOffset tz = {}) {
  require_bin_minutes(bin_minutes);
  TemporalHistogram h;
  h.bin_minutes = bin_minutes;
  for (const auto& r : records) h.bins[time_of_day_bin(r.timestamp, bin_minutes, tz)].push_back(r.image_id);
  return h;
}

// Round-robin over non-empty bins in ascending order; each bin is drawn
// uniformly without replacement.
inline std::vector<std::string> stratified_sample(const TemporalHistogram& hist, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::vector<std::string>> queues;
  for (const auto& [bin, ids] : hist.bins) {
    if (ids.empty()) continue;
    queues.push_back(ids);
    std::shuffle(queues.back().begin(), queues.back().end(), rng);
  }
  std::vector<std::string> out;
  std::vector<std::size_t> next(queues.size(), 0);
  bool progressed = true;
  while (out.size() < n && progressed) {
    progressed = false;
    for (std::size_t q = 0; q < queues.size() && out.size() < n; ++q) {
      if (next[q] < queues[q].size()) {
        out.push_back(queues[q][next[q]++]);
        progressed = true;
      }
    }
  }
  return out;
}

inline std::vector<std::string> stratified_sample(const TemporalHistogram& hist, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return stratified_sample(hist, n, rng);
}

// ---------------------------------------------------------------------------
// Training set construction

enum class Transform { none, hflip };

inline const char* to_string(Transform t) { return t == Transform::none ? "none" : "hflip"; }

// Time-stratified sampling for day sets; uniform sampling for night sets,
// whose IR-lit backgrounds barely change through the night.
enum class SamplingMode { day, night };

struct TrainingConfig {
  bool flip_augment = true;
  bool balance = true;
  SamplingMode mode = SamplingMode::day;
  int animal_bin_minutes = 15;
  int no_animal_bin_minutes = 3;
  UtcOffset tz;
  std::uint64_t seed = 0;
  int frame_width = 3264;        // needed to mirror box coordinates
  double holdout_fraction = 0.0; // share of source images assigned to split "test"
};

struct TrainingEntry {
  AnnotationRecord record;  // boxes already transformed
  Transform transform = Transform::none;
  std::string split = "train";
};

struct TrainingSetManifest {
  std::vector<TrainingEntry> entries;

  std::size_t count(Label l) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const TrainingEntry& e) { return e.record.label == l; }));
  }
};

namespace detail {

inline std::vector<std::string> uniform_sample(std::span<const AnnotationRecord> records, std::size_t n,
                                               std::mt19937_64& rng) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.image_id);
  std::shuffle(ids.begin(), ids.end(), rng);
  if (ids.size() > n) ids.resize(n);
  return ids;
}

}  // namespace detail

inline TrainingSetManifest build_training_set(std::span<const AnnotationRecord> records, const TrainingConfig& cfg) {
  if (records.empty()) throw ValidationError("cannot balance: no records");
  for (const auto& r : records)
    if (r.site_id != records.front().site_id)
      throw ValidationError("build_training_set: records span several sites ('" + records.front().site_id + "', '" +
                            r.site_id + "')");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    throw ValidationError("holdout fraction must lie in [0,1)");

  std::vector<AnnotationRecord> animals, diagnostic_empty, motion_empty;
  for (const auto& r : records) {
    if (r.label == Label::animal)
      animals.push_back(r);
    else if (r.capture_kind == CaptureKind::diagnostic)
      diagnostic_empty.push_back(r);
    else
      motion_empty.push_back(r);
  }
  const std::size_t n_animal = animals.size();
  const std::size_t n_empty = diagnostic_empty.size() + motion_empty.size();
  const std::size_t factor = cfg.flip_augment ? 2 : 1;

  std::size_t animal_sources = n_animal;
  std::size_t empty_target = n_empty;
  if (cfg.balance) {
    animal_sources = std::min(n_animal, n_empty / factor);
    if (animal_sources == 0)
      throw ValidationError("cannot balance: site '" + records.front().site_id + "' has " + std::to_string(n_animal) +
                            " Animal and " + std::to_string(n_empty) + " NoAnimal examples");
    empty_target = animal_sources * factor;
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::string> animal_ids, empty_ids;
  if (cfg.mode == SamplingMode::day) {
    animal_ids = stratified_sample(temporal_histogram(animals, cfg.animal_bin_minutes, cfg.tz), animal_sources, rng);
    empty_ids = stratified_sample(temporal_histogram(diagnostic_empty, cfg.no_animal_bin_minutes, cfg.tz), empty_target, rng);
    if (empty_ids.size() < empty_target) {
      auto more = stratified_sample(temporal_histogram(motion_empty, cfg.no_animal_bin_minutes, cfg.tz),
                                    empty_target - empty_ids.size(), rng);
      empty_ids.insert(empty_ids.end(), more.begin(), more.end());
    }
  } else {
    animal_ids = detail::uniform_sample(animals, animal_sources, rng);
    std::vector<AnnotationRecord> all_empty = diagnostic_empty;
    all_empty.insert(all_empty.end(), motion_empty.begin(), motion_empty.end());
    empty_ids = detail::uniform_sample(all_empty, empty_target, rng);
  }

  std::set<std::string> held_out;
  if (cfg.holdout_fraction > 0.0) {
    for (auto* ids : {&animal_ids, &empty_ids}) {
      std::vector<std::string> pool = *ids;
      std::shuffle(pool.begin(), pool.end(), rng);
      auto k = static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(pool.size())));
      held_out.insert(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(k, pool.size())));
    }
  }

  std::set<std::string> chosen(animal_ids.begin(), animal_ids.end());
  chosen.insert(empty_ids.begin(), empty_ids.end());

  // Output in input order: Animal entries (each followed by its flip), then NoAnimal.
  TrainingSetManifest out;
  for (Label pass : {Label::animal, Label::no_animal}) {
    for (const auto& r : records) {
      if (r.label != pass || !chosen.count(r.image_id)) continue;
      const std::string split = held_out.count(r.image_id) ? "test" : "train";
      out.entries.push_back({r, Transform::none, split});
      if (pass == Label::animal && cfg.flip_augment) {
        TrainingEntry flipped{r, Transform::hflip, split};
        for (auto& b : flipped.record.boxes) b = flip_box(b, cfg.frame_width);
        out.entries.push_back(std::move(flipped));
      }
    }
  }
  return out;
}

inline void write_training_manifest(std::ostream& out, const TrainingSetManifest& m) {
  std::vector<std::string> header = manifest_columns();
  header.push_back("transform");
  header.push_back("split");
  csv::write_row(out, header);
  for (const auto& e : m.entries) {
    auto emit = [&](const BoundingBox* b) {
      auto row = manifest_row(e.record, b);
      row.push_back(to_string(e.transform));
      row.push_back(e.split);
      csv::write_row(out, row);
    };
    if (e.record.boxes.empty()) {
      emit(nullptr);
    } else {
      for (const auto& b : e.record.boxes) emit(&b);
    }
  }
}

// ---------------------------------------------------------------------------
// Retention

enum class RetentionMode { center, containment };

inline double retention_rate(std::span<const BoundingBox> boxes, const CropWindow& window,
                             RetentionMode mode = RetentionMode::center) {
  if (boxes.empty()) throw ValidationError("retention_rate: no boxes");
  if (window.size < 1) throw ValidationError("retention_rate: invalid window");
  std::size_t kept = 0;
  for (const auto& b : boxes) {
    bool in = mode == RetentionMode::center ? window.contains_strictly(b.center()) : window.contains(b);
    kept += in ? 1 : 0;
  }
  return static_cast<double>(kept) / static_cast<double>(boxes.size());
}

inline double retention_rate(std::span<const AnnotationRecord> records, const CropWindow& window,
                             RetentionMode mode = RetentionMode::center) {
  std::vector<BoundingBox> boxes;
  for (const auto& r : records) boxes.insert(boxes.end(), r.boxes.begin(), r.boxes.end());
  return retention_rate(std::span<const BoundingBox>(boxes), window, mode);
}

inline bool retention_acceptable(double rate, double minimum = 0.90) { return rate >= minimum; }

}  // namespace trailcam
