#pragma once

// Pipeline configuration: a small TOML subset (tables, dotted table names,
// strings, numbers, booleans, flat arrays of numbers, # comments).
//
//   image_root = "images"
//   state_root = "states"
//   seed = 7
//   [drift]
//   threshold = 0.1
//   [sites.1]
//   fountain_center = [1632, 1224]
//   utc_offset = "+09:00"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "trailcam/clock.hpp"
#include "trailcam/error.hpp"
#include "trailcam/image.hpp"
#include "trailcam/similarity.hpp"

namespace trailcam {

using ConfigValue = std::variant<std::string, double, bool, std::vector<double>>;

// Flat "table.key" -> value map.
class ConfigTable {
 public:
  static ConfigTable parse(std::istream& in) {
    ConfigTable t;
    std::string line;
    std::string table;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(drop_comment(line));
      if (s.empty()) continue;
      auto fail = [&](const std::string& msg) {
        throw ValidationError("config line " + std::to_string(lineno) + ": " + msg);
      };
      if (s.front() == '[') {
        if (s.back() != ']') fail("unterminated table header");
        table = strip(s.substr(1, s.size() - 2));
        if (table.empty()) fail("empty table name");
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos) fail("expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string raw = strip(s.substr(eq + 1));
      if (key.empty()) fail("empty key");
      if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
      std::string full = table.empty() ? key : table + "." + key;
      if (t.values_.count(full)) fail("duplicate key '" + full + "'");
      auto v = parse_value(raw);
      if (!v) fail("cannot parse value for '" + full + "'");
      t.values_[full] = *v;
    }
    return t;
  }

  static ConfigTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    return parse(in);
  }

  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

  template <class T>
  std::optional<T> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (const T* v = std::get_if<T>(&it->second)) return *v;
    throw ValidationError("config key '" + key + "' has the wrong type");
  }

 private:
  static std::string strip(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::string drop_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::optional<double> number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::string clean;
    for (char c : s)
      if (c != '_') clean += c;
    std::istringstream is(clean);
    is.imbue(std::locale::classic());
    double v;
    if (!(is >> v)) return std::nullopt;
    char rest;
    if (is >> rest) return std::nullopt;
    return v;
  }

  static std::optional<ConfigValue> parse_value(const std::string& raw) {
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') return ConfigValue(raw.substr(1, raw.size() - 2));
    if (raw == "true") return ConfigValue(true);
    if (raw == "false") return ConfigValue(false);
    if (raw.front() == '[') {
      if (raw.back() != ']') return std::nullopt;
      std::vector<double> items;
      std::stringstream body(raw.substr(1, raw.size() - 2));
      std::string item;
      while (std::getline(body, item, ',')) {
        item = strip(item);
        if (item.empty()) continue;
        auto v = number(item);
        if (!v) return std::nullopt;
        items.push_back(*v);
      }
      return ConfigValue(items);
    }
    if (auto v = number(raw)) return ConfigValue(*v);
    return std::nullopt;
  }

  std::map<std::string, ConfigValue> values_;
};

struct SiteConfig {
  std::string id;
  std::optional<Point> fountain_center;  // estimated from annotations when absent
  UtcOffset tz;
};

struct PipelineConfig {
  std::map<std::string, SiteConfig> sites;
  int crop_size = 1500;
  double threshold = 0.1;
  int drift_window = 500;
  int drift_stride = 250;
  SimilarityParams similarity;
  DayNightThresholds day_night;
  std::string day_predictor = "oracle";
  std::string night_predictor = "oracle";
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::filesystem::path image_root = ".";
  std::filesystem::path state_root = "states";
  std::filesystem::path out_dir = "out";

  const SiteConfig& site(const std::string& id) const {
    auto it = sites.find(id);
    if (it == sites.end()) throw ValidationError("site '" + id + "' is not in the site registry");
    return it->second;
  }

  void validate() const {
    if (crop_size < 1) throw ValidationError("crop_size must be positive");
    if (!(threshold > 0.0)) throw ValidationError("threshold must be positive");
    if (jobs < 1) throw ValidationError("jobs must be >= 1");
    if (drift_window < 2 || drift_stride < 1) throw ValidationError("drift window must be >= 2 and stride >= 1");
    similarity.validate();
  }
};

inline PipelineConfig pipeline_config(const ConfigTable& t, const std::filesystem::path& base = {}) {
  PipelineConfig c;
  auto path = [&](const std::string& key, std::filesystem::path& dst) {
    if (auto v = t.get<std::string>(key)) {
      std::filesystem::path p(*v);
      dst = p.is_relative() && !base.empty() ? base / p : p;
    }
  };
  auto integer = [&](const std::string& key) -> std::optional<std::int64_t> {
    auto v = t.get<double>(key);
    if (!v) return std::nullopt;
    if (*v != static_cast<double>(static_cast<std::int64_t>(*v)) || *v < 0)
      throw ValidationError("config key '" + key + "' must be a non-negative integer");
    return static_cast<std::int64_t>(*v);
  };
  path("image_root", c.image_root);
  path("state_root", c.state_root);
  path("out_dir", c.out_dir);
  if (auto v = integer("seed")) c.seed = static_cast<std::uint64_t>(*v);
  if (auto v = integer("jobs")) c.jobs = static_cast<unsigned>(*v);
  if (auto v = integer("crop_size")) c.crop_size = static_cast<int>(*v);
  if (auto v = t.get<double>("drift.threshold")) c.threshold = *v;
  if (auto v = integer("drift.window")) c.drift_window = static_cast<int>(*v);
  if (auto v = integer("drift.stride")) c.drift_stride = static_cast<int>(*v);
  if (auto v = t.get<double>("similarity.c1")) c.similarity.c1 = *v;
  if (auto v = t.get<double>("similarity.c2")) c.similarity.c2 = *v;
  if (auto v = t.get<double>("similarity.c3")) c.similarity.c3 = *v;
  if (auto v = t.get<double>("day_night.saturation_min")) c.day_night.saturation_min = *v;
  if (auto v = t.get<double>("day_night.hue_min_degrees")) c.day_night.hue_min_degrees = *v;
  if (auto v = t.get<std::string>("predictor.day")) c.day_predictor = *v;
  if (auto v = t.get<std::string>("predictor.night")) c.night_predictor = *v;

  for (const auto& [key, value] : t.values()) {
    if (key.rfind("sites.", 0) != 0) continue;
    auto dot = key.rfind('.');
    if (dot <= 6) throw ValidationError("config key '" + key + "' outside a [sites.<id>] table");
    std::string id = key.substr(6, dot - 6);
    std::string field = key.substr(dot + 1);
    SiteConfig& s = c.sites[id];
    s.id = id;
    if (field == "fountain_center") {
      auto xy = t.get<std::vector<double>>(key);
      if (xy->size() != 2) throw ValidationError("sites." + id + ".fountain_center needs two numbers");
      s.fountain_center = Point{(*xy)[0], (*xy)[1]};
    } else if (field == "utc_offset") {
      s.tz = UtcOffset::parse(*t.get<std::string>(key));
    } else {
      throw ValidationError("unknown site field '" + field + "'");
    }
  }
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return pipeline_config(ConfigTable::load(path), path.parent_path());
}

}  // namespace trailcam
