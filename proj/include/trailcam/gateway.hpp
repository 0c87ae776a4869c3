#pragma once

// Classifier gateway: routes a frame to the day or night predictor after the
// matching preprocessing, and hosts the built-in predictors (manifest oracle,
// background-disturbance baseline) plus the external JSON-lines predictor.
//
// Wire protocol v1, one JSON object per line over the child's stdin/stdout:
//   {"op":"hello","version":1}  -> {"op":"hello","version":1,"capabilities":[...]}
//   {"op":"classify","id":..,"image":..} -> {"id":..,"p_animal":..,"p_no_animal":..}
//   {"op":"detect","id":..,"image":..}   -> {"id":..,"boxes":[{"x","y","w","h","score"}]}
//   {"op":"bye"}
// Replies may arrive out of order and are correlated by id.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "trailcam/dataset.hpp"
#include "trailcam/drift.hpp"
#include "trailcam/error.hpp"
#include "trailcam/evaluation.hpp"
#include "trailcam/image.hpp"
#include "trailcam/io.hpp"
#include "trailcam/similarity.hpp"
#include "trailcam/subprocess.hpp"

namespace trailcam {

struct Prediction {
  double p_animal = 0.0;
  double p_no_animal = 1.0;
  Label label = Label::no_animal;
  std::string predictor_id;
};

// Validates a probability pair and renormalises it to sum to one.
// p_animal == 0.5 resolves to Animal.
inline Prediction make_prediction(double p_animal, double p_no_animal, std::string predictor_id,
                                  double sum_tolerance = 1e-3) {
  if (!(p_animal >= 0.0 && p_animal <= 1.0) || !(p_no_animal >= 0.0 && p_no_animal <= 1.0))
    throw ValidationError("probabilities must lie in [0,1]");
  const double sum = p_animal + p_no_animal;
  if (std::abs(sum - 1.0) > sum_tolerance)
    throw ValidationError("probabilities sum to " + csv::format_number(sum) + ", not 1");
  Prediction p;
  p.p_animal = p_animal / sum;
  p.p_no_animal = 1.0 - p.p_animal;
  p.label = p.p_animal >= 0.5 ? Label::animal : Label::no_animal;
  p.predictor_id = std::move(predictor_id);
  return p;
}

// ---------------------------------------------------------------------------
// Derived image ids. Augmented and disturbed copies carry the source id plus
// a tag, and their ground truth follows from the transform.

inline std::string flipped_id(const std::string& source) { return source + "@hflip"; }
inline std::string disturbed_id(const std::string& source, std::size_t template_index) {
  return source + "@insert" + std::to_string(template_index + 1);
}

// ---------------------------------------------------------------------------

struct PreparedFrame {
  const TrailImage* source = nullptr;
  DayNight period = DayNight::day;
  TrailImage region;       // day: fountain crop; night: full frame
  TrailImage model_input;  // region resized to the model side
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual const std::string& id() const = 0;
  virtual Prediction predict(const PreparedFrame& frame) = 0;
};

struct RouteConfig {
  Point fountain_center{1632.0, 1224.0};
  int crop_size = 1500;
  int model_side = 299;
  DayNightThresholds day_night;
};

inline PreparedFrame prepare_frame(const TrailImage& img, const RouteConfig& cfg) {
  PreparedFrame f;
  f.source = &img;
  f.period = classify_day_night(img, cfg.day_night);
  f.region = f.period == DayNight::day ? crop_window(img, cfg.fountain_center, cfg.crop_size) : img;
  f.model_input = resize(f.region, cfg.model_side);
  return f;
}

inline Prediction route(const TrailImage& img, Predictor& day, Predictor& night, const RouteConfig& cfg = {}) {
  PreparedFrame f = prepare_frame(img, cfg);
  Predictor& target = f.period == DayNight::day ? day : night;
  try {
    return target.predict(f);
  } catch (const PredictorError&) {
    throw;
  } catch (const std::exception& e) {
    throw PredictorError(target.id(), e.what());
  }
}

// ---------------------------------------------------------------------------
// Ground-truth oracle

class OraclePredictor final : public Predictor {
 public:
  explicit OraclePredictor(std::span<const AnnotationRecord> manifest, std::string id = "oracle") : id_(std::move(id)) {
    for (const auto& r : manifest) labels_[r.image_id] = r.label;
  }

  const std::string& id() const override { return id_; }

  Label truth(const std::string& image_id) const {
    auto at = image_id.rfind('@');
    if (at != std::string::npos) {
      const std::string tag = image_id.substr(at + 1);
      const std::string base = image_id.substr(0, at);
      if (tag == "hflip") return truth(base);
      if (tag.rfind("insert", 0) == 0) {
        truth(base);  // unknown sources are still errors
        return Label::animal;
      }
    }
    auto it = labels_.find(image_id);
    if (it == labels_.end()) throw ValidationError("oracle: unknown image id '" + image_id + "'");
    return it->second;
  }

  Prediction predict_id(const std::string& image_id) const {
    const bool animal = truth(image_id) == Label::animal;
    return make_prediction(animal ? 1.0 : 0.0, animal ? 0.0 : 1.0, id_);
  }

  Prediction predict(const PreparedFrame& frame) override { return predict_id(frame.source->id); }

 private:
  std::string id_;
  std::unordered_map<std::string, Label> labels_;
};

// ---------------------------------------------------------------------------
// Background-disturbance baseline

struct BaselineConfig {
  int window = 100;
  int stride = 50;
  int region = 700;
  double tau = 0.5;
  SimilarityParams params;
};

struct BaselineScore {
  double min_structure = 1.0;
  Prediction prediction;
};

// Lowest window structure value between the central region of a cropped luma
// frame and the state mean, mapped to p_animal = clamp((tau - m) / tau, 0, 1).
inline BaselineScore baseline_score(const TrailImage& cropped_gray, const MeanImage& state_mean, const BaselineConfig& cfg,
                                    const std::string& predictor_id = "baseline") {
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw ValidationError("baseline tau must lie in (0,1]");
  if (cropped_gray.width != state_mean.width() || cropped_gray.height != state_mean.height())
    throw ValidationError("baseline: frame '" + cropped_gray.id + "' is " + std::to_string(cropped_gray.width) + "x" +
                          std::to_string(cropped_gray.height) + ", state mean is " + std::to_string(state_mean.width()) +
                          "x" + std::to_string(state_mean.height()));
  const int side = std::min({cfg.region, cropped_gray.width, cropped_gray.height});
  const int x0 = (cropped_gray.width - side) / 2;
  const int y0 = (cropped_gray.height - side) / 2;
  const std::vector<double> mean = state_mean.mean();
  PlaneView<double> bg{mean.data(), state_mean.width(), state_mean.height(), state_mean.width()};
  StructureMatrix m = structure_matrix(plane(cropped_gray).sub(x0, y0, side, side), bg.sub(x0, y0, side, side),
                                       std::min(cfg.window, side), cfg.stride, cfg.params);
  BaselineScore s;
  s.min_structure = *std::min_element(m.values.begin(), m.values.end());
  const double p = std::clamp((cfg.tau - s.min_structure) / cfg.tau, 0.0, 1.0);
  s.prediction = make_prediction(p, 1.0 - p, predictor_id);
  return s;
}

inline Prediction predict_baseline(const TrailImage& cropped, const BackgroundState* state, const BaselineConfig& cfg = {},
                                   const std::string& predictor_id = "baseline") {
  if (state == nullptr) throw ValidationError("baseline: missing background state");
  if (!cropped.site_id.empty() && cropped.site_id != state->site_id)
    throw ValidationError("baseline: frame of site '" + cropped.site_id + "' against state of site '" + state->site_id + "'");
  return baseline_score(to_grayscale(cropped), state->mean, cfg, predictor_id).prediction;
}

class BaselinePredictor final : public Predictor {
 public:
  BaselinePredictor(BackgroundState state, BaselineConfig cfg = {}, std::string id = "baseline")
      : state_(std::move(state)), cfg_(cfg), id_(std::move(id)) {}

  const std::string& id() const override { return id_; }
  Prediction predict(const PreparedFrame& frame) override { return predict_baseline(frame.region, &state_, cfg_, id_); }
  const BackgroundState& state() const { return state_; }

 private:
  BackgroundState state_;
  BaselineConfig cfg_;
  std::string id_;
};

// ---------------------------------------------------------------------------
// External predictor over the JSON-lines protocol

inline constexpr int kProtocolVersion = 1;

inline Prediction parse_classify_reply(const nlohmann::json& j, const std::string& predictor_id) {
  if (!j.contains("p_animal") || !j["p_animal"].is_number()) throw ProtocolError("reply lacks numeric 'p_animal'");
  if (!j.contains("p_no_animal") || !j["p_no_animal"].is_number()) throw ProtocolError("reply lacks numeric 'p_no_animal'");
  return make_prediction(j["p_animal"].get<double>(), j["p_no_animal"].get<double>(), predictor_id);
}

inline std::vector<ScoredBox> parse_detect_reply(const nlohmann::json& j) {
  if (!j.contains("boxes") || !j["boxes"].is_array()) throw ProtocolError("reply lacks array 'boxes'");
  std::vector<ScoredBox> out;
  for (const auto& b : j["boxes"]) {
    for (const char* k : {"x", "y", "w", "h", "score"})
      if (!b.contains(k) || !b[k].is_number()) throw ProtocolError(std::string("box lacks numeric '") + k + "'");
    ScoredBox s;
    s.box = {b["x"].get<double>(), b["y"].get<double>(), b["w"].get<double>(), b["h"].get<double>(), ""};
    s.score = b["score"].get<double>();
    out.push_back(s);
  }
  return out;
}

class ExternalPredictor final : public Predictor {
 public:
  struct Request {
    std::string id;
    std::string image;  // absolute path
  };

  // Starts the command and completes the handshake.
  ExternalPredictor(const std::string& command, std::string id, std::filesystem::path scratch_dir = {},
                    std::chrono::milliseconds timeout = std::chrono::seconds(10))
      : process_(command), id_(std::move(id)), scratch_(std::move(scratch_dir)), timeout_(timeout) {
    send({{"op", "hello"}, {"version", kProtocolVersion}});
    nlohmann::json reply = receive();
    if (reply.value("op", std::string()) != "hello") throw ProtocolError("handshake reply is not 'hello'");
    if (!reply.contains("version") || !reply["version"].is_number_integer() ||
        reply["version"].get<int>() != kProtocolVersion)
      throw ProtocolError("unsupported protocol version");
    if (!reply.contains("capabilities") || !reply["capabilities"].is_array())
      throw ProtocolError("handshake reply lacks 'capabilities'");
    for (const auto& c : reply["capabilities"])
      if (c.is_string()) capabilities_.push_back(c.get<std::string>());
    if (!supports("classify")) throw ProtocolError("predictor does not advertise 'classify'");
  }

  ExternalPredictor(const ExternalPredictor&) = delete;
  ExternalPredictor& operator=(const ExternalPredictor&) = delete;

  ~ExternalPredictor() override {
    try {
      shutdown();
    } catch (...) {
    }
  }

  const std::string& id() const override { return id_; }

  // Requests sent ahead of their replies in classify_many. The default of one
  // keeps the channel strictly serial.
  void set_max_in_flight(std::size_t n) { max_in_flight_ = std::max<std::size_t>(1, n); }

  bool supports(const std::string& capability) const {
    return std::find(capabilities_.begin(), capabilities_.end(), capability) != capabilities_.end();
  }

  Prediction classify(const std::string& request_id, const std::string& image_path) {
    return classify_many(std::vector<Request>{{request_id, image_path}}).front();
  }

  // Pipelines the requests and matches replies by id; results follow
  // request order.
  std::vector<Prediction> classify_many(std::span<const Request> requests) {
    auto replies = exchange("classify", requests);
    std::vector<Prediction> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(parse_classify_reply(replies.at(r.id), id_));
    return out;
  }

  std::vector<ScoredBox> detect(const std::string& request_id, const std::string& image_path) {
    if (!supports("detect")) throw ProtocolError("predictor '" + id_ + "' does not advertise 'detect'");
    std::vector<Request> one{{request_id, image_path}};
    auto replies = exchange("detect", one);
    return parse_detect_reply(replies.at(request_id));
  }

  // Writes the model input to the scratch directory and classifies it.
  Prediction predict(const PreparedFrame& frame) override {
    if (scratch_.empty()) throw ValidationError("external predictor '" + id_ + "' has no scratch directory");
    const std::string request_id = frame.source->id.empty() ? "frame" + std::to_string(counter_) : frame.source->id;
    std::filesystem::path file = scratch_ / (id_ + "_" + std::to_string(counter_++) + ".png");
    save_image(file, frame.model_input);
    return classify(request_id, std::filesystem::absolute(file).string());
  }

  void shutdown() {
    if (closed_) return;
    closed_ = true;
    try {
      send({{"op", "bye"}});
    } catch (const IoError&) {
    }
    process_.terminate(std::chrono::seconds(2));
  }

 private:
  void send(const nlohmann::json& j) { process_.write_line(j.dump()); }

  nlohmann::json receive() {
    std::optional<std::string> line;
    try {
      line = process_.read_line(timeout_);
    } catch (const IoError& e) {
      throw PredictorError(id_, std::string(e.what()) + " after " + std::to_string(timeout_.count()) + " ms");
    }
    if (!line) throw ProtocolError("predictor '" + id_ + "' closed its output");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(*line);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("malformed reply line: " + line->substr(0, 200));
    }
    if (!j.is_object()) throw ProtocolError("reply is not a JSON object");
    return j;
  }

  std::map<std::string, nlohmann::json> exchange(const char* op, std::span<const Request> requests) {
    if (closed_) throw ProtocolError("predictor '" + id_ + "' is shut down");
    std::map<std::string, nlohmann::json> pending;
    for (const auto& r : requests) {
      if (pending.count(r.id)) throw ValidationError("duplicate request id '" + r.id + "'");
      pending[r.id] = nullptr;
    }
    // at most max_in_flight_ unanswered requests, so neither pipe can fill up
    std::size_t sent = 0;
    std::size_t outstanding = 0;
    while (sent < requests.size() || outstanding > 0) {
      while (sent < requests.size() && outstanding < max_in_flight_) {
        const auto& r = requests[sent++];
        send({{"op", op}, {"id", r.id}, {"image", r.image}});
        ++outstanding;
      }
      nlohmann::json reply = receive();
      if (!reply.contains("id") || !reply["id"].is_string()) throw ProtocolError("reply lacks string 'id'");
      const std::string rid = reply["id"].get<std::string>();
      auto it = pending.find(rid);
      if (it == pending.end() || !it->second.is_null()) throw ProtocolError("unexpected reply id '" + rid + "'");
      if (reply.contains("error"))
        throw PredictorError(id_, "request '" + rid + "' failed: " + reply["error"].dump());
      it->second = std::move(reply);
      --outstanding;
    }
    return pending;
  }

  LineProcess process_;
  std::string id_;
  std::filesystem::path scratch_;
  std::chrono::milliseconds timeout_;
  std::vector<std::string> capabilities_;
  std::size_t counter_ = 0;
  std::size_t max_in_flight_ = 1;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Binding specifications: "oracle", "baseline" or an external command line.

enum class PredictorKind { oracle, baseline, external };

struct PredictorBinding {
  PredictorKind kind = PredictorKind::oracle;
  std::string command;  // external only
  BaselineConfig baseline;

  static PredictorBinding parse(const std::string& spec) {
    PredictorBinding b;
    if (spec == "oracle") {
      b.kind = PredictorKind::oracle;
    } else if (spec == "baseline") {
      b.kind = PredictorKind::baseline;
    } else if (spec.empty()) {
      throw ValidationError("empty predictor binding");
    } else {
      b.kind = PredictorKind::external;
      b.command = spec;
    }
    return b;
  }
};

}  // namespace trailcam
