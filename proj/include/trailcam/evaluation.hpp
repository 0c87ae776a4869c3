#pragma once

// Classification and detection scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trailcam/dataset.hpp"
#include "trailcam/image.hpp"

namespace trailcam {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  // Absent when the denominator is zero.
  std::optional<double> sensitivity() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  std::optional<double> specificity() const {
    if (tn + fp == 0) return std::nullopt;
    return static_cast<double>(tn) / static_cast<double>(tn + fp);
  }
  // Youden's J.
  std::optional<double> y_index() const {
    auto se = sensitivity();
    auto sp = specificity();
    if (!se || !sp) return std::nullopt;
    return *se + *sp - 1.0;
  }
  std::optional<double> accuracy() const {
    const auto total = tp + tn + fp + fn;
    if (total == 0) return std::nullopt;
    return static_cast<double>(tp + tn) / static_cast<double>(total);
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct LabelPair {
  Label predicted;
  Label truth;
};

inline ConfusionCounts confusion(std::span<const LabelPair> preds) {
  ConfusionCounts c;
  for (const auto& p : preds) {
    if (p.truth == Label::animal)
      (p.predicted == Label::animal ? c.tp : c.fn)++;
    else
      (p.predicted == Label::no_animal ? c.tn : c.fp)++;
  }
  return c;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
};

struct DetectionMatch {
  std::size_t est_index = 0;
  std::size_t gt_index = 0;
  double iou = 0.0;
};

struct DetectionOutcome {
  std::vector<DetectionMatch> matches;
  std::vector<std::size_t> fp_boxes;  // indices into the estimates
  std::vector<std::size_t> fn_boxes;  // indices into the ground truth
  bool true_negative = false;         // no ground truth and no estimates

  double avg_iou() const {
    if (matches.empty()) return 0.0;
    double s = 0.0;
    for (const auto& m : matches) s += m.iou;
    return s / static_cast<double>(matches.size());
  }
};

// Greedy matching by descending score (input order on equal scores); each
// estimate takes the unmatched ground-truth box of highest IoU and counts as a
// true positive only when that IoU exceeds the threshold.
inline DetectionOutcome match_detections(std::span<const ScoredBox> est, std::span<const BoundingBox> gt,
                                         double iou_threshold = 0.4) {
  for (const auto& e : est)
    if (!(e.score >= 0.0 && e.score <= 1.0)) throw ValidationError("detection score outside [0,1]");
  std::vector<std::size_t> order(est.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return est[a].score > est[b].score; });

  DetectionOutcome out;
  std::vector<bool> taken(gt.size(), false);
  for (std::size_t ei : order) {
    double best = 0.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
      if (taken[gi]) continue;
      const double v = iou(est[ei].box, gt[gi]);
      if (!best_gt || v > best) {
        best = v;
        best_gt = gi;
      }
    }
    if (best_gt && best > iou_threshold) {
      taken[*best_gt] = true;
      out.matches.push_back({ei, *best_gt, best});
    } else {
      out.fp_boxes.push_back(ei);
    }
  }
  for (std::size_t gi = 0; gi < gt.size(); ++gi)
    if (!taken[gi]) out.fn_boxes.push_back(gi);
  out.true_negative = gt.empty() && est.empty();
  return out;
}

struct DetectionMetrics {
  ConfusionCounts counts;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> avg_iou;  // absent without true positives
};

inline DetectionMetrics detection_metrics(const ConfusionCounts& counts, std::optional<double> avg_iou) {
  DetectionMetrics m;
  m.counts = counts;
  m.sensitivity = counts.sensitivity();
  m.specificity = counts.specificity();
  m.avg_iou = avg_iou;
  return m;
}

inline DetectionMetrics detection_metrics(std::span<const DetectionOutcome> outcomes) {
  if (outcomes.empty()) throw ValidationError("detection_metrics: no outcomes");
  ConfusionCounts c;
  double iou_sum = 0.0;
  for (const auto& o : outcomes) {
    c.tp += static_cast<std::int64_t>(o.matches.size());
    c.fp += static_cast<std::int64_t>(o.fp_boxes.size());
    c.fn += static_cast<std::int64_t>(o.fn_boxes.size());
    c.tn += o.true_negative ? 1 : 0;
    for (const auto& m : o.matches) iou_sum += m.iou;
  }
  std::optional<double> avg;
  if (c.tp > 0) avg = iou_sum / static_cast<double>(c.tp);
  return detection_metrics(c, avg);
}

// Compares a recomputed rate against a reported, rounded percentage.
// Returns a note when they disagree beyond the rounding granularity.
struct RoundingNote {
  std::string metric;
  double computed_percent = 0.0;
  double reported_percent = 0.0;
  std::string message;
};

inline std::optional<RoundingNote> check_reported_percent(const std::string& metric, double computed_fraction,
                                                          double reported_percent, double granularity_percent = 1.0) {
  const double computed = computed_fraction * 100.0;
  if (std::abs(computed - reported_percent) <= granularity_percent / 2.0 + 1e-9) return std::nullopt;
  RoundingNote n;
  n.metric = metric;
  n.computed_percent = computed;
  n.reported_percent = reported_percent;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: recomputed %.1f%% but reported %.1f%% (outside %.1f%% rounding)", metric.c_str(),
                computed, reported_percent, granularity_percent);
  n.message = buf;
  return n;
}

}  // namespace trailcam
