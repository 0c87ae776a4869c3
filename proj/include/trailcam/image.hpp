#pragma once

// Image representation and the geometric/photometric preprocessing used by
// every later stage: luma conversion, day/night routing, fountain cropping,
// bilinear resizing, horizontal flips and streaming mean images.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trailcam/error.hpp"

namespace trailcam {

enum class CaptureKind { motion, diagnostic };
enum class DayNight { day, night };

inline const char* to_string(CaptureKind k) { return k == CaptureKind::motion ? "motion" : "diagnostic"; }
inline const char* to_string(DayNight d) { return d == DayNight::day ? "day" : "night"; }

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

// Half-open pixel rectangle [x, x+w) x [y, y+h).
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  std::string class_name;

  Point center() const { return {x + w / 2.0, y + h / 2.0}; }
  double area() const { return w * h; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct TrailImage {
  std::string id;
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> pixels;  // row-major, interleaved channels, in [0,1]
  std::int64_t timestamp = 0; // seconds since epoch (UTC)
  std::string site_id;
  CaptureKind capture_kind = CaptureKind::motion;

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }

  // Same metadata, fresh zeroed buffer of the requested geometry.
  TrailImage reshaped(int w, int h, int ch) const {
    TrailImage out;
    out.id = id;
    out.timestamp = timestamp;
    out.site_id = site_id;
    out.capture_kind = capture_kind;
    out.width = w;
    out.height = h;
    out.channels = ch;
    out.pixels.assign(static_cast<std::size_t>(w) * h * ch, 0.0f);
    return out;
  }

  static TrailImage filled(int w, int h, int ch, float value) {
    TrailImage out;
    out.width = w;
    out.height = h;
    out.channels = ch;
    out.pixels.assign(static_cast<std::size_t>(w) * h * ch, value);
    return out;
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw ValidationError("image '" + id + "': empty geometry");
    if (channels != 1 && channels != 3)
      throw ValidationError("image '" + id + "': channels must be 1 or 3");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
      throw ValidationError("image '" + id + "': pixel count does not match geometry");
    for (float v : pixels)
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image '" + id + "': intensity outside [0,1]");
    if (timestamp <= 0) throw ValidationError("image '" + id + "': timestamp must be positive");
  }
};

// Read-only view of a single-channel plane with an explicit row stride.
template <class T>
struct PlaneView {
  const T* data = nullptr;
  int width = 0;
  int height = 0;
  int stride = 0;

  T operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * stride + x]; }
  PlaneView sub(int x, int y, int w, int h) const {
    return {data + static_cast<std::size_t>(y) * stride + x, w, h, stride};
  }
  std::size_t size() const { return static_cast<std::size_t>(width) * height; }
};

inline PlaneView<float> plane(const TrailImage& img) {
  if (img.channels != 1) throw ValidationError("image '" + img.id + "': expected a single-channel image");
  return {img.pixels.data(), img.width, img.height, img.width};
}

// ---------------------------------------------------------------------------
// Luma

// ITU-R BT.601 weights.
inline TrailImage to_grayscale(const TrailImage& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw ValidationError("to_grayscale: channels must be 1 or 3");
  TrailImage out = img.reshaped(img.width, img.height, 1);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &img.pixels[3 * i];
    double luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    out.pixels[i] = static_cast<float>(std::clamp(luma, 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Day / night

struct Hsl {
  double hue = 0.0;  // degrees in [0,360); 0 for achromatic pixels
  double saturation = 0.0;
  double lightness = 0.0;
};

inline Hsl rgb_to_hsl(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsl out;
  out.lightness = (mx + mn) / 2.0;
  if (delta <= 0.0) return out;
  out.saturation = delta / (1.0 - std::abs(2.0 * out.lightness - 1.0));
  double h;
  if (mx == r) {
    h = std::fmod((g - b) / delta, 6.0);
  } else if (mx == g) {
    h = (b - r) / delta + 2.0;
  } else {
    h = (r - g) / delta + 4.0;
  }
  h *= 60.0;
  if (h < 0.0) h += 360.0;
  out.hue = h;
  return out;
}

struct DayNightThresholds {
  double saturation_min = 0.05;
  double hue_min_degrees = 10.0;
};

struct HslMeans {
  double hue = 0.0;
  double saturation = 0.0;
};

inline HslMeans mean_hsl(const TrailImage& img) {
  HslMeans m;
  if (img.channels != 3) return m;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &img.pixels[3 * i];
    Hsl hsl = rgb_to_hsl(p[0], p[1], p[2]);
    m.hue += hsl.hue;
    m.saturation += hsl.saturation;
  }
  if (n > 0) {
    m.hue /= static_cast<double>(n);
    m.saturation /= static_cast<double>(n);
  }
  return m;
}

// Monochrome (IR) frames are always night.
inline DayNight classify_day_night(const TrailImage& img, const DayNightThresholds& th = {}) {
  if (img.channels != 3) return DayNight::night;
  HslMeans m = mean_hsl(img);
  if (m.saturation < th.saturation_min || m.hue < th.hue_min_degrees) return DayNight::night;
  return DayNight::day;
}

// ---------------------------------------------------------------------------
// Cropping

struct CropWindow {
  int origin_x = 0;
  int origin_y = 0;
  int size = 1500;

  // Strict interior test used by the retention criterion.
  bool contains_strictly(Point p) const {
    return p.x > origin_x && p.x < origin_x + size && p.y > origin_y && p.y < origin_y + size;
  }
  bool contains(const BoundingBox& b) const {
    return b.x >= origin_x && b.y >= origin_y && b.x + b.w <= origin_x + size && b.y + b.h <= origin_y + size;
  }
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

// Places a size x size window centred on `center`, clamped inside the frame.
inline CropWindow place_window(int width, int height, Point center, int size) {
  if (size < 1) throw ValidationError("crop window size must be positive");
  if (size > width || size > height)
    throw ValidationError("crop window of size " + std::to_string(size) + " does not fit a " + std::to_string(width) +
                          "x" + std::to_string(height) + " image");
  const int half = size / 2;
  const int cx = static_cast<int>(std::lround(center.x));
  const int cy = static_cast<int>(std::lround(center.y));
  CropWindow w;
  w.size = size;
  w.origin_x = std::clamp(cx - half, 0, width - size);
  w.origin_y = std::clamp(cy - half, 0, height - size);
  return w;
}

inline TrailImage crop(const TrailImage& img, const CropWindow& w) {
  if (w.origin_x < 0 || w.origin_y < 0 || w.origin_x + w.size > img.width || w.origin_y + w.size > img.height)
    throw ValidationError("crop window lies outside image '" + img.id + "'");
  TrailImage out = img.reshaped(w.size, w.size, img.channels);
  const std::size_t row = static_cast<std::size_t>(w.size) * img.channels;
  for (int y = 0; y < w.size; ++y) {
    auto src = img.pixels.begin() + static_cast<std::ptrdiff_t>(img.index(w.origin_x, w.origin_y + y));
    std::copy(src, src + static_cast<std::ptrdiff_t>(row), out.pixels.begin() + static_cast<std::ptrdiff_t>(y * row));
  }
  return out;
}

inline TrailImage crop_window(const TrailImage& img, Point center, int size) {
  return crop(img, place_window(img.width, img.height, center, size));
}

// Centroid of the box centres falling in the densest cell of a square grid.
// Ties go to the smallest (row, column) cell.
inline Point estimate_fountain_center(std::span<const BoundingBox> boxes, double bin_size = 50.0) {
  if (boxes.empty()) throw ValidationError("no activity evidence: at least one bounding box is required");
  struct Cell {
    std::size_t count = 0;
    double sx = 0.0;
    double sy = 0.0;
  };
  // keyed (row, col) so map order is the tie-break order
  std::map<std::pair<long, long>, Cell> cells;
  for (const auto& b : boxes) {
    Point c = b.center();
    auto key = std::make_pair(static_cast<long>(std::floor(c.y / bin_size)), static_cast<long>(std::floor(c.x / bin_size)));
    Cell& cell = cells[key];
    ++cell.count;
    cell.sx += c.x;
    cell.sy += c.y;
  }
  const Cell* best = nullptr;
  for (const auto& [key, cell] : cells)
    if (best == nullptr || cell.count > best->count) best = &cell;
  return {best->sx / static_cast<double>(best->count), best->sy / static_cast<double>(best->count)};
}

// ---------------------------------------------------------------------------
// Resizing

// Bilinear interpolation with pixel-centre alignment and edge replication.
inline TrailImage resize(const TrailImage& img, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1) throw ValidationError("resize: target side must be >= 1");
  if (new_width == img.width && new_height == img.height) return img;
  TrailImage out = img.reshaped(new_width, new_height, img.channels);
  const double sx_scale = static_cast<double>(img.width) / new_width;
  const double sy_scale = static_cast<double>(img.height) / new_height;
  for (int y = 0; y < new_height; ++y) {
    double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(img.height - 1));
    int y0 = static_cast<int>(std::floor(sy));
    int y1 = std::min(y0 + 1, img.height - 1);
    double fy = sy - y0;
    for (int x = 0; x < new_width; ++x) {
      double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(img.width - 1));
      int x0 = static_cast<int>(std::floor(sx));
      int x1 = std::min(x0 + 1, img.width - 1);
      double fx = sx - x0;
      for (int c = 0; c < img.channels; ++c) {
        double top = img.at(x0, y0, c) + fx * (img.at(x1, y0, c) - img.at(x0, y0, c));
        double bottom = img.at(x0, y1, c) + fx * (img.at(x1, y1, c) - img.at(x0, y1, c));
        double v = top + fy * (bottom - top);
        out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

inline TrailImage resize(const TrailImage& img, int side) { return resize(img, side, side); }

// ---------------------------------------------------------------------------
// Flip augmentation

inline BoundingBox flip_box(const BoundingBox& b, int width) {
  BoundingBox out = b;
  out.x = width - b.x - b.w;
  return out;
}

inline std::pair<TrailImage, std::vector<BoundingBox>> flip_horizontal(const TrailImage& img,
                                                                       std::span<const BoundingBox> boxes) {
  TrailImage out = img.reshaped(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
  std::vector<BoundingBox> flipped;
  flipped.reserve(boxes.size());
  for (const auto& b : boxes) flipped.push_back(flip_box(b, img.width));
  return {std::move(out), std::move(flipped)};
}

// ---------------------------------------------------------------------------
// Mean images

class MeanImage {
 public:
  MeanImage() = default;
  MeanImage(int width, int height)
      : width_(width), height_(height), sum_(static_cast<std::size_t>(width) * height, 0.0) {
    if (width < 1 || height < 1) throw ValidationError("mean image geometry must be positive");
  }

  // Rebuilds an accumulator from a persisted mean.
  static MeanImage from_mean(int width, int height, std::span<const double> mean, std::size_t count) {
    MeanImage m(width, height);
    if (mean.size() != m.sum_.size()) throw ValidationError("mean image buffer does not match geometry");
    if (count < 1) throw ValidationError("mean image count must be >= 1");
    for (std::size_t i = 0; i < mean.size(); ++i) m.sum_[i] = mean[i] * static_cast<double>(count);
    m.count_ = count;
    return m;
  }

  void accumulate(const TrailImage& img) {
    if (img.channels != 1) throw ValidationError("accumulate_mean: image '" + img.id + "' is not single-channel");
    if (img.width != width_ || img.height != height_)
      throw ValidationError("accumulate_mean: image '" + img.id + "' is " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + ", accumulator is " + std::to_string(width_) + "x" +
                            std::to_string(height_));
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += img.pixels[i];
    ++count_;
  }

  std::vector<double> mean() const {
    if (count_ == 0) throw ValidationError("mean image has no accumulated frames");
    std::vector<double> out(sum_.size());
    const double n = static_cast<double>(count_);
    for (std::size_t i = 0; i < sum_.size(); ++i) out[i] = sum_[i] / n;
    return out;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t count() const { return count_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> sum_;
  std::size_t count_ = 0;
};

inline MeanImage& accumulate_mean(MeanImage& acc, const TrailImage& img) {
  acc.accumulate(img);
  return acc;
}

}  // namespace trailcam
