#pragma once

// Structural similarity machinery: the SSIM structure term for one window,
// whole-image SSIM, the windowed structure matrix between two mean images
// and the Retraining Trigger Index (RTI) summarising it.
//
// Window statistics are population statistics computed on values taken
// relative to the window's first pixel. This makes an exactly representable
// additive shift leave every statistic bit-identical, and computing
// sigma_x * sigma_y as sqrt(var_x * var_y) makes s(x, x) exactly 1.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "trailcam/error.hpp"
#include "trailcam/image.hpp"

namespace trailcam {

struct SimilarityParams {
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  double c3 = 0.03 * 0.03 / 2.0;

  void validate() const {
    if (!(c1 >= 0.0 && c2 >= 0.0 && c3 >= 0.0)) throw ValidationError("similarity constants must be >= 0");
  }
};

struct WindowStats {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
  double cov = 0.0;
};

template <class TX, class TY>
WindowStats window_stats(PlaneView<TX> x, PlaneView<TY> y) {
  if (x.width != y.width || x.height != y.height)
    throw ValidationError("window dimension mismatch: " + std::to_string(x.width) + "x" + std::to_string(x.height) +
                          " vs " + std::to_string(y.width) + "x" + std::to_string(y.height));
  const std::size_t n = x.size();
  if (n == 0) throw ValidationError("empty window");
  const double rx = static_cast<double>(x(0, 0));
  const double ry = static_cast<double>(y(0, 0));

  double sx = 0.0, sy = 0.0;
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c) {
      sx += static_cast<double>(x(c, r)) - rx;
      sy += static_cast<double>(y(c, r)) - ry;
    }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double mx = sx * inv_n;
  const double my = sy * inv_n;

  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c) {
      const double ex = (static_cast<double>(x(c, r)) - rx) - mx;
      const double ey = (static_cast<double>(y(c, r)) - ry) - my;
      vx += ex * ex;
      vy += ey * ey;
      cxy += ex * ey;
    }
  WindowStats st;
  st.mean_x = rx + mx;
  st.mean_y = ry + my;
  st.var_x = vx * inv_n;
  st.var_y = vy * inv_n;
  st.cov = cxy * inv_n;
  return st;
}

// (cov + C3) / (sigma_x sigma_y + C3). A vanishing denominator (both windows
// flat and C3 == 0) yields 1.
inline double structure_term(const WindowStats& st, double c3) {
  const double denom = std::sqrt(st.var_x * st.var_y) + c3;
  if (denom == 0.0) return 1.0;
  return (st.cov + c3) / denom;
}

template <class TX, class TY>
double ssim_structure(PlaneView<TX> x, PlaneView<TY> y, const SimilarityParams& params = {}) {
  if (x.size() < 2) throw ValidationError("ssim_structure: window needs at least 2 pixels");
  return structure_term(window_stats(x, y), params.c3);
}

inline double ssim_structure(const TrailImage& x, const TrailImage& y, const SimilarityParams& params = {}) {
  return ssim_structure(plane(x), plane(y), params);
}

struct SsimComponents {
  double luminance = 1.0;
  double contrast = 1.0;
  double structure = 1.0;
  double value() const { return luminance * contrast * structure; }
};

template <class TX, class TY>
SsimComponents ssim_components(PlaneView<TX> x, PlaneView<TY> y, const SimilarityParams& params = {}) {
  const WindowStats st = window_stats(x, y);
  auto ratio = [](double num, double den) { return den == 0.0 ? 1.0 : num / den; };
  const double sxy = std::sqrt(st.var_x * st.var_y);
  SsimComponents out;
  out.luminance = ratio(2.0 * st.mean_x * st.mean_y + params.c1, st.mean_x * st.mean_x + st.mean_y * st.mean_y + params.c1);
  out.contrast = ratio(2.0 * sxy + params.c2, st.var_x + st.var_y + params.c2);
  out.structure = structure_term(st, params.c3);
  return out;
}

// Whole-image SSIM with global statistics (no sliding kernel).
template <class TX, class TY>
double ssim_full(PlaneView<TX> x, PlaneView<TY> y, const SimilarityParams& params = {}) {
  return ssim_components(x, y, params).value();
}

inline double ssim_full(const TrailImage& x, const TrailImage& y, const SimilarityParams& params = {}) {
  return ssim_full(plane(x), plane(y), params);
}

// ---------------------------------------------------------------------------

struct StructureMatrix {
  int rows = 0;
  int cols = 0;
  int window_size = 500;
  int stride = 250;
  std::vector<double> values;  // row-major

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

inline int window_count(int side, int window, int stride) { return (side - window) / stride + 1; }

template <class TA, class TB>
StructureMatrix structure_matrix(PlaneView<TA> a, PlaneView<TB> b, int window = 500, int stride = 250,
                                 const SimilarityParams& params = {}) {
  if (a.width != b.width || a.height != b.height) throw ValidationError("structure_matrix: image dimensions differ");
  if (stride < 1) throw ValidationError("structure_matrix: stride must be >= 1");
  if (window < 1 || window > a.width || window > a.height)
    throw ValidationError("structure_matrix: window " + std::to_string(window) + " larger than image " +
                          std::to_string(a.width) + "x" + std::to_string(a.height));
  StructureMatrix m;
  m.window_size = window;
  m.stride = stride;
  m.rows = window_count(a.height, window, stride);
  m.cols = window_count(a.width, window, stride);
  m.values.resize(static_cast<std::size_t>(m.rows) * m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const int x0 = c * stride;
      const int y0 = r * stride;
      m.values[static_cast<std::size_t>(r) * m.cols + c] =
          ssim_structure(a.sub(x0, y0, window, window), b.sub(x0, y0, window, window), params);
    }
  return m;
}

inline StructureMatrix structure_matrix(const MeanImage& a, const MeanImage& b, int window = 500, int stride = 250,
                                        const SimilarityParams& params = {}) {
  if (a.width() != b.width() || a.height() != b.height())
    throw ValidationError("structure_matrix: mean images differ in size");
  const std::vector<double> ma = a.mean();
  const std::vector<double> mb = b.mean();
  PlaneView<double> va{ma.data(), a.width(), a.height(), a.width()};
  PlaneView<double> vb{mb.data(), b.width(), b.height(), b.width()};
  return structure_matrix(va, vb, window, stride, params);
}

// Population standard deviation of the matrix entries.
inline double rti(std::span<const double> values) {
  if (values.empty()) throw ValidationError("rti: empty matrix");
  const double ref = values.front();
  double s = 0.0;
  for (double v : values) s += v - ref;
  const double mean = s / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) {
    const double e = (v - ref) - mean;
    ss += e * e;
  }
  return std::sqrt(ss / static_cast<double>(values.size()));
}

inline double rti(const StructureMatrix& m) { return rti(std::span<const double>(m.values)); }

}  // namespace trailcam
