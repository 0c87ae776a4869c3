#pragma once

// Student-t distribution via the regularized incomplete beta function and the
// one-sided t-test on 0/1-coded experiment outcomes.

#include <cmath>
#include <cstdint>
#include <limits>

#include "trailcam/error.hpp"

namespace trailcam::stats {

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 20000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ValidationError("incomplete_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// P(T <= t) for Student's t with `df` degrees of freedom.
inline double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("student_t_cdf: degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  if (t == 0.0) return 0.5;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

// Inverse CDF by bisection; monotone and robust for every df.
inline double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("student_t_quantile: p must lie in (0,1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, df);
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct VarianceCheck {
  double variance = 0.0;
  bool ok = false;
};

// Normal approximation to the binomial is acceptable when n p (1-p) > 10.
inline VarianceCheck normal_approx_check(std::int64_t n, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_approx_check: p must lie in (0,1)");
  VarianceCheck out;
  out.variance = static_cast<double>(n) * p * (1.0 - p);
  out.ok = out.variance > 10.0;
  return out;
}

struct ExperimentStats {
  std::int64_t n = 0;
  std::int64_t successes = 0;
  double x_bar = 0.0;
  double mu0 = 0.0;
  double s = 0.0;          // sample standard deviation (n-1 divisor)
  double t_stat = 0.0;     // +/-inf when degenerate
  double p_value = 0.0;    // P(T_{n-1} <= t): H0 rate >= mu0 vs Ha rate < mu0
  double upper_bound = 0.0;
  double confidence = 0.95;
  bool degenerate = false; // successes in {0, n}: zero sample variance
  VarianceCheck variance_check;
};

inline ExperimentStats one_sided_t_test(std::int64_t n, std::int64_t successes, double mu0, double confidence = 0.95) {
  if (n < 2) throw ValidationError("one_sided_t_test: need at least 2 samples");
  if (successes < 0 || successes > n) throw ValidationError("one_sided_t_test: successes must lie in [0, n]");
  if (!(mu0 > 0.0 && mu0 < 1.0)) throw ValidationError("one_sided_t_test: mu0 must lie in (0,1)");
  ExperimentStats st;
  st.n = n;
  st.successes = successes;
  st.mu0 = mu0;
  st.confidence = confidence;
  st.variance_check = normal_approx_check(n, mu0);
  const double nn = static_cast<double>(n);
  st.x_bar = static_cast<double>(successes) / nn;
  if (successes == 0 || successes == n) {
    st.degenerate = true;
    st.s = 0.0;
    st.t_stat = st.x_bar > mu0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    st.p_value = st.x_bar > mu0 ? 1.0 : 0.0;
    st.upper_bound = st.x_bar;
    return st;
  }
  st.s = std::sqrt(nn * st.x_bar * (1.0 - st.x_bar) / (nn - 1.0));
  const double se = st.s / std::sqrt(nn);
  const double df = nn - 1.0;
  st.t_stat = (st.x_bar - mu0) / se;
  st.p_value = student_t_cdf(st.t_stat, df);
  st.upper_bound = st.x_bar + student_t_quantile(confidence, df) * se;
  return st;
}

}  // namespace trailcam::stats
