#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "trailcam/stats.hpp"

using namespace trailcam;
using namespace trailcam::stats;

using oracle::t_cdf;

TEST(StudentT, MatchesQuadratureOracle) {
  for (double df : {5.0, 30.0, 1189.0, 5105.0})
    for (int i = 0; i <= 100; ++i) {
      const double t = -5.0 + 0.1 * i;
      ASSERT_NEAR(student_t_cdf(t, df), t_cdf(t, df), 1e-6) << "df=" << df << " t=" << t;
    }
}

TEST(StudentT, SymmetryAndKnownQuantiles) {
  EXPECT_DOUBLE_EQ(student_t_cdf(0.0, 7), 0.5);
  EXPECT_NEAR(student_t_cdf(1.3, 9) + student_t_cdf(-1.3, 9), 1.0, 1e-14);
  EXPECT_NEAR(student_t_quantile(0.95, 5), 2.015048, 1e-5);
  EXPECT_NEAR(student_t_quantile(0.95, 30), 1.697261, 1e-5);
  EXPECT_NEAR(student_t_cdf(student_t_quantile(0.9, 12), 12), 0.9, 1e-10);
}

TEST(TTest, TruePositiveCounts) {
  auto st = one_sided_t_test(1190, 1133, 0.95);
  EXPECT_NEAR(st.p_value, 0.63, 0.01);
  EXPECT_NEAR(st.upper_bound, 0.962, 0.001);
  EXPECT_FALSE(st.degenerate);
  auto lower = one_sided_t_test(1190, 1133, 0.94);
  EXPECT_NEAR(lower.p_value, 0.97, 0.01);
}

TEST(TTest, TrueNegativeCounts) {
  auto st = one_sided_t_test(1702, 1690, 0.95);
  EXPECT_GE(st.p_value, 0.999);
  EXPECT_NEAR(st.upper_bound, 0.996, 0.001);
}

TEST(TTest, PValueIncreasesAsMu0Falls) {
  double prev = 0.0;
  for (double mu0 = 0.99; mu0 > 0.90; mu0 -= 0.01) {
    double p = one_sided_t_test(1190, 1133, mu0).p_value;
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(TTest, HandComputedStatistic) {
  // 8 of 10: x_bar 0.8, s = sqrt(10 * 0.16 / 9)
  auto st = one_sided_t_test(10, 8, 0.9);
  const double s = std::sqrt(10 * 0.16 / 9);
  EXPECT_NEAR(st.s, s, 1e-15);
  EXPECT_NEAR(st.t_stat, (0.8 - 0.9) / (s / std::sqrt(10.0)), 1e-12);
  EXPECT_NEAR(st.p_value, t_cdf(st.t_stat, 9), 1e-9);
}

TEST(TTest, DegenerateSamples) {
  auto all = one_sided_t_test(50, 50, 0.95);
  EXPECT_TRUE(all.degenerate);
  EXPECT_EQ(all.p_value, 1.0);
  EXPECT_EQ(all.upper_bound, 1.0);
  EXPECT_TRUE(std::isinf(all.t_stat));
  auto none = one_sided_t_test(50, 0, 0.95);
  EXPECT_EQ(none.p_value, 0.0);
}

TEST(TTest, RejectsBadInput) {
  EXPECT_THROW(one_sided_t_test(1, 1, 0.9), ValidationError);
  EXPECT_THROW(one_sided_t_test(10, 11, 0.9), ValidationError);
  EXPECT_THROW(one_sided_t_test(10, 5, 1.0), ValidationError);
}

TEST(NormalApprox, FieldTrialVariances) {
  auto tp = normal_approx_check(1190, 0.95);
  auto tn = normal_approx_check(1702, 0.95);
  EXPECT_EQ(std::round(tp.variance * 10) / 10, 56.5);
  EXPECT_EQ(std::round(tn.variance * 10) / 10, 80.8);
  EXPECT_TRUE(tp.ok);
  EXPECT_TRUE(tn.ok);
  EXPECT_FALSE(normal_approx_check(100, 0.95).ok);  // 4.75
  EXPECT_FALSE(normal_approx_check(40, 0.5).ok);    // exactly 10 is not enough
}
