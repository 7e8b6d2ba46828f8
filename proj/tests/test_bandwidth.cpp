#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kemvol/bandwidth.hpp"
#include "kemvol/phantom.hpp"

using namespace kemvol;

namespace {

// SPE curve that follows the two-term expansion exactly plus an offset.
SpeCurve exact_curve(const std::vector<double>& chs, std::size_t N, double C1, double C2,
                     double offset) {
  const double scale = std::pow(static_cast<double>(N), -4.0 / 7.0);
  SpeCurve curve;
  for (const double c : chs) {
    const double spe = offset + C1 * scale * std::pow(c, 4) / 4.0 + C2 * scale / std::pow(c, 3);
    curve.points.push_back({Pilot{c, c / std::pow(static_cast<double>(N), 1.0 / 7.0), 3}, spe});
  }
  return curve;
}

// Ordinary 3x3 solve of [1, x1, x2] regression by Cramer's rule.
std::array<double, 3> ols_with_intercept(const SpeCurve& curve, std::size_t N) {
  const double scale = std::pow(static_cast<double>(N), -4.0 / 7.0);
  double A[3][3] = {};
  double b[3] = {};
  for (const auto& p : curve.points) {
    const double row[3] = {1.0, scale * std::pow(p.pilot.Ch, 4) / 4.0,
                           scale / std::pow(p.pilot.Ch, 3)};
    for (int i = 0; i < 3; ++i) {
      b[i] += row[i] * p.spe;
      for (int j = 0; j < 3; ++j) A[i][j] += row[i] * row[j];
    }
  }
  auto det3 = [](double m[3][3]) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  const double D = det3(A);
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    double Mc[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) Mc[i][j] = j == c ? b[i] : A[i][j];
    out[c] = det3(Mc) / D;
  }
  return out;
}

}  // namespace

TEST(Schedule, RegPilots) {
  const BandwidthPlan plan = default_reg_schedule(Dims{512, 512, 100}, 1000000);
  ASSERT_EQ(plan.G(), 5);
  EXPECT_EQ(plan.method, SelectionMethod::reg);
  EXPECT_EQ(plan.pilots.front().s, 3);
  EXPECT_EQ(plan.pilots.back().s, 11);
  EXPECT_NEAR(plan.pilots.front().h, 0.005859375, 1e-15);
  // (3/512) * 10^(6/7)
  EXPECT_NEAR(plan.pilots.front().Ch, 0.04217, 5e-6);
  EXPECT_NEAR(std::pow(1e6, 1.0 / 7.0), 7.1969, 5e-5);
  for (const auto& p : plan.pilots) {
    EXPECT_EQ(p.s % 2, 1);
    EXPECT_NEAR(p.h, p.s / 512.0, 1e-15);
    EXPECT_NEAR(p.Ch, p.h * bandwidth_scale(plan.N), 1e-15);
  }
}

TEST(Schedule, CvPilots) {
  const std::size_t N = 54321;
  const BandwidthPlan plan = default_cv_schedule(Dims{64, 64, 64}, N);
  ASSERT_EQ(plan.G(), 25);
  const auto smallest =
      std::min_element(plan.pilots.begin(), plan.pilots.end(),
                       [](const Pilot& a, const Pilot& b) { return a.h < b.h; });
  EXPECT_NEAR(smallest->h, 0.3 * 3 / 512.0, 1e-15);
  EXPECT_EQ(smallest->s, 3);
  for (const auto& p : plan.pilots) EXPECT_NEAR(p.Ch, p.h * std::pow(double(N), 1.0 / 7.0), 1e-14);
  EXPECT_THROW(bandwidth_scale(0), std::invalid_argument);
}

TEST(SelectCv, PicksSmallestSpe) {
  SpeCurve c;
  c.points = {{Pilot{0.1, 0, 3}, 0.5}, {Pilot{0.2, 0, 3}, 0.3}, {Pilot{0.3, 0, 3}, 0.4}};
  EXPECT_EQ(select_cv(c), 1u);
  SpeCurve single;
  single.points = {{Pilot{0.7, 0, 3}, 2.0}};
  EXPECT_EQ(select_cv(single), 0u);
  EXPECT_THROW(select_cv(SpeCurve{}), std::invalid_argument);
}

TEST(SelectCv, InvariantToPilotOrder) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SpeCurve c;
  for (int g = 0; g < 25; ++g) c.points.push_back({Pilot{0.01 * (g + 1), 0, 3}, u(gen)});
  const double winner = c.points[select_cv(c)].pilot.Ch;
  for (int rep = 0; rep < 10; ++rep) {
    std::shuffle(c.points.begin(), c.points.end(), gen);
    EXPECT_EQ(c.points[select_cv(c)].pilot.Ch, winner);
  }
}

TEST(SelectCv, TiesGoToSmallerConstant) {
  SpeCurve c;
  c.points = {{Pilot{0.4, 0, 3}, 0.2}, {Pilot{0.2, 0, 3}, 0.2}, {Pilot{0.3, 0, 3}, 0.5}};
  EXPECT_EQ(select_cv(c), 1u);
}

TEST(SelectCv, MonotoneCurveNeverPicksLargestSpe) {
  SpeCurve c;
  for (int g = 0; g < 5; ++g) c.points.push_back({Pilot{0.1 * (g + 1), 0, 3}, 1.0 - 0.1 * g});
  EXPECT_EQ(select_cv(c), 4u);
}

TEST(SelectReg, RecoversExactConstants) {
  const std::size_t N = 1000000;
  const SpeCurve curve = exact_curve({0.6, 0.9, 1.2, 1.6, 2.2}, N, 1.0, 3.0, 0.25);
  const RegFit fit = select_reg(curve, N);
  ASSERT_FALSE(fit.fell_back) << fit.warning;
  EXPECT_NEAR(fit.C1, 1.0, 1e-10);
  EXPECT_NEAR(fit.C2, 3.0, 3e-10);
  EXPECT_NEAR(fit.Ch, std::pow(9.0, 1.0 / 7.0), 1e-10);
  EXPECT_NEAR(fit.Ch, 1.368738, 1e-6);
}

TEST(SelectReg, ThreePilotsInterpolateLikeDirectSolve) {
  // Three pilots: centered OLS equals the 3x3 intercept regression, which
  // interpolates any three points.
  const std::size_t N = 250000;
  SpeCurve curve;
  const double spe[3] = {0.031, 0.027, 0.0295};
  const double ch[3] = {0.5, 0.9, 1.4};
  for (int g = 0; g < 3; ++g) curve.points.push_back({Pilot{ch[g], 0, 3}, spe[g]});
  const auto direct = ols_with_intercept(curve, N);
  const RegFit fit = select_reg(curve, N);
  ASSERT_FALSE(fit.fell_back) << fit.warning;
  EXPECT_NEAR(fit.C1 / direct[1], 1.0, 1e-8);
  EXPECT_NEAR(fit.C2 / direct[2], 1.0, 1e-8);
  EXPECT_NEAR(fit.Ch, std::pow(3.0 * direct[2] / direct[1], 1.0 / 7.0), 1e-8);
}

TEST(SelectReg, OffsetDoesNotMatter) {
  const std::size_t N = 1000000;
  const std::vector<double> chs{0.6, 0.9, 1.2, 1.6, 2.2};
  const RegFit a = select_reg(exact_curve(chs, N, 2.0, 5.0, 0.0), N);
  const RegFit b = select_reg(exact_curve(chs, N, 2.0, 5.0, 123.0), N);
  EXPECT_NEAR(a.Ch, b.Ch, 1e-8);
}

TEST(SelectReg, TwoPilotsAreSingularAfterCentering) {
  const std::size_t N = 1000000;
  const SpeCurve curve = exact_curve({0.8, 1.6}, N, 1.0, 3.0, 0.0);
  const RegFit fit = select_reg(curve, N);
  EXPECT_TRUE(fit.fell_back);
  EXPECT_NE(fit.warning.find("singular"), std::string::npos);
  EXPECT_EQ(fit.Ch, curve.points[select_cv(curve)].pilot.Ch);
}

TEST(SelectReg, RepeatedPilotIsSingular) {
  SpeCurve c;
  for (int g = 0; g < 4; ++g) c.points.push_back({Pilot{0.5, 0, 3}, 0.1 * g});
  EXPECT_TRUE(select_reg(c, 1000).fell_back);
}

TEST(SelectReg, NegativeConstantFallsBackToCv) {
  // SPE still decreasing at the largest pilot: no interior minimum.
  SpeCurve c;
  const double chs[5] = {0.03, 0.05, 0.08, 0.1, 0.12};
  const double spe[5] = {0.0427, 0.0386, 0.0370, 0.0364, 0.0362};
  for (int g = 0; g < 5; ++g) c.points.push_back({Pilot{chs[g], 0, 3}, spe[g]});
  const RegFit fit = select_reg(c, 209715);
  EXPECT_TRUE(fit.fell_back);
  EXPECT_LT(fit.C1, 0.0);
  EXPECT_EQ(fit.Ch, 0.12);
}

TEST(FilterSize, SmallestOddCoveringSpanClamped) {
  const Dims d{64, 32, 16};
  EXPECT_EQ(filter_size_for(0.01, d), 3);        // 0.64 voxels -> clamp up
  EXPECT_EQ(filter_size_for(5.0 / 64, d), 5);    // exactly 5
  EXPECT_EQ(filter_size_for(5.2 / 64, d), 7);
  EXPECT_EQ(filter_size_for(6.0 / 64, d), 7);
  EXPECT_EQ(filter_size_for(0.5, d), 11);        // 32 voxels -> clamp down
  EXPECT_EQ(filter_size_for(0.5, d, 3, 41), 33);
  EXPECT_THROW(filter_size_for(0.0, d), std::invalid_argument);
}

TEST(Spe, WinnerAndJsonShape) {
  PhantomSpec spec;
  spec.dims = Dims{16, 16, 16};
  spec.seed = 3;
  const Phantom ph = make_phantom(spec);
  const Volume3D y = normalize_to_unit(ph.volume);
  const auto [train, test] = split_train_test(spec.dims, 0.8, 2);
  FitConfig base;
  base.max_iter = 5;
  BandwidthPlan plan = default_reg_schedule(spec.dims, train.count());
  plan.pilots = {plan.pilots[0], plan.pilots[2], plan.pilots[4]};
  plan.method = SelectionMethod::cv;
  const BandwidthSelection sel = select_bandwidth(y, train, test, plan, base);
  ASSERT_EQ(sel.curve.points.size(), 3u);
  const auto best = std::min_element(sel.curve.points.begin(), sel.curve.points.end(),
                                     [](const SpePoint& a, const SpePoint& b) { return a.spe < b.spe; });
  EXPECT_EQ(sel.Ch, best->pilot.Ch);
  EXPECT_EQ(sel.h, best->pilot.h);
  EXPECT_EQ(sel.N, train.count());
  for (const auto& p : sel.curve.points) {
    EXPECT_NEAR(p.spe, spe(y, train, test, p.pilot, base), 1e-15);
  }
  const auto j = to_json(sel);
  EXPECT_EQ(j["method"], "CV");
  EXPECT_EQ(j["pilots"].size(), 3u);
  EXPECT_TRUE(j["pilots"][0].contains("spe"));
  EXPECT_EQ(j["selected"]["Ch"], sel.Ch);
}

TEST(Spe, EmptyTestSetThrows) {
  const Dims d{4, 4, 4};
  SampleMask none = SampleMask::full(d);
  std::fill(none.included.begin(), none.included.end(), 0);
  Volume3D y(d, 0.5);
  y[0] = 0.0;
  y[1] = 1.0;
  y[2] = 0.25;
  EXPECT_THROW(spe(y, SampleMask::full(d), none, Pilot{0.1, 0.1, 3}, FitConfig{}), std::invalid_argument);
}
