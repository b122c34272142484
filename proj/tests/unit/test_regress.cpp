#include <scout/regress.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace scout;

namespace {

std::vector<std::pair<double, double>> pairs_of(const FitDataset& data) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : data) out.emplace_back(p.aux_temp, p.norm_prob);
  return out;
}

PolyFit cubic(double c0, double c1, double c2, double c3, double lo, double hi) {
  PolyFit f;
  f.coefficients = {c0, c1, c2, c3};
  f.degree = 3;
  f.temp_min = lo;
  f.temp_max = hi;
  return f;
}

} // namespace

TEST(FitPoly, RecoversLine) {
  FitDataset data;
  for (double t : {0.5, 1.0, 1.5, 2.0, 2.5}) data.push_back({t, 0.9 - 0.2 * t});
  const auto fit = fit_poly(data, 1);
  EXPECT_NEAR(fit.coefficients[0], 0.9, 1e-12);
  EXPECT_NEAR(fit.coefficients[1], -0.2, 1e-12);
  EXPECT_EQ(fit.degree, 1);
}

TEST(FitPoly, InterpolatesFourPoints) {
  const FitDataset data{{0.5, 0.8}, {1.0, 0.6}, {2.0, 0.3}, {4.0, 0.1}};
  const auto fit = fit_poly(data);
  EXPECT_EQ(fit.degree, 3);
  for (const auto& p : data) EXPECT_NEAR(evaluate(fit, p.aux_temp), p.norm_prob, 1e-10);
  EXPECT_NEAR(residual_sum_squares(fit, data), 0.0, 1e-18);
}

TEST(FitPoly, MatchesHighPrecisionLeastSquares) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> temp(0.05, 10.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int rep = 0; rep < 20; ++rep) {
    FitDataset data;
    for (int i = 0; i < 20; ++i) {
      const double t = temp(rng);
      data.push_back({t, 0.7 - 0.05 * t + 0.001 * t * t + noise(rng)});
    }
    const auto fit = fit_poly(data);
    const auto expected = oracle::least_squares(pairs_of(data), 3);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(fit.coefficients[i], expected[i], 1e-8 * std::max(1.0, std::abs(expected[i])));
    }
  }
}

TEST(FitPoly, ResidualIsMinimal) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FitDataset data;
  for (int i = 0; i < 30; ++i) data.push_back({0.1 + 5.0 * unit(rng), unit(rng)});
  const auto fit = fit_poly(data);
  const double best = residual_sum_squares(fit, data);
  for (std::size_t i = 0; i < 4; ++i) {
    for (double d : {-1e-4, 1e-4}) {
      auto moved = fit;
      moved.coefficients[i] += d;
      EXPECT_GE(residual_sum_squares(moved, data), best);
    }
  }
}

TEST(FitPoly, DegreeDropsWithFewTemperatures) {
  const FitDataset two{{1.0, 0.5}, {1.0, 0.6}, {2.0, 0.4}};
  EXPECT_EQ(fit_poly(two).degree, 1);
  const FitDataset one{{1.0, 0.5}, {1.0, 0.6}};
  try {
    fit_poly(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateData);
  }
  EXPECT_THROW(fit_poly(FitDataset{}), Error);
  EXPECT_THROW(fit_poly(two, 4), Error);
}

TEST(FitPoly, RejectsNonFinite) {
  const FitDataset bad{{1.0, std::nan("")}, {2.0, 0.1}, {3.0, 0.2}};
  EXPECT_THROW(fit_poly(bad), Error);
}

TEST(FitPoly, StableUnderRefit) {
  FitDataset data;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 200; ++i) data.push_back({0.05 + 9.95 * unit(rng), 0.9 - 0.08 * unit(rng) * 9});
  const auto a = fit_poly(data);
  data.push_back({5.0, predict(a, 5.0)});
  const auto b = fit_poly(data);
  for (double t = 0.1; t < 10.0; t += 0.5) EXPECT_NEAR(predict(a, t), predict(b, t), 1e-3);
}

TEST(FitPoly, LogScaleRecoversExponential) {
  FitDataset data;
  for (double t = 0.5; t <= 5.0; t += 0.5) data.push_back({t, std::exp(-0.3 * t)});
  const auto fit = fit_poly(data, 3, std::nullopt, FitScale::LogProbability);
  EXPECT_EQ(fit.scale, FitScale::LogProbability);
  EXPECT_NEAR(fit.coefficients[0], 0.0, 1e-10);
  EXPECT_NEAR(fit.coefficients[1], -0.3, 1e-10);
  EXPECT_NEAR(predict(fit, 2.25), std::exp(-0.675), 1e-10);
  EXPECT_NEAR(invert(fit, std::exp(-0.9), 0.5, 5.0), 3.0, 1e-8);
  EXPECT_NEAR(residual_sum_squares(fit, data), 0.0, 1e-18);
}

TEST(Predict, ClampsValueAndTemperature) {
  const auto fit = cubic(1.5, -1.0, 0.0, 0.0, 0.1, 3.0);
  const auto high = predict_checked(fit, 0.2);
  EXPECT_EQ(high.value, 1.0);
  EXPECT_TRUE(high.value_clamped);
  const auto low = predict_checked(fit, 3.0);
  EXPECT_EQ(low.value, 0.0);
  const auto beyond = predict_checked(fit, 50.0);
  EXPECT_TRUE(beyond.temp_clamped);
  EXPECT_EQ(beyond.value, low.value);
  EXPECT_TRUE(predict_checked(fit, -1.0).temp_clamped);
  EXPECT_NEAR(predict(fit, 1.0), 0.5, 1e-15);
}

TEST(Predict, HornerMatchesNaive) {
  const auto fit = cubic(0.3, -0.02, 0.004, -0.0002, 0.05, 10.0);
  for (double t = 0.05; t <= 10.0; t += 0.37) {
    const double naive = 0.3 - 0.02 * t + 0.004 * t * t - 0.0002 * t * t * t;
    EXPECT_NEAR(evaluate(fit, t), naive, 1e-14);
  }
}

TEST(Invert, LinearRoot) {
  const auto fit = cubic(1.0, -0.1, 0.0, 0.0, 0.05, 10.0);
  EXPECT_NEAR(invert(fit, 0.5, 0.05, 10.0), 5.0, 1e-12);
}

TEST(Invert, UnreachableTargetGoesToNearestBound) {
  const auto fit = cubic(1.0, -0.1, 0.0, 0.0, 0.05, 10.0);
  EXPECT_EQ(invert(fit, 0.99, 0.5, 4.0), 0.5);
  EXPECT_EQ(invert(fit, 0.01, 0.5, 4.0), 4.0);
}

TEST(Invert, SeveralRootsPickLowest) {
  // (t-1)(t-4)(t-9) + 0.5 crosses 0.5 at 1, 4 and 9.
  const auto fit = cubic(-36.0 + 0.5, 49.0, -14.0, 1.0, 0.05, 10.0);
  EXPECT_NEAR(invert(fit, 0.5, 0.05, 10.0), 1.0, 1e-9);
}

TEST(Invert, PlantedCubicRoots) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> root(0.2, 9.8);
  for (int rep = 0; rep < 100; ++rep) {
    const double r = root(rng);
    // Monotone cubic through (r, 0.4): p(t) = 0.4 - 0.05 (t - r) - 0.001 (t - r)^3
    const double a = -0.05, b = -0.001;
    const auto fit = cubic(0.4 - a * r - b * r * r * r, a + 3 * b * r * r, -3 * b * r, b, 0.05, 10.0);
    EXPECT_NEAR(invert(fit, 0.4, 0.05, 10.0), r, 1e-9);
  }
}

TEST(Invert, RejectsBadBounds) {
  const auto fit = cubic(0.5, 0.0, 0.0, 0.0, 0.05, 10.0);
  EXPECT_THROW(invert(fit, 0.5, 0.0, 1.0), Error);
  EXPECT_THROW(invert(fit, 0.5, 2.0, 1.0), Error);
  EXPECT_EQ(invert(fit, 0.5, 0.05, 10.0), 0.05);
}

TEST(PredictedRange, IncludesInteriorExtremum) {
  // 0.5 - 0.04 (t - 3)^2 peaks at t = 3.
  const auto fit = cubic(0.5 - 0.36, 0.24, -0.04, 0.0, 0.05, 10.0);
  const auto [lo, hi] = predicted_range(fit, 1.0, 6.0);
  EXPECT_NEAR(hi, 0.5, 1e-12);
  EXPECT_NEAR(lo, 0.5 - 0.04 * 9, 1e-12);
}
