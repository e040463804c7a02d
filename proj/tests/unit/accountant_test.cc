// Copyright 2026 The dprlhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "dprlhf/accountant/accountant.h"
#include "dprlhf/common/error.h"

namespace dprlhf {
namespace {

// Independent oracle: log E_{z ~ N(0, s^2)}[((1 - q) + q exp((2z - 1) /
// (2 s^2)))^alpha] by adaptive Gauss-Kronrod in extended precision, shifted
// by the log-integrand maximum so that large orders stay representable.
double QuadratureLogMoment(double q, double sigma, double alpha) {
  using Real = long double;
  const Real s = sigma;
  const Real s2 = s * s;
  auto log_integrand = [&](Real z) {
    const Real log_mu0 = -z * z / (2 * s2) - std::log(s) - 0.5L * std::log(2 * M_PIl);
    const Real ratio = (1 - static_cast<Real>(q)) +
                       static_cast<Real>(q) * std::exp((2 * z - 1) / (2 * s2));
    return log_mu0 + static_cast<Real>(alpha) * std::log(ratio);
  };
  const Real lo = -40 * s;
  const Real hi = static_cast<Real>(alpha) + 40 * s;
  Real peak = log_integrand(lo);
  for (Real z = lo; z <= hi; z += s / 16) peak = std::max(peak, log_integrand(z));
  auto f = [&](Real z) { return std::exp(log_integrand(z) - peak); };
  Real total = 0;
  const Real width = s / 2;
  for (Real a = lo; a < hi; a += width) {
    total += boost::math::quadrature::gauss_kronrod<Real, 61>::integrate(
        f, a, std::min(a + width, hi), 8, 1e-14L);
  }
  return static_cast<double>(peak + std::log(total));
}

double OracleRdp(double q, double sigma, double alpha) {
  return QuadratureLogMoment(q, sigma, alpha) / (alpha - 1.0);
}

TEST(RdpTest, UnsubsampledClosedForm) {
  const std::vector<double> orders = {2.0};
  EXPECT_DOUBLE_EQ(RdpSubsampledGaussian(1.0, 1.0, orders).values[0], 1.0);
  const std::vector<double> grid = DefaultOrders();
  for (double sigma : {0.3, 0.9, 2.5}) {
    const RdpCurve c = RdpSubsampledGaussian(1.0, sigma, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      EXPECT_NEAR(c.values[i], grid[i] / (2 * sigma * sigma),
                  1e-12 * c.values[i]);
    }
  }
}

TEST(RdpTest, IntegerFormAtFullRateMatchesClosedForm) {
  // Drives the binomial expansion with q just below one.
  for (int alpha : {2, 5, 17}) {
    const double v = LogMomentSubsampledGaussian(1.0 - 1e-15, 1.3, alpha) / (alpha - 1);
    EXPECT_NEAR(v, alpha / (2 * 1.3 * 1.3), 1e-9);
  }
}

TEST(RdpTest, VanishesAsRateGoesToZero) {
  const std::vector<double> grid = DefaultOrders();
  std::vector<double> prev(grid.size(), INFINITY);
  for (double q : {1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12}) {
    const RdpCurve c = RdpSubsampledGaussian(q, 1.0, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      EXPECT_LE(c.values[i], prev[i]) << grid[i];
      prev[i] = c.values[i];
    }
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] <= 16.0) EXPECT_LT(prev[i], 1e-9) << grid[i];
  }
}

TEST(RdpTest, MatchesQuadratureAtReferencePoint) {
  const double oracle = OracleRdp(0.01, 1.0, 8.0);
  const std::vector<double> orders = {8.0};
  const double value = RdpSubsampledGaussian(0.01, 1.0, orders).values[0];
  EXPECT_NEAR(value, oracle, 1e-6 * oracle);
}

TEST(RdpTest, QuadratureGridAgreement) {
  struct Point {
    double q, sigma, alpha;
  };
  const std::vector<Point> grid = {
      {0.001, 0.6, 2.0},  {0.001, 1.0, 1.25}, {0.001, 2.0, 32.0},
      {0.01, 0.8, 3.5},   {0.01, 1.0, 8.0},   {0.01, 1.5, 1.75},
      {0.01, 4.0, 64.0},  {0.05, 0.7, 4.0},   {0.05, 1.2, 2.25},
      {0.05, 2.0, 16.0},  {0.1, 1.0, 5.0},    {0.1, 3.0, 4.75},
      {0.2, 0.9, 2.5},    {0.2, 2.0, 12.0},   {0.3, 1.1, 3.0},
      {0.5, 1.0, 1.5},    {0.5, 2.5, 20.0},   {0.7, 1.0, 6.0},
      {0.9, 1.5, 2.75},   {0.003906, 1.5625, 10.0},
  };
  for (const Point& p : grid) {
    const std::vector<double> orders = {p.alpha};
    const double value = RdpSubsampledGaussian(p.q, p.sigma, orders).values[0];
    const double oracle = OracleRdp(p.q, p.sigma, p.alpha);
    EXPECT_GE(value, oracle - 1e-6) << p.q << " " << p.sigma << " " << p.alpha;
    EXPECT_LE(std::abs(value - oracle), 0.1 * oracle)
        << p.q << " " << p.sigma << " " << p.alpha;
  }
}

TEST(RdpTest, CurveNonDecreasingInOrder) {
  const std::vector<double> grid = DefaultOrders();
  for (double q : {1e-4, 0.004, 0.1, 0.6}) {
    for (double sigma : {0.4, 1.0, 3.0}) {
      const RdpCurve c = RdpSubsampledGaussian(q, sigma, grid);
      for (std::size_t i = 1; i < c.values.size(); ++i) {
        EXPECT_GE(c.values[i], c.values[i - 1] * (1 - 1e-12))
            << q << " " << sigma << " " << grid[i];
      }
    }
  }
}

TEST(RdpTest, RejectsBadArguments) {
  const std::vector<double> orders = {2.0};
  const std::vector<double> bad_order = {1.0};
  EXPECT_THROW(RdpSubsampledGaussian(0.0, 1.0, orders), Error);
  EXPECT_THROW(RdpSubsampledGaussian(0.1, 0.0, orders), Error);
  EXPECT_THROW(RdpSubsampledGaussian(0.1, 1.0, bad_order), Error);
}

TEST(ComposeTest, StepsScaleValues) {
  const std::vector<double> grid = DefaultOrders();
  const RdpCurve c = RdpSubsampledGaussian(0.01, 1.0, grid);
  EXPECT_EQ(ComposeSteps(c, 1).values, c.values);
  const RdpCurve two = ComposeSteps(c, 2);
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    EXPECT_EQ(two.values[i], 2 * c.values[i]);
  }
}

TEST(ComposeTest, Associative) {
  const std::vector<double> grid = DefaultOrders();
  const RdpCurve c = RdpSubsampledGaussian(0.02, 0.9, grid);
  for (int a : {1, 3, 17, 250}) {
    for (int b : {1, 2, 99}) {
      const RdpCurve nested = ComposeSteps(ComposeSteps(c, a), b);
      const RdpCurve flat = ComposeSteps(c, static_cast<int64_t>(a) * b);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_NEAR(nested.values[i], flat.values[i], 1e-12 * flat.values[i]);
      }
    }
  }
}

TEST(ConversionTest, HandArithmetic) {
  RdpCurve c;
  c.orders = {2.0};
  c.values = {1.0};
  const Budget b = RdpToDp(c, std::exp(-1.0));
  EXPECT_NEAR(b.epsilon, 2.0, 1e-15);
  EXPECT_EQ(b.order, 2.0);
}

TEST(ConversionTest, MoreOrdersNeverIncreaseEpsilon) {
  const std::vector<double> grid = DefaultOrders();
  const RdpCurve full = ComposeSteps(RdpSubsampledGaussian(0.01, 1.0, grid), 1000);
  double prev = INFINITY;
  for (std::size_t k = 1; k <= grid.size(); ++k) {
    RdpCurve prefix;
    prefix.orders.assign(full.orders.begin(), full.orders.begin() + k);
    prefix.values.assign(full.values.begin(), full.values.begin() + k);
    const double eps = RdpToDp(prefix, 1e-5).epsilon;
    EXPECT_LE(eps, prev);
    prev = eps;
  }
}

TEST(ConversionTest, EmptyCurve) {
  try {
    RdpToDp(RdpCurve{}, 1e-5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyCurve);
  }
}

TEST(MonotonicityTest, EpsilonRespondsToEachParameter) {
  const double qs[] = {0.001, 0.01, 0.1};
  const double sigmas[] = {0.6, 1.0, 2.0};
  const int64_t steps[] = {10, 100, 1000};
  const double deltas[] = {1e-7, 1e-5, 1e-3};
  for (double q : qs) {
    for (double s : sigmas) {
      for (int64_t t : steps) {
        const double e = EpsilonFor(q, s, t, 1e-5).epsilon;
        EXPECT_GE(e, EpsilonFor(q, s * 1.1, t, 1e-5).epsilon);
        EXPECT_LE(e, EpsilonFor(std::min(1.0, q * 2), s, t, 1e-5).epsilon);
        EXPECT_LE(e, EpsilonFor(q, s, t * 2, 1e-5).epsilon);
        for (std::size_t i = 1; i < 3; ++i) {
          EXPECT_GE(EpsilonFor(q, s, t, deltas[i - 1]).epsilon,
                    EpsilonFor(q, s, t, deltas[i]).epsilon);
        }
      }
    }
  }
}

TEST(MonotonicityTest, ZeroNoiseIsInfinite) {
  EXPECT_TRUE(std::isinf(EpsilonFor(0.1, 0.0, 10, 1e-5).epsilon));
}

TEST(CalibrateTest, RoundTrip) {
  for (double target : {0.5, 2.0, 8.0}) {
    const double sigma = CalibrateSigma(0.01, 500, 1e-5, target);
    const double eps = EpsilonFor(0.01, sigma, 500, 1e-5).epsilon;
    EXPECT_LE(eps, target);
    EXPECT_GE(eps, 0.99 * target);
  }
}

TEST(CalibrateTest, MoreStepsNeedMoreNoise) {
  const double a = CalibrateSigma(0.004, 1000, 1e-5, 3.0);
  const double b = CalibrateSigma(0.004, 2000, 1e-5, 3.0);
  EXPECT_GT(b, a);
}

TEST(CalibrateTest, UnattainableTarget) {
  CalibrationBounds bounds;
  bounds.sigma_max = 0.5;
  try {
    CalibrateSigma(0.5, 10000, 1e-5, 0.01, bounds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnattainableTarget);
  }
}

TEST(StagesTest, PlainSum) {
  const std::vector<Budget> budgets = {{1.0, 1e-5, Stage::kSft, 0},
                                       {1.0, 1e-5, Stage::kRm, 0},
                                       {1.0, 1e-5, Stage::kPpo, 0}};
  const Budget total = ComposeStages(budgets);
  EXPECT_DOUBLE_EQ(total.epsilon, 3.0);
  EXPECT_EQ(total.delta, 1e-5);
}

TEST(StagesTest, SingleStageIdentityAndPermutation) {
  const std::vector<Budget> one = {{2.5, 1e-5, Stage::kRm, 3}};
  EXPECT_EQ(ComposeStages(one).epsilon, 2.5);
  std::vector<Budget> v = {{0.3, 1e-5, Stage::kSft, 0},
                           {1.7, 1e-5, Stage::kRm, 0},
                           {4.1, 1e-5, Stage::kPpo, 0}};
  const double base = ComposeStages(v).epsilon;
  std::sort(v.begin(), v.end(),
            [](const Budget& a, const Budget& b) { return a.epsilon > b.epsilon; });
  EXPECT_EQ(ComposeStages(v).epsilon, base);
}

TEST(StagesTest, MismatchedDelta) {
  const std::vector<Budget> v = {{1.0, 1e-5, Stage::kSft, 0},
                                 {1.0, 1e-6, Stage::kRm, 0}};
  try {
    ComposeStages(v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMismatchedDelta);
  }
}

}  // namespace
}  // namespace dprlhf
