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


#include "dprlhf/accountant/accountant.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dprlhf/common/error.h"

namespace dprlhf {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double LogAdd(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

// log(exp(a) - exp(b)) for a >= b.
double LogSub(double a, double b) {
  if (b == kNegInf) return a;
  if (a <= b) return kNegInf;
  return b + std::log(std::expm1(a - b));
}

double LogErfc(double x) {
  if (x < 25.0) return std::log(std::erfc(x));
  // Asymptotic expansion of erfc for large arguments.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) -
                        15.0 / (8.0 * x2 * x2 * x2);
  return -x2 - std::log(x) - 0.5 * std::log(M_PI) + std::log(series);
}

double LogMomentInteger(double q, double sigma, int alpha) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double acc = kNegInf;
  for (int i = 0; i <= alpha; ++i) {
    const double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(i + 1.0) -
                             std::lgamma(alpha - i + 1.0);
    const double term = log_binom + i * log_q + (alpha - i) * log_1mq +
                        (static_cast<double>(i) * i - i) * inv2s2;
    acc = LogAdd(acc, term);
  }
  return acc;
}

double LogMomentFractional(double q, double sigma, double alpha) {
  const double s2 = sigma * sigma;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double z0 = s2 * std::log(1.0 / q - 1.0) + 0.5;
  const double log_half = std::log(0.5);
  double log_a0 = kNegInf;
  double log_a1 = kNegInf;
  // Generalised binomial coefficient binom(alpha, i), tracked as log|c| and
  // sign.
  double log_coef = 0.0;
  bool positive = true;
  for (int i = 0; i < 100000; ++i) {
    if (i > 0) {
      const double factor = (alpha - i + 1.0) / i;
      log_coef += std::log(std::abs(factor));
      if (factor < 0.0) positive = !positive;
    }
    const double j = alpha - i;
    const double log_t0 = log_coef + i * log_q + j * log_1mq;
    const double log_t1 = log_coef + j * log_q + i * log_1mq;
    const double log_e0 = log_half + LogErfc((i - z0) / (M_SQRT2 * sigma));
    const double log_e1 = log_half + LogErfc((z0 - j) / (M_SQRT2 * sigma));
    const double log_s0 = log_t0 + (static_cast<double>(i) * i - i) / (2.0 * s2) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2.0 * s2) + log_e1;
    if (positive) {
      log_a0 = LogAdd(log_a0, log_s0);
      log_a1 = LogAdd(log_a1, log_s1);
    } else {
      log_a0 = LogSub(log_a0, log_s0);
      log_a1 = LogSub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0) return LogAdd(log_a0, log_a1);
  }
  Fail(ErrorCode::kNumericalOverflow, "fractional-order series did not converge");
}

}  // namespace

std::string StageName(Stage stage) {
  switch (stage) {
    case Stage::kSft: return "SFT";
    case Stage::kRm: return "RM";
    case Stage::kPpo: return "PPO";
    case Stage::kTotal: break;
  }
  return "total";
}

std::vector<double> DefaultOrders() {
  std::vector<double> orders;
  for (int k = 1; k <= 16; ++k) orders.push_back(1.0 + k / 4.0);
  for (int a = 6; a <= 64; ++a) orders.push_back(a);
  orders.push_back(128.0);
  orders.push_back(256.0);
  return orders;
}

double LogMomentSubsampledGaussian(double q, double sigma, double alpha) {
  Require(q > 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "sampling rate must be in (0, 1]");
  Require(sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be > 0");
  Require(alpha > 1.0, ErrorCode::kInvalidArgument, "orders must be > 1");
  if (q == 1.0) return (alpha * alpha - alpha) / (2.0 * sigma * sigma);
  if (alpha == std::floor(alpha)) {
    return LogMomentInteger(q, sigma, static_cast<int>(alpha));
  }
  return LogMomentFractional(q, sigma, alpha);
}

RdpCurve RdpSubsampledGaussian(double q, double sigma,
                               std::span<const double> orders) {
  RdpCurve curve;
  curve.orders.assign(orders.begin(), orders.end());
  curve.values.reserve(orders.size());
  for (double alpha : orders) {
    double value;
    if (q == 1.0) {
      Require(sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be > 0");
      Require(alpha > 1.0, ErrorCode::kInvalidArgument, "orders must be > 1");
      value = alpha / (2.0 * sigma * sigma);
    } else {
      value = LogMomentSubsampledGaussian(q, sigma, alpha) / (alpha - 1.0);
    }
    Require(std::isfinite(value), ErrorCode::kNumericalOverflow,
            "RDP value overflowed");
    curve.values.push_back(std::max(value, 0.0));
  }
  return curve;
}

RdpCurve ComposeSteps(const RdpCurve& curve, int64_t steps) {
  Require(steps >= 1, ErrorCode::kInvalidArgument, "steps must be >= 1");
  RdpCurve out = curve;
  for (double& v : out.values) v *= static_cast<double>(steps);
  return out;
}

RdpCurve AddCurves(const RdpCurve& a, const RdpCurve& b) {
  Require(a.orders == b.orders, ErrorCode::kInvalidArgument,
          "curves use different orders");
  RdpCurve out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

Budget RdpToDp(const RdpCurve& curve, double delta, Stage stage) {
  Require(!curve.orders.empty() && curve.orders.size() == curve.values.size(),
          ErrorCode::kEmptyCurve, "empty RDP curve");
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "delta must be in (0, 1)");
  Budget best;
  best.epsilon = std::numeric_limits<double>::infinity();
  best.delta = delta;
  best.stage = stage;
  const double log_inv_delta = -std::log(delta);
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    const double alpha = curve.orders[i];
    const double eps = curve.values[i] + log_inv_delta / (alpha - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.order = alpha;
    }
  }
  return best;
}

Budget EpsilonFor(double q, double sigma, int64_t steps, double delta,
                  Stage stage, std::span<const double> orders) {
  if (sigma == 0.0) {
    Budget b;
    b.epsilon = std::numeric_limits<double>::infinity();
    b.delta = delta;
    b.stage = stage;
    return b;
  }
  const std::vector<double> defaults = DefaultOrders();
  if (orders.empty()) orders = defaults;
  return RdpToDp(ComposeSteps(RdpSubsampledGaussian(q, sigma, orders), steps),
                 delta, stage);
}

double CalibrateSigma(double q, int64_t steps, double delta,
                      double target_epsilon, const CalibrationBounds& bounds,
                      std::span<const double> orders) {
  Require(target_epsilon > 0.0, ErrorCode::kInvalidArgument,
          "target epsilon must be > 0");
  auto eps = [&](double sigma) {
    return EpsilonFor(q, sigma, steps, delta, Stage::kTotal, orders).epsilon;
  };
  double hi = bounds.sigma_max;
  Require(eps(hi) <= target_epsilon, ErrorCode::kUnattainableTarget,
          "target epsilon needs sigma beyond the search bound");
  double lo = bounds.sigma_min;
  if (eps(lo) <= target_epsilon) return lo;
  while ((hi - lo) > bounds.rel_tol * hi) {
    const double mid = std::sqrt(lo * hi);
    if (eps(mid) <= target_epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

Budget ComposeStages(std::span<const Budget> budgets) {
  Require(!budgets.empty(), ErrorCode::kInvalidArgument, "no budgets to compose");
  Budget total;
  total.delta = budgets.front().delta;
  total.stage = Stage::kTotal;
  for (const Budget& b : budgets) {
    Require(b.delta == total.delta, ErrorCode::kMismatchedDelta,
            "stages use different delta");
    total.epsilon += b.epsilon;
  }
  return total;
}

}  // namespace dprlhf
