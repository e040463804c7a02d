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


// Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

#ifndef DPRLHF_ACCOUNTANT_ACCOUNTANT_H_
#define DPRLHF_ACCOUNTANT_ACCOUNTANT_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dprlhf {

struct RdpCurve {
  std::vector<double> orders;
  std::vector<double> values;
};

enum class Stage { kSft, kRm, kPpo, kTotal };

std::string StageName(Stage stage);

struct Budget {
  double epsilon = 0.0;
  double delta = 0.0;
  Stage stage = Stage::kTotal;
  // Order attaining the minimum in the conversion (0 for composed budgets).
  double order = 0.0;
};

// {1 + k/4 : k = 1..16} u {6, ..., 64} u {128, 256}, ascending.
std::vector<double> DefaultOrders();

// Per-step RDP of the subsampled Gaussian with sensitivity 1 and noise std
// sigma. Integer orders use the exact binomial expansion; fractional orders use
// the two-sided erfc series. q = 1 gives alpha / (2 sigma^2) exactly.
// Throws kInvalidArgument on bad q, sigma or orders (alpha <= 1) and
// kNumericalOverflow if a value is not finite.
RdpCurve RdpSubsampledGaussian(double q, double sigma,
                               std::span<const double> orders);

// Log of E[(mu / mu0)^alpha] for a single order; exposed for tests.
double LogMomentSubsampledGaussian(double q, double sigma, double alpha);

RdpCurve ComposeSteps(const RdpCurve& curve, int64_t steps);

// Pointwise sum of two curves on the same orders (heterogeneous composition).
RdpCurve AddCurves(const RdpCurve& a, const RdpCurve& b);

// eps = min_alpha RDP(alpha) + log(1/delta) / (alpha - 1). Throws kEmptyCurve.
Budget RdpToDp(const RdpCurve& curve, double delta, Stage stage = Stage::kTotal);

// Epsilon after `steps` steps; +inf when sigma == 0.
Budget EpsilonFor(double q, double sigma, int64_t steps, double delta,
                  Stage stage = Stage::kTotal,
                  std::span<const double> orders = {});

struct CalibrationBounds {
  double sigma_min = 1e-2;
  double sigma_max = 1e3;
  double rel_tol = 1e-6;
};

// Smallest sigma (to rel_tol, by bisection on log sigma) whose epsilon is at
// most target. Throws kUnattainableTarget when sigma_max does not suffice.
double CalibrateSigma(double q, int64_t steps, double delta,
                      double target_epsilon, const CalibrationBounds& bounds = {},
                      std::span<const double> orders = {});

// eps_total = sum of stage epsilons at their shared delta. Throws
// kMismatchedDelta and kInvalidArgument on an empty list.
Budget ComposeStages(std::span<const Budget> budgets);

}  // namespace dprlhf

#endif  // DPRLHF_ACCOUNTANT_ACCOUNTANT_H_
