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


// Small descriptive-statistics helpers shared by evaluation code.

#ifndef DPRLHF_COMMON_STATS_H_
#define DPRLHF_COMMON_STATS_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"

namespace dprlhf {

inline double Mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double StdDev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = Mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Linear-interpolated quantile of unsorted data, p in [0, 1].
inline double Quantile(std::vector<double> v, double p) {
  Require(!v.empty(), ErrorCode::kInvalidArgument, "quantile of empty data");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool Contains(double x) const { return lo <= x && x <= hi; }
};

// Percentile bootstrap interval for the mean.
inline Interval BootstrapMeanInterval(std::span<const double> v, int iterations,
                                      double level, Rng& rng) {
  Require(!v.empty(), ErrorCode::kInvalidArgument, "bootstrap of empty data");
  std::vector<double> means;
  means.reserve(iterations);
  for (int it = 0; it < iterations; ++it) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[rng.UniformInt(v.size())];
    means.push_back(s / static_cast<double>(v.size()));
  }
  const double tail = (1.0 - level) / 2.0;
  return {Quantile(means, tail), Quantile(means, 1.0 - tail)};
}

}  // namespace dprlhf

#endif  // DPRLHF_COMMON_STATS_H_
