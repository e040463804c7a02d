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

#ifndef DPRLHF_COMMON_RNG_H_
#define DPRLHF_COMMON_RNG_H_

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

namespace dprlhf {

// SplitMix64 finalizer. Used to derive independent stream seeds from a run
// seed so that parallel work gets a stream keyed by its index, not by the
// thread that happens to execute it.
constexpr uint64_t MixSeed(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr uint64_t DeriveSeed(uint64_t seed, uint64_t stream) {
  return MixSeed(MixSeed(seed) ^ MixSeed(stream + 0x632BE59BD9B4E019ULL));
}

// Seedable 64-bit generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard. Uniform doubles take the top 53 bits;
// normals use the Box-Muller transform with the second variate cached. Both
// transforms are written out here so streams do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1).
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  uint64_t UniformInt(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    while (u1 <= 0.0) u1 = Uniform();
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }

  // Fisher-Yates, reproducible across standard libraries.
  template <typename Container>
  void Shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      std::swap(c[i - 1], c[UniformInt(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dprlhf

#endif  // DPRLHF_COMMON_RNG_H_
