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


// Differentially private SGD: Poisson subsampling, per-example clipping,
// Gaussian noise and a plain descent update.

#ifndef DPRLHF_DPSGD_DPSGD_H_
#define DPRLHF_DPSGD_DPSGD_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dprlhf/common/parallel.h"
#include "dprlhf/common/rng.h"
#include "dprlhf/tinylm/param_set.h"

namespace dprlhf {

struct DpSpec {
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  double sampling_rate = 0.01;
  int64_t steps = 1;
  double delta = 1e-5;

  // Throws kConfigInvalid.
  void Validate() const;
};

struct OptimState {
  double learning_rate = 0.0;
  int64_t step_count = 0;
  Rng rng;

  OptimState() = default;
  OptimState(double lr, uint64_t seed) : learning_rate(lr), rng(seed) {}
};

// g / max(1, |g| / C) over the concatenation of all entries. Throws
// kNonFinite on NaN/inf entries and kInvalidArgument when C <= 0.
ParamSet ClipGrad(const ParamSet& grad, double clip_norm);

// Indices in [0, n), each kept independently with probability q. Ascending.
std::vector<std::size_t> PoissonSample(std::size_t n, double q, Rng& rng);

struct ClipAudit {
  double max_pre_clip_norm = 0.0;
  double fraction_clipped = 0.0;
  double max_post_clip_norm = 0.0;
};

// Throws kClipViolation if any clipped norm exceeds C (1 + 1e-12).
ClipAudit AuditClipNorms(std::span<const ParamSet> grads, double clip_norm);

struct StepAudit {
  int64_t step = 0;
  std::size_t batch_size = 0;
  double max_pre_clip_norm = 0.0;
  double fraction_clipped = 0.0;
};

struct NoisyGradient {
  ParamSet gradient;
  StepAudit audit;
};

// (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / expected_batch. `layout` fixes
// the shape when the batch is empty. Clipping runs per example in parallel;
// the sum is taken serially in input order and noise is drawn in flat-index
// order, so the result is independent of `exec`.
NoisyGradient PrivatizeGradients(std::span<const ParamSet> grads,
                                 const ParamSet& layout, const DpSpec& spec,
                                 double expected_batch, Rng& rng,
                                 Exec exec = Exec::kParallel);

// One DP-SGD step: params -= lr * privatized gradient. Increments
// state.step_count; throws kStepBudgetExhausted once spec.steps is reached.
StepAudit DpStep(ParamSet& params, std::span<const ParamSet> grads,
                 const DpSpec& spec, double expected_batch, OptimState& state,
                 Exec exec = Exec::kParallel);

// Appends one row (step, batch_size, max_pre_clip_norm, fraction_clipped),
// writing the header when the file is new.
void AppendStepAudit(const std::filesystem::path& path, const StepAudit& audit);

}  // namespace dprlhf

#endif  // DPRLHF_DPSGD_DPSGD_H_
