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


// Generic DP-SGD loop over a model's trainable tensors.

#ifndef DPRLHF_DPSGD_DP_LOOP_H_
#define DPRLHF_DPSGD_DP_LOOP_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dprlhf/dpsgd/dpsgd.h"
#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/model.h"

namespace dprlhf {

// Per-example gradients (TrainableLayout) for the sampled indices.
using BatchGradFn = std::function<std::vector<ExampleGrad>(
    std::span<const std::size_t> indices, int64_t step)>;
using StepFn =
    std::function<void(const StepAudit& audit, std::span<const ExampleGrad> batch)>;

// Runs `steps` DP steps. Each step Poisson-samples from [0, n) at rate
// spec.sampling_rate with state.rng, privatizes the batch with expected size
// q n and writes the updated parameters back through `set_params`.
void RunDpSteps(const std::function<ParamSet()>& get_params,
                const std::function<void(const ParamSet&)>& set_params,
                std::size_t n, const DpSpec& spec, OptimState& state,
                int64_t steps, const BatchGradFn& grads,
                const StepFn& on_step = {}, Exec exec = Exec::kParallel);
// Same, over TrainableValues(model).
void RunDpSteps(Model& model, std::size_t n, const DpSpec& spec,
                OptimState& state, int64_t steps, const BatchGradFn& grads,
                const StepFn& on_step = {}, Exec exec = Exec::kParallel);

}  // namespace dprlhf

#endif  // DPRLHF_DPSGD_DP_LOOP_H_
