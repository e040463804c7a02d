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


#include "dprlhf/dpsgd/dp_loop.h"

#include <cmath>

#include "dprlhf/common/error.h"

namespace dprlhf {

void RunDpSteps(const std::function<ParamSet()>& get_params,
                const std::function<void(const ParamSet&)>& set_params,
                std::size_t n, const DpSpec& spec, OptimState& state,
                int64_t steps, const BatchGradFn& grads, const StepFn& on_step,
                Exec exec) {
  spec.Validate();
  Require(n > 0, ErrorCode::kInvalidArgument, "empty training set");
  const double expected_batch = spec.sampling_rate * static_cast<double>(n);
  for (int64_t s = 0; s < steps; ++s) {
    const std::vector<std::size_t> idx =
        PoissonSample(n, spec.sampling_rate, state.rng);
    const int64_t step = state.step_count;
    std::vector<ExampleGrad> batch =
        idx.empty() ? std::vector<ExampleGrad>{} : grads(idx, step);
    Require(batch.size() == idx.size(), ErrorCode::kShapeMismatch,
            "gradient count differs from batch size");
    std::vector<ParamSet> g;
    g.reserve(batch.size());
    for (const ExampleGrad& e : batch) {
      Require(std::isfinite(e.loss), ErrorCode::kNonFinite, "non-finite loss");
      g.push_back(e.grads);
    }
    ParamSet params = get_params();
    const StepAudit audit = DpStep(params, g, spec, expected_batch, state, exec);
    set_params(params);
    if (on_step) on_step(audit, batch);
  }
}

void RunDpSteps(Model& model, std::size_t n, const DpSpec& spec,
                OptimState& state, int64_t steps, const BatchGradFn& grads,
                const StepFn& on_step, Exec exec) {
  RunDpSteps([&] { return TrainableValues(model); },
             [&](const ParamSet& p) { SetTrainable(model, p); }, n, spec, state,
             steps, grads, on_step, exec);
}

}  // namespace dprlhf
