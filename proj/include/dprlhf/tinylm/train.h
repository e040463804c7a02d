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


// Non-private training with Adam, used for pretraining the public backbone
// and for the non-private baselines.

#ifndef DPRLHF_TINYLM_TRAIN_H_
#define DPRLHF_TINYLM_TRAIN_H_

#include <cstdint>
#include <span>
#include <vector>

#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/param_set.h"

namespace dprlhf {

struct AdamConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global-norm gradient clipping before the update; 0 disables it.
  double max_grad_norm = 1.0;
};

class Adam {
 public:
  Adam(const ParamSet& layout, const AdamConfig& config);
  void Step(ParamSet& params, const ParamSet& grad);
  int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

struct NllTrainConfig {
  AdamConfig adam;
  int batch_size = 16;
  int64_t steps = 100;
  uint64_t seed = 0;
  LossKind loss = LossKind::kNllResponseOnly;
  Exec exec = Exec::kParallel;
};

// Mini-batches are drawn by walking reshuffled passes over the data. Returns
// the mean batch loss of every step.
std::vector<double> TrainNll(Model& model, std::span<const TokenSeq> data,
                             const NllTrainConfig& config);

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_TRAIN_H_
