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


// Scalar reward model trained with the Bradley-Terry loss under DP-SGD.

#ifndef DPRLHF_REWARD_REWARD_H_
#define DPRLHF_REWARD_REWARD_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "dprlhf/dpsgd/dpsgd.h"
#include "dprlhf/prefbuild/prefbuild.h"
#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/model.h"

namespace dprlhf {

// Head readout at the last token of `seq`.
double RewardScore(const Model& model, const TokenSeq& seq);
// Scores the dialogue encoding of (prompt, response).
double RewardScore(const Model& model, std::string_view prompt,
                   std::string_view response);

// -log sigmoid(delta), evaluated stably.
double BtLoss(double delta);

// One preference pair as one example: loss and gradient of
// BtLoss(r(prompt, chosen) - r(prompt, rejected)) over the trainable tensors.
ExampleGrad PairGrad(const Model& model, const PreferencePair& pair,
                     const ForwardOptions& options = {});
double PairLoss(const Model& model, const PreferencePair& pair);

std::vector<ExampleGrad> PerPairGrads(const Model& model,
                                      std::span<const PreferencePair> pairs,
                                      std::span<const std::size_t> indices,
                                      bool training, uint64_t dropout_seed,
                                      Exec exec = Exec::kParallel);

// Fraction of pairs with r(chosen) > r(rejected).
double RankingAccuracy(const Model& model, std::span<const PreferencePair> pairs);

// Attaches fresh adapters and a zero reward head to an SFT policy.
struct RewardInit {
  int adapter_rank = 8;
  double adapter_alpha = 16.0;
  double adapter_dropout = 0.05;
  std::string adapter_targets = "qv";
};
Model MakeRewardModel(const Model& sft_policy, const RewardInit& init,
                      uint64_t seed);

struct RewardCurvePoint {
  int64_t step = 0;
  double mean_loss = 0.0;
  double ranking_accuracy = 0.0;
  double fraction_clipped = 0.0;
};

struct RewardTrainConfig {
  double learning_rate = 0.05;
  int64_t steps = 0;  // 0: spec.steps
  uint64_t seed = 0;
  Exec exec = Exec::kParallel;
  // When set, every DP step is appended here (see AppendStepAudit).
  std::filesystem::path audit_log;
};

// DP-SGD on per-pair gradients. Batch statistics in the curve are computed
// on the sampled batch (noise-free diagnostics).
std::vector<RewardCurvePoint> TrainReward(Model& model,
                                          std::span<const PreferencePair> pairs,
                                          const DpSpec& spec,
                                          const RewardTrainConfig& config);

void WriteRewardCurve(const std::filesystem::path& path,
                      std::span<const RewardCurvePoint> curve);

}  // namespace dprlhf

#endif  // DPRLHF_REWARD_REWARD_H_
