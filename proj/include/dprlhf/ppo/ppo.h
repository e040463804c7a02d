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


// KL-regularized PPO with a learned critic, trained under DP-SGD where one
// rollout is one example over the joint actor and critic parameters.

#ifndef DPRLHF_PPO_PPO_H_
#define DPRLHF_PPO_PPO_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dprlhf/dpsgd/dpsgd.h"
#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/sampling.h"

namespace dprlhf {

enum class KlEstimator { kSampledToken, kFullVocabulary };

struct PpoConfig {
  double beta = 0.05;
  double clip_range = 0.2;
  double gamma = 1.0;
  double lambda = 0.95;
  int epochs_per_iteration = 3;
  int iterations = 10;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  bool normalize_advantages = false;
  KlEstimator kl_estimator = KlEstimator::kSampledToken;
  double learning_rate = 0.02;
  SamplingOptions sampling{.max_new = 64};
  // DP steps per epoch; 0 means round(1 / q).
  int64_t steps_per_epoch = 0;
  uint64_t seed = 0;
  Exec exec = Exec::kParallel;
  // When set, every DP step is appended here (see AppendStepAudit).
  std::filesystem::path audit_log;

  // Throws kConfigInvalid.
  void Validate() const;
};

// logp[t] - logp_ref[t]. Throws kLengthMismatch on unequal lengths.
std::vector<double> KlPenalty(std::span<const double> logp,
                              std::span<const double> logp_ref);

// -beta * kl[t] everywhere, plus `reward` at the last token.
std::vector<double> ShapedRewards(double reward, std::span<const double> kl,
                                  double beta);

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Generalized advantage estimation with a zero terminal value.
Advantages GaeAdvantages(std::span<const double> rewards,
                         std::span<const double> values, double gamma,
                         double lambda);

// -mean_t min(rho A, clip(rho, 1 - c, 1 + c) A), rho = exp(logp_new - logp_old).
double PpoSurrogate(std::span<const double> logp_new,
                    std::span<const double> logp_old,
                    std::span<const double> advantages, double clip_range);

// mean_t (values - returns)^2
double CriticLoss(std::span<const double> values, std::span<const double> returns);

struct Rollout {
  TokenSeq seq;  // prompt followed by the sampled response
  std::size_t prompt_index = 0;
  double reward = 0.0;
  // One entry per response token.
  std::vector<double> logp_old, logp_ref, kl, values, rewards, advantages,
      returns;

  std::size_t response_length() const { return seq.size() - seq.prompt_len; }
};

using RewardFn = std::function<double(const TokenSeq&)>;

// Per-position critic estimates for the response tokens: the value of the
// prefix that precedes each token.
std::vector<double> ResponseValues(const Model& critic, const TokenSeq& seq);

// Fills every field of a rollout for an already sampled sequence.
Rollout ScoreRollout(const Model& actor, const Model& critic,
                     const Model& reference, const RewardFn& reward,
                     TokenSeq seq, const PpoConfig& config);

// Actor: backbone with the policy adapters merged in plus fresh adapters.
// Critic: the same backbone with its own adapters and a zero value head.
struct ActorCritic {
  Model actor;
  Model critic;
};
ActorCritic MakeActorCritic(const Model& sft_policy, int adapter_rank,
                            double adapter_alpha, const std::string& targets,
                            uint64_t seed);

// Joint trainable tensors, named "actor/..." and "critic/...".
ParamSet JointValues(const Model& actor, const Model& critic);
void SetJoint(Model& actor, Model& critic, const ParamSet& joint);

struct RolloutLoss {
  double total = 0.0;
  double surrogate = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
  double clipped_fraction = 0.0;  // tokens on the clipped branch
};

RolloutLoss PpoLoss(const Model& actor, const Model& critic,
                    const Rollout& rollout, const PpoConfig& config);

struct PpoGrad {
  ParamSet grads;  // JointValues layout
  RolloutLoss loss;
  bool skipped = false;  // non-finite ratio; gradient is zero
};
PpoGrad PpoRolloutGrad(const Model& actor, const Model& critic,
                       const Rollout& rollout, const PpoConfig& config);

struct PpoIterationStats {
  int iteration = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;          // per-sequence sum of kl terms
  double fraction_clipped = 0.0;  // DP clipping, averaged over steps
  double surrogate_loss = 0.0;
  double critic_loss = 0.0;
  int64_t skipped = 0;
};

// Runs config.iterations rounds of rollouts on every prompt followed by
// epochs_per_iteration * steps_per_epoch DP steps. `state` carries the step
// count against spec.steps and the noise stream. The reference and reward
// are read only.
std::vector<PpoIterationStats> TrainPpo(Model& actor, Model& critic,
                                        const Model& reference,
                                        const RewardFn& reward,
                                        std::span<const TokenSeq> prompts,
                                        const DpSpec& spec,
                                        const PpoConfig& config,
                                        OptimState& state);

int64_t PpoStepsPerEpoch(const DpSpec& spec, const PpoConfig& config);
int64_t PpoTotalSteps(const DpSpec& spec, const PpoConfig& config);

// Mean reward and mean sampled-token sequence KL of `policy` on `prompts`,
// one sample per prompt with per-prompt streams.
struct PolicyEval {
  double mean_reward = 0.0;
  double mean_kl = 0.0;
};
PolicyEval EvaluatePolicy(const Model& policy, const Model& reference,
                          const RewardFn& reward,
                          std::span<const TokenSeq> prompts,
                          const SamplingOptions& sampling, uint64_t seed);

void WritePpoCurve(const std::filesystem::path& path,
                   std::span<const PpoIterationStats> stats);

}  // namespace dprlhf

#endif  // DPRLHF_PPO_PPO_H_
