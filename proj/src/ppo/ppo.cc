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


#include "dprlhf/ppo/ppo.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "dprlhf/common/error.h"
#include "dprlhf/common/parallel.h"
#include "dprlhf/common/rng.h"
#include "dprlhf/dpsgd/dp_loop.h"

namespace dprlhf {
namespace {

constexpr char kActorPrefix[] = "actor/";
constexpr char kCriticPrefix[] = "critic/";

void RequireSameLength(std::size_t a, std::size_t b) {
  Require(a == b, ErrorCode::kLengthMismatch, "per-token arrays differ in length");
}

double Mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Full-vocabulary KL(p || p_ref) at each response position.
std::vector<double> FullVocabularyKl(const Model& actor, const Model& reference,
                                     const TokenSeq& seq) {
  const ForwardCache a = Forward(actor, seq.tokens);
  const ForwardCache r = Forward(reference, seq.tokens);
  const std::size_t vocab = actor.config.vocab_size;
  std::vector<double> la(vocab), lr(vocab), out;
  for (std::size_t t = seq.prompt_len; t < seq.size(); ++t) {
    LogSoftmaxRow(std::span<const double>(&a.logits[(t - 1) * vocab], vocab), la);
    LogSoftmaxRow(std::span<const double>(&r.logits[(t - 1) * vocab], vocab), lr);
    double kl = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) kl += std::exp(la[j]) * (la[j] - lr[j]);
    out.push_back(kl);
  }
  return out;
}

}  // namespace

void PpoConfig::Validate() const {
  Require(beta >= 0.0 && std::isfinite(beta), ErrorCode::kConfigInvalid,
          "beta must be >= 0");
  Require(clip_range > 0.0 && clip_range < 1.0, ErrorCode::kConfigInvalid,
          "clip_range must be in (0, 1)");
  Require(gamma >= 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0,
          ErrorCode::kConfigInvalid, "gamma and lambda must be in [0, 1]");
  Require(epochs_per_iteration >= 1 && iterations >= 1,
          ErrorCode::kConfigInvalid, "iterations and epochs must be >= 1");
  Require(value_coef >= 0.0 && entropy_coef >= 0.0, ErrorCode::kConfigInvalid,
          "loss weights must be >= 0");
  Require(learning_rate > 0.0, ErrorCode::kConfigInvalid,
          "learning_rate must be > 0");
  Require(steps_per_epoch >= 0, ErrorCode::kConfigInvalid,
          "steps_per_epoch must be >= 0");
}

std::vector<double> KlPenalty(std::span<const double> logp,
                              std::span<const double> logp_ref) {
  RequireSameLength(logp.size(), logp_ref.size());
  std::vector<double> out(logp.size());
  for (std::size_t t = 0; t < logp.size(); ++t) out[t] = logp[t] - logp_ref[t];
  return out;
}

std::vector<double> ShapedRewards(double reward, std::span<const double> kl,
                                  double beta) {
  Require(beta >= 0.0, ErrorCode::kInvalidArgument, "beta must be >= 0");
  std::vector<double> out(kl.size());
  for (std::size_t t = 0; t < kl.size(); ++t) out[t] = -beta * kl[t];
  if (!out.empty()) out.back() += reward;
  return out;
}

Advantages GaeAdvantages(std::span<const double> rewards,
                         std::span<const double> values, double gamma,
                         double lambda) {
  RequireSameLength(rewards.size(), values.size());
  const std::size_t n = rewards.size();
  Advantages out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next = i + 1 < n ? values[i + 1] : 0.0;
    const double td = rewards[i] + gamma * next - values[i];
    running = td + gamma * lambda * running;
    out.advantages[i] = running;
    out.returns[i] = running + values[i];
  }
  return out;
}

double PpoSurrogate(std::span<const double> logp_new,
                    std::span<const double> logp_old,
                    std::span<const double> advantages, double clip_range) {
  RequireSameLength(logp_new.size(), logp_old.size());
  RequireSameLength(logp_new.size(), advantages.size());
  Require(!logp_new.empty(), ErrorCode::kEmptyTarget, "empty response");
  double sum = 0.0;
  for (std::size_t t = 0; t < logp_new.size(); ++t) {
    const double rho = std::exp(logp_new[t] - logp_old[t]);
    const double clipped = std::clamp(rho, 1.0 - clip_range, 1.0 + clip_range);
    sum += std::min(rho * advantages[t], clipped * advantages[t]);
  }
  return -sum / static_cast<double>(logp_new.size());
}

double CriticLoss(std::span<const double> values, std::span<const double> returns) {
  RequireSameLength(values.size(), returns.size());
  Require(!values.empty(), ErrorCode::kEmptyTarget, "empty response");
  double sum = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    sum += (values[t] - returns[t]) * (values[t] - returns[t]);
  }
  return sum / static_cast<double>(values.size());
}

std::vector<double> ResponseValues(const Model& critic, const TokenSeq& seq) {
  Require(seq.prompt_len >= 1 && seq.prompt_len < seq.size(),
          ErrorCode::kEmptyTarget, "rollout has no response");
  const ForwardCache c = Forward(critic, seq.tokens, {.compute_logits = false});
  std::vector<double> out;
  for (std::size_t t = seq.prompt_len; t < seq.size(); ++t) {
    out.push_back(HeadValue(critic, c, t - 1));
  }
  return out;
}

Rollout ScoreRollout(const Model& actor, const Model& critic,
                     const Model& reference, const RewardFn& reward,
                     TokenSeq seq, const PpoConfig& config) {
  Rollout r;
  r.seq = std::move(seq);
  r.logp_old = TokenLogProbs(actor, r.seq, r.seq.prompt_len);
  r.logp_ref = TokenLogProbs(reference, r.seq, r.seq.prompt_len);
  r.kl = config.kl_estimator == KlEstimator::kSampledToken
             ? KlPenalty(r.logp_old, r.logp_ref)
             : FullVocabularyKl(actor, reference, r.seq);
  r.values = ResponseValues(critic, r.seq);
  r.reward = reward(r.seq);
  Require(std::isfinite(r.reward), ErrorCode::kNonFinite, "non-finite reward");
  r.rewards = ShapedRewards(r.reward, r.kl, config.beta);
  Advantages a = GaeAdvantages(r.rewards, r.values, config.gamma, config.lambda);
  r.advantages = std::move(a.advantages);
  r.returns = std::move(a.returns);
  return r;
}

ActorCritic MakeActorCritic(const Model& sft_policy, int adapter_rank,
                            double adapter_alpha, const std::string& targets,
                            uint64_t seed) {
  Model backbone = sft_policy;
  if (!backbone.adapters.empty()) {
    backbone.base = MergeAdapters(backbone.config, backbone.base, backbone.adapters);
  }
  DetachAdapters(backbone);
  AttachHead(backbone, HeadKind::kNone);
  ActorCritic out{backbone, backbone};
  AttachAdapters(out.actor, adapter_rank, adapter_alpha, 0.0, targets,
                 DeriveSeed(seed, 1));
  AttachAdapters(out.critic, adapter_rank, adapter_alpha, 0.0, targets,
                 DeriveSeed(seed, 2));
  AttachHead(out.critic, HeadKind::kValue);
  return out;
}

ParamSet JointValues(const Model& actor, const Model& critic) {
  ParamSet joint(ParamMode::kFull);
  joint.AppendAll(TrainableValues(actor), kActorPrefix);
  joint.AppendAll(TrainableValues(critic), kCriticPrefix);
  return joint;
}

void SetJoint(Model& actor, Model& critic, const ParamSet& joint) {
  SetTrainable(actor, joint.Extract(kActorPrefix, TrainableLayout(actor)));
  SetTrainable(critic, joint.Extract(kCriticPrefix, TrainableLayout(critic)));
}

namespace {

struct ActorPass {
  ForwardCache cache;
  std::vector<double> logp_new;
  std::vector<double> probs;  // [n, vocab]
  std::vector<double> entropy;
};

ActorPass RunActor(const Model& actor, const TokenSeq& seq) {
  ActorPass p;
  p.cache = Forward(actor, seq.tokens);
  const std::size_t vocab = actor.config.vocab_size;
  const std::size_t n = seq.size() - seq.prompt_len;
  p.probs.resize(n * vocab);
  std::vector<double> logp(vocab);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = seq.prompt_len + i;
    LogSoftmaxRow(std::span<const double>(&p.cache.logits[(t - 1) * vocab], vocab),
                  logp);
    p.logp_new.push_back(logp[seq.tokens[t]]);
    double h = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double pj = std::exp(logp[j]);
      p.probs[i * vocab + j] = pj;
      h -= pj * logp[j];
    }
    p.entropy.push_back(h);
  }
  return p;
}

}  // namespace

RolloutLoss PpoLoss(const Model& actor, const Model& critic,
                    const Rollout& rollout, const PpoConfig& config) {
  const ActorPass a = RunActor(actor, rollout.seq);
  RolloutLoss l;
  l.surrogate = PpoSurrogate(a.logp_new, rollout.logp_old, rollout.advantages,
                             config.clip_range);
  l.critic = CriticLoss(ResponseValues(critic, rollout.seq), rollout.returns);
  l.entropy = Mean(a.entropy);
  l.total = l.surrogate + config.value_coef * l.critic -
            config.entropy_coef * l.entropy;
  return l;
}

PpoGrad PpoRolloutGrad(const Model& actor, const Model& critic,
                       const Rollout& rollout, const PpoConfig& config) {
  const TokenSeq& seq = rollout.seq;
  const std::size_t n = rollout.response_length();
  Require(n >= 1 && seq.prompt_len >= 1, ErrorCode::kEmptyTarget,
          "rollout has no response");
  RequireSameLength(n, rollout.advantages.size());
  PpoGrad out;
  out.grads = JointValues(actor, critic).ZerosLike();

  const ActorPass a = RunActor(actor, seq);
  const std::size_t vocab = actor.config.vocab_size;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> dlogits(seq.size() * vocab, 0.0);
  double surrogate = 0.0;
  double clipped_tokens = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = std::exp(a.logp_new[i] - rollout.logp_old[i]);
    if (!std::isfinite(rho)) {
      out.skipped = true;
      out.loss = {};
      return out;
    }
    const double adv = rollout.advantages[i];
    const double lo = 1.0 - config.clip_range;
    const double hi = 1.0 + config.clip_range;
    const double unclipped = rho * adv;
    const double clipped = std::clamp(rho, lo, hi) * adv;
    surrogate += std::min(unclipped, clipped);
    // d(-obj / n) / d logp_new; zero when the clipped branch is active.
    double dlogp = 0.0;
    if (unclipped <= clipped) {
      dlogp = -unclipped * inv_n;
    } else {
      clipped_tokens += 1.0;
    }
    const std::size_t t = seq.prompt_len + i;
    const double* pr = &a.probs[i * vocab];
    double* drow = &dlogits[(t - 1) * vocab];
    for (std::size_t j = 0; j < vocab; ++j) drow[j] -= dlogp * pr[j];
    drow[seq.tokens[t]] += dlogp;
    if (config.entropy_coef > 0.0) {
      // d(-c H / n) / dz_j = (c / n) p_j (log p_j + H)
      const double scale = config.entropy_coef * inv_n;
      for (std::size_t j = 0; j < vocab; ++j) {
        if (pr[j] > 0.0) drow[j] += scale * pr[j] * (std::log(pr[j]) + a.entropy[i]);
      }
    }
  }
  ParamSet actor_grads = TrainableLayout(actor);
  Backward(actor, a.cache, dlogits, {}, actor_grads);

  const ForwardCache c = Forward(critic, seq.tokens, {.compute_logits = false});
  std::vector<double> dvalues(seq.size(), 0.0);
  double critic_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = seq.prompt_len + i - 1;
    const double diff = HeadValue(critic, c, pos) - rollout.returns[i];
    critic_loss += diff * diff;
    dvalues[pos] = config.value_coef * 2.0 * diff * inv_n;
  }
  ParamSet critic_grads = TrainableLayout(critic);
  std::vector<double> dhidden(seq.size() * critic.config.d_model, 0.0);
  HeadBackward(critic, c, dvalues, dhidden, critic_grads);
  Backward(critic, c, {}, dhidden, critic_grads);

  ParamSet joint(ParamMode::kFull);
  joint.AppendAll(actor_grads, kActorPrefix);
  joint.AppendAll(critic_grads, kCriticPrefix);
  out.grads = std::move(joint);
  out.loss.surrogate = -surrogate * inv_n;
  out.loss.critic = critic_loss * inv_n;
  out.loss.entropy = Mean(a.entropy);
  out.loss.clipped_fraction = clipped_tokens * inv_n;
  out.loss.total = out.loss.surrogate + config.value_coef * out.loss.critic -
                   config.entropy_coef * out.loss.entropy;
  return out;
}

int64_t PpoStepsPerEpoch(const DpSpec& spec, const PpoConfig& config) {
  if (config.steps_per_epoch > 0) return config.steps_per_epoch;
  return std::max<int64_t>(1, std::llround(1.0 / spec.sampling_rate));
}

int64_t PpoTotalSteps(const DpSpec& spec, const PpoConfig& config) {
  return static_cast<int64_t>(config.iterations) * config.epochs_per_iteration *
         PpoStepsPerEpoch(spec, config);
}

std::vector<PpoIterationStats> TrainPpo(Model& actor, Model& critic,
                                        const Model& reference,
                                        const RewardFn& reward,
                                        std::span<const TokenSeq> prompts,
                                        const DpSpec& spec,
                                        const PpoConfig& config,
                                        OptimState& state) {
  config.Validate();
  spec.Validate();
  Require(!prompts.empty(), ErrorCode::kInvalidArgument, "no PPO prompts");
  Require(critic.head_kind == HeadKind::kValue, ErrorCode::kInvalidArgument,
          "critic needs a value head");
  Require(static_cast<bool>(reward), ErrorCode::kMissingPrerequisite,
          "reward model missing");
  Require(state.step_count + PpoTotalSteps(spec, config) <= spec.steps,
          ErrorCode::kStepBudgetExhausted,
          "PPO schedule exceeds the DP step budget");
  const int64_t steps_per_epoch = PpoStepsPerEpoch(spec, config);
  std::vector<PpoIterationStats> stats;
  for (int it = 0; it < config.iterations; ++it) {
    const uint64_t iter_seed = DeriveSeed(config.seed, static_cast<uint64_t>(it));
    std::vector<Rollout> rollouts = IndexedMap<Rollout>(
        prompts.size(),
        [&](std::size_t i) {
          Rng rng(DeriveSeed(iter_seed, i));
          Rollout r = ScoreRollout(actor, critic, reference, reward,
                                   Sample(actor, prompts[i], config.sampling, rng),
                                   config);
          r.prompt_index = i;
          return r;
        },
        config.exec);
    PpoIterationStats s;
    s.iteration = it;
    for (const Rollout& r : rollouts) {
      s.mean_reward += r.reward;
      for (double k : r.kl) s.mean_kl += k;
    }
    s.mean_reward /= static_cast<double>(rollouts.size());
    s.mean_kl /= static_cast<double>(rollouts.size());
    if (config.normalize_advantages) {
      std::vector<double> all;
      for (const Rollout& r : rollouts) {
        all.insert(all.end(), r.advantages.begin(), r.advantages.end());
      }
      const double mu = Mean(all);
      double var = 0.0;
      for (double v : all) var += (v - mu) * (v - mu);
      const double sd = std::sqrt(var / static_cast<double>(all.size())) + 1e-8;
      for (Rollout& r : rollouts) {
        for (double& v : r.advantages) v = (v - mu) / sd;
      }
    }
    double surrogate = 0.0, critic_loss = 0.0, clip_sum = 0.0;
    int64_t examples = 0, steps = 0;
    RunDpSteps(
        [&] { return JointValues(actor, critic); },
        [&](const ParamSet& p) { SetJoint(actor, critic, p); }, rollouts.size(),
        spec, state, config.epochs_per_iteration * steps_per_epoch,
        [&](std::span<const std::size_t> idx, int64_t) {
          std::vector<PpoGrad> g = IndexedMap<PpoGrad>(
              idx.size(),
              [&](std::size_t i) {
                return PpoRolloutGrad(actor, critic, rollouts[idx[i]], config);
              },
              config.exec);
          std::vector<ExampleGrad> out;
          out.reserve(g.size());
          for (PpoGrad& e : g) {
            if (e.skipped) {
              ++s.skipped;
            } else {
              surrogate += e.loss.surrogate;
              critic_loss += e.loss.critic;
              ++examples;
            }
            out.push_back({std::move(e.grads), e.loss.total});
          }
          return out;
        },
        [&](const StepAudit& audit, std::span<const ExampleGrad>) {
          if (!config.audit_log.empty()) AppendStepAudit(config.audit_log, audit);
          clip_sum += audit.fraction_clipped;
          ++steps;
        },
        config.exec);
    if (examples > 0) {
      s.surrogate_loss = surrogate / examples;
      s.critic_loss = critic_loss / examples;
    }
    if (steps > 0) s.fraction_clipped = clip_sum / steps;
    stats.push_back(s);
  }
  return stats;
}

PolicyEval EvaluatePolicy(const Model& policy, const Model& reference,
                          const RewardFn& reward,
                          std::span<const TokenSeq> prompts,
                          const SamplingOptions& sampling, uint64_t seed) {
  Require(!prompts.empty(), ErrorCode::kInvalidArgument, "no prompts");
  struct Item {
    double reward, kl;
  };
  const std::vector<Item> items = IndexedMap<Item>(
      prompts.size(),
      [&](std::size_t i) {
        Rng rng(DeriveSeed(seed, i));
        const TokenSeq seq = Sample(policy, prompts[i], sampling, rng);
        const std::vector<double> kl =
            KlPenalty(TokenLogProbs(policy, seq, seq.prompt_len),
                      TokenLogProbs(reference, seq, seq.prompt_len));
        double total = 0.0;
        for (double k : kl) total += k;
        return Item{reward(seq), total};
      },
      Exec::kParallel);
  PolicyEval e;
  for (const Item& it : items) {
    e.mean_reward += it.reward;
    e.mean_kl += it.kl;
  }
  e.mean_reward /= static_cast<double>(items.size());
  e.mean_kl /= static_cast<double>(items.size());
  return e;
}

void WritePpoCurve(const std::filesystem::path& path,
                   std::span<const PpoIterationStats> stats) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out.precision(10);
  out << "iteration,mean_reward,mean_kl,fraction_clipped,surrogate_loss,"
         "critic_loss\n";
  for (const auto& s : stats) {
    out << s.iteration << ',' << s.mean_reward << ',' << s.mean_kl << ','
        << s.fraction_clipped << ',' << s.surrogate_loss << ',' << s.critic_loss
        << '\n';
  }
}

}  // namespace dprlhf
