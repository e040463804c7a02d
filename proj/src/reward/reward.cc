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


#include "dprlhf/reward/reward.h"

#include <cmath>
#include <fstream>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"
#include "dprlhf/dpsgd/dp_loop.h"

namespace dprlhf {
namespace {

struct Scored {
  ForwardCache cache;
  double value;
};

Scored ScoreWithCache(const Model& model, const TokenSeq& seq,
                      const ForwardOptions& options) {
  Require(!seq.empty(), ErrorCode::kInvalidArgument, "empty sequence");
  ForwardOptions o = options;
  o.compute_logits = false;
  Scored s{Forward(model, seq.tokens, o), 0.0};
  s.value = HeadValue(model, s.cache, seq.size() - 1);
  return s;
}

void AccumulateScoreGrad(const Model& model, const ForwardCache& cache,
                         double dscore, ParamSet& grads) {
  std::vector<double> dvalues(cache.length, 0.0);
  dvalues.back() = dscore;
  std::vector<double> dhidden(cache.length * model.config.d_model, 0.0);
  HeadBackward(model, cache, dvalues, dhidden, grads);
  Backward(model, cache, {}, dhidden, grads);
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double RewardScore(const Model& model, const TokenSeq& seq) {
  return ScoreWithCache(model, seq, {}).value;
}

double RewardScore(const Model& model, std::string_view prompt,
                   std::string_view response) {
  return RewardScore(model, EncodeDialogue(prompt, response));
}

double BtLoss(double delta) {
  // softplus(-delta)
  return delta > 0 ? std::log1p(std::exp(-delta)) : -delta + std::log1p(std::exp(delta));
}

ExampleGrad PairGrad(const Model& model, const PreferencePair& pair,
                     const ForwardOptions& options) {
  const TokenSeq w = EncodeDialogue(pair.prompt, pair.chosen);
  const TokenSeq l = EncodeDialogue(pair.prompt, pair.rejected);
  // Distinct dropout streams for the two responses.
  ForwardOptions ow = options, ol = options;
  ow.dropout_seed = DeriveSeed(options.dropout_seed, 0);
  ol.dropout_seed = DeriveSeed(options.dropout_seed, 1);
  const Scored sw = ScoreWithCache(model, w, ow);
  const Scored sl = ScoreWithCache(model, l, ol);
  const double delta = sw.value - sl.value;
  ExampleGrad out;
  out.loss = BtLoss(delta);
  Require(std::isfinite(out.loss), ErrorCode::kNonFinite, "non-finite BT loss");
  out.grads = TrainableLayout(model);
  const double g = -Sigmoid(-delta);  // dL/d delta
  AccumulateScoreGrad(model, sw.cache, g, out.grads);
  AccumulateScoreGrad(model, sl.cache, -g, out.grads);
  return out;
}

double PairLoss(const Model& model, const PreferencePair& pair) {
  return BtLoss(RewardScore(model, pair.prompt, pair.chosen) -
                RewardScore(model, pair.prompt, pair.rejected));
}

std::vector<ExampleGrad> PerPairGrads(const Model& model,
                                      std::span<const PreferencePair> pairs,
                                      std::span<const std::size_t> indices,
                                      bool training, uint64_t dropout_seed,
                                      Exec exec) {
  return IndexedMap<ExampleGrad>(
      indices.size(),
      [&](std::size_t i) {
        ForwardOptions o;
        o.training = training;
        o.dropout_seed = DeriveSeed(dropout_seed, i);
        return PairGrad(model, pairs[indices[i]], o);
      },
      exec);
}

double RankingAccuracy(const Model& model, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) return 0.0;
  const std::vector<int> wins = IndexedMap<int>(
      pairs.size(),
      [&](std::size_t i) {
        return RewardScore(model, pairs[i].prompt, pairs[i].chosen) >
                       RewardScore(model, pairs[i].prompt, pairs[i].rejected)
                   ? 1
                   : 0;
      },
      Exec::kParallel);
  double n = 0;
  for (int w : wins) n += w;
  return n / static_cast<double>(pairs.size());
}

Model MakeRewardModel(const Model& sft_policy, const RewardInit& init,
                      uint64_t seed) {
  Model m = sft_policy;
  if (!m.adapters.empty()) {
    m.base = MergeAdapters(m.config, m.base, m.adapters);
  }
  DetachAdapters(m);
  AttachAdapters(m, init.adapter_rank, init.adapter_alpha, init.adapter_dropout,
                 init.adapter_targets, seed);
  AttachHead(m, HeadKind::kReward);
  return m;
}

std::vector<RewardCurvePoint> TrainReward(Model& model,
                                          std::span<const PreferencePair> pairs,
                                          const DpSpec& spec,
                                          const RewardTrainConfig& config) {
  Require(!pairs.empty(), ErrorCode::kInvalidArgument, "no preference pairs");
  Require(model.head_kind == HeadKind::kReward, ErrorCode::kInvalidArgument,
          "reward training needs a reward head");
  OptimState state(config.learning_rate, DeriveSeed(config.seed, 1));
  const int64_t steps = config.steps > 0 ? config.steps : spec.steps;
  std::vector<RewardCurvePoint> curve;
  const bool dropout = model.config.adapter_dropout > 0.0;
  RunDpSteps(
      model, pairs.size(), spec, state, steps,
      [&](std::span<const std::size_t> idx, int64_t step) {
        return PerPairGrads(model, pairs, idx, dropout,
                            DeriveSeed(DeriveSeed(config.seed, 2), step),
                            config.exec);
      },
      [&](const StepAudit& audit, std::span<const ExampleGrad> batch) {
        if (!config.audit_log.empty()) AppendStepAudit(config.audit_log, audit);
        RewardCurvePoint p;
        p.step = audit.step;
        p.fraction_clipped = audit.fraction_clipped;
        double loss = 0.0, correct = 0.0;
        for (const ExampleGrad& g : batch) {
          loss += g.loss;
          correct += g.loss < std::log(2.0) ? 1.0 : 0.0;
        }
        if (!batch.empty()) {
          p.mean_loss = loss / batch.size();
          p.ranking_accuracy = correct / batch.size();
        }
        curve.push_back(p);
      },
      config.exec);
  return curve;
}

void WriteRewardCurve(const std::filesystem::path& path,
                      std::span<const RewardCurvePoint> curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out.precision(10);
  out << "step,mean_loss,ranking_accuracy,fraction_clipped\n";
  for (const auto& p : curve) {
    out << p.step << ',' << p.mean_loss << ',' << p.ranking_accuracy << ','
        << p.fraction_clipped << '\n';
  }
}

}  // namespace dprlhf
