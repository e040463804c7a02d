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
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dprlhf/common/error.h"
#include "dprlhf/tinylm/lm.h"
#include "../support/test_models.h"

namespace dprlhf {
namespace {

using testing::CheckGradient;
using testing::RandomizeAdapters;
using testing::RandomModel;
using testing::TinyConfig;

ModelConfig RewardConfig() {
  ModelConfig c = TinyConfig();
  c.max_seq_len = 96;
  return c;
}

Model RandomRewardModel(uint64_t seed) {
  Model m = RandomModel(seed, RewardConfig());
  AttachAdapters(m, 2, 4.0, 0.0, "qkvo", seed + 1);
  RandomizeAdapters(m, seed + 2);
  AttachHead(m, HeadKind::kReward);
  Rng rng(seed + 3);
  testing::Perturb(m.head, rng, 0.5);
  return m;
}

PreferencePair Pair(std::string chosen, std::string rejected) {
  PreferencePair p;
  p.prompt = "I have a cough.";
  p.chosen = std::move(chosen);
  p.rejected = std::move(rejected);
  return p;
}

TEST(BtLossTest, ValueAtZeroIsLogTwo) {
  EXPECT_NEAR(BtLoss(0.0), std::log(2.0), 1e-15);
}

TEST(BtLossTest, Asymptotes) {
  EXPECT_NEAR(BtLoss(40.0), std::exp(-40.0), 1e-30);
  EXPECT_NEAR(BtLoss(-40.0), 40.0, 1e-12);
  EXPECT_TRUE(std::isfinite(BtLoss(-1e6)));
  EXPECT_EQ(BtLoss(1e6), 0.0);
}

TEST(BtLossTest, SoftplusIdentity) {
  for (double d : {-5.0, -0.3, 0.0, 0.7, 12.0}) {
    EXPECT_NEAR(BtLoss(-d) - BtLoss(d), d, 1e-12);
  }
}

TEST(RewardTest, ZeroHeadScoresZero) {
  Model m = RandomModel(1, RewardConfig());
  AttachHead(m, HeadKind::kReward);
  EXPECT_EQ(RewardScore(m, "hello", "world"), 0.0);
  EXPECT_NEAR(PairLoss(m, Pair("a", "b")), std::log(2.0), 1e-15);
}

TEST(RewardTest, ScoreReadsLastToken) {
  const Model m = RandomRewardModel(2);
  const TokenSeq seq = EncodeDialogue("p", "resp");
  const ForwardCache cache = Forward(m, seq.tokens, {.compute_logits = false});
  EXPECT_DOUBLE_EQ(RewardScore(m, seq), HeadValue(m, cache, seq.size() - 1));
}

TEST(RewardTest, PairGradMatchesFiniteDifferences) {
  const Model m = RandomRewardModel(3);
  const PreferencePair pair = Pair("Take fluids.", "Hmm no idea");
  const ExampleGrad g = PairGrad(m, pair);
  EXPECT_NEAR(g.loss, PairLoss(m, pair), 1e-12);
  Model work = m;
  ParamSet layout = TrainableValues(m);
  std::vector<double> x(layout.flat().begin(), layout.flat().end());
  const std::vector<double> analytic(g.grads.flat().begin(), g.grads.flat().end());
  const auto report = CheckGradient(
      x, analytic,
      [&] {
        std::copy(x.begin(), x.end(), layout.flat().begin());
        SetTrainable(work, layout);
        return PairLoss(work, pair);
      },
      300, 4);
  EXPECT_EQ(report.failures, 0u) << report.first_failure;
}

TEST(RewardTest, SwappingResponsesShiftsLossByMargin) {
  const Model m = RandomRewardModel(5);
  const PreferencePair p = Pair("Rest and fluids.", "No.");
  const PreferencePair q = Pair(p.rejected, p.chosen);
  const double delta =
      RewardScore(m, p.prompt, p.chosen) - RewardScore(m, p.prompt, p.rejected);
  EXPECT_NEAR(PairLoss(m, q) - PairLoss(m, p), delta, 1e-12);
}

TEST(RewardTest, BiasShiftLeavesLossAndGradientUnchanged) {
  Model m = RandomRewardModel(6);
  const PreferencePair p = Pair("See a doctor.", "ok");
  const ExampleGrad before = PairGrad(m, p);
  m.head.Find("reward_head.b")[0] += 3.5;
  const ExampleGrad after = PairGrad(m, p);
  EXPECT_NEAR(after.loss, before.loss, 1e-12);
  EXPECT_NEAR(after.grads.Find("reward_head.b")[0], 0.0, 1e-15);
  for (std::size_t i = 0; i < before.grads.flat().size(); ++i) {
    EXPECT_NEAR(after.grads.flat()[i], before.grads.flat()[i], 1e-10);
  }
}

TEST(RewardTest, PerPairGradsSerialMatchesParallel) {
  const Model m = RandomRewardModel(7);
  std::vector<PreferencePair> pairs = {Pair("a b c", "d"), Pair("x", "yy"),
                                       Pair("fever", "none"), Pair("rest", "?")};
  const std::vector<std::size_t> idx = {3, 0, 2};
  const auto s = PerPairGrads(m, pairs, idx, false, 0, Exec::kSerial);
  const auto p = PerPairGrads(m, pairs, idx, false, 0, Exec::kParallel);
  ASSERT_EQ(s.size(), 3u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i].loss, p[i].loss);
    EXPECT_TRUE(std::equal(s[i].grads.flat().begin(), s[i].grads.flat().end(),
                           p[i].grads.flat().begin()));
  }
  EXPECT_EQ(s[0].loss, PairGrad(m, pairs[3]).loss);
}

TEST(RewardTest, MakeRewardModelStartsNeutral) {
  Model policy = RandomModel(8, RewardConfig());
  AttachAdapters(policy, 2, 4.0, 0.0, "qv", 9);
  RandomizeAdapters(policy, 10);
  const Model rm = MakeRewardModel(policy, {.adapter_rank = 2}, 11);
  EXPECT_EQ(rm.head_kind, HeadKind::kReward);
  EXPECT_EQ(RewardScore(rm, "p", "r"), 0.0);
  // Merged policy adapters are preserved in the backbone.
  const TokenSeq s = EncodeDialogue("p", "r");
  const auto a = ForwardLogits(policy, s);
  const auto b = ForwardLogits(rm, s);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(RewardTest, NoiselessTrainingSeparatesEasyPairs) {
  const std::vector<std::string> good = {
      "Drink fluids and rest; see a doctor if fever persists.",
      "Take paracetamol for the fever and monitor symptoms.",
      "An infection is likely; antibiotics may be needed.",
      "Check blood pressure and reduce salt intake daily.",
  };
  const std::vector<std::string> bad = {"no", "idk", "hmm", "maybe"};
  std::vector<PreferencePair> train, test;
  for (int i = 0; i < 64; ++i) {
    PreferencePair p = Pair(good[i % 4], bad[(i / 4) % 4]);
    p.prompt = "Question " + std::to_string(i);
    (i % 4 == 3 && i >= 48 ? test : train).push_back(p);
  }
  Model m = RandomModel(12, RewardConfig());
  m = MakeRewardModel(m, {.adapter_rank = 2, .adapter_dropout = 0.0}, 13);
  DpSpec spec{.clip_norm = 1.0, .noise_multiplier = 0.0, .sampling_rate = 0.25,
              .steps = 60, .delta = 1e-5};
  const auto curve = TrainReward(m, train, spec, {.learning_rate = 0.5, .seed = 14,
                                                  .exec = Exec::kSerial});
  EXPECT_EQ(curve.size(), 60u);
  EXPECT_GE(RankingAccuracy(m, train), 0.95);
  EXPECT_GE(RankingAccuracy(m, test), 0.95);
}

TEST(RewardTest, TrainingRejectsModelWithoutRewardHead) {
  Model m = RandomModel(15, RewardConfig());
  std::vector<PreferencePair> pairs = {Pair("a", "b")};
  DpSpec spec{.clip_norm = 1.0, .noise_multiplier = 1.0, .sampling_rate = 1.0,
              .steps = 1, .delta = 1e-5};
  EXPECT_THROW(TrainReward(m, pairs, spec, {}), Error);
}

}  // namespace
}  // namespace dprlhf
