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


#include "dprlhf/attacks/attacks.h"

#include <algorithm>
#include <cmath>
#include <bit>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dprlhf/accountant/accountant.h"
#include "dprlhf/common/error.h"
#include "dprlhf/dpsgd/dp_loop.h"
#include "dprlhf/tinylm/train.h"
#include "../support/test_models.h"

namespace dprlhf {
namespace {

using testing::RandomModel;

const std::vector<std::string> kWords = {
    "Fever",  "Cough", "Rest",   "Fluids", "Aspirin", "Nausea", "Tablet",
    "Review", "Water", "Sleep",  "Walk",   "Salt",    "Sugar",  "Pain",
    "Doctor", "Clinic", "Dose",  "Heart",  "Skin",    "Rash"};

std::string RandomSentence(Rng& rng, int words) {
  std::string s;
  for (int i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += kWords[rng.UniformInt(kWords.size())];
  }
  return s;
}

std::vector<DialogueExample> MakeRecords(const std::string& tag, int n, Rng& rng) {
  std::vector<DialogueExample> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({tag + std::to_string(i), RandomSentence(rng, 2),
                   RandomSentence(rng, 5)});
  }
  return out;
}

ModelConfig AttackConfigModel() {
  ModelConfig c = testing::TinyConfig(24);
  c.max_seq_len = 96;
  return c;
}

std::vector<TokenSeq> Encode(const std::vector<DialogueExample>& records) {
  std::vector<TokenSeq> out;
  for (const auto& r : records) out.push_back(EncodeDialogue(r.patient_text, r.doctor_text));
  return out;
}

std::vector<double> Side(const std::vector<AttackScore>& s, AttackKind k, bool member) {
  std::vector<double> out;
  for (const auto& x : s) {
    if (x.attack == k && x.is_member == member) out.push_back(x.score);
  }
  return out;
}

// Shared toy world: a base model, a model overfit on the members and a
// DP-trained model on the same members.
class OverfitHarness : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    Rng rng(100);
    members_ = new std::vector<DialogueExample>(MakeRecords("m", 24, rng));
    nonmembers_ = new std::vector<DialogueExample>(MakeRecords("n", 24, rng));
    base_ = new Model(RandomModel(101, AttackConfigModel()));
    overfit_ = new Model(*base_);
    const std::vector<TokenSeq> data = Encode(*members_);
    TrainNll(*overfit_, data,
             {.adam = {.learning_rate = 1e-2}, .batch_size = 8, .steps = 400, .seed = 102});
    dp_ = new Model(*base_);
    DpSpec spec{.clip_norm = 1.0, .noise_multiplier = 6.0, .sampling_rate = 0.25,
                .steps = 40, .delta = 1e-5};
    OptimState state(0.05, 103);
    RunDpSteps(*dp_, data.size(), spec, state, spec.steps,
               [&](std::span<const std::size_t> idx, int64_t) {
                 std::vector<TokenSeq> batch;
                 for (std::size_t i : idx) batch.push_back(data[i]);
                 return PerExampleGrads(*dp_, batch, LossKind::kNllResponseOnly);
               });
  }
  static void TearDownTestSuite() {
    delete members_;
    delete nonmembers_;
    delete base_;
    delete overfit_;
    delete dp_;
  }

  static std::vector<AttackScore> Scores(const Model& target) {
    std::vector<DialogueExample> all = *members_;
    all.insert(all.end(), nonmembers_->begin(), nonmembers_->end());
    std::vector<bool> flags(all.size(), false);
    std::fill(flags.begin(), flags.begin() + members_->size(), true);
    std::unique_ptr<bool[]> raw(new bool[flags.size()]);
    std::copy(flags.begin(), flags.end(), raw.get());
    return ScoreRecords(target, *base_, all, std::span<const bool>(raw.get(), flags.size()),
                        {});
  }

  static std::vector<DialogueExample>* members_;
  static std::vector<DialogueExample>* nonmembers_;
  static Model* base_;
  static Model* overfit_;
  static Model* dp_;
};

std::vector<DialogueExample>* OverfitHarness::members_ = nullptr;
std::vector<DialogueExample>* OverfitHarness::nonmembers_ = nullptr;
Model* OverfitHarness::base_ = nullptr;
Model* OverfitHarness::overfit_ = nullptr;
Model* OverfitHarness::dp_ = nullptr;

TEST_F(OverfitHarness, MemorizedRecordScoresHigherThanFresh) {
  const auto& m = (*members_)[0];
  const auto& n = (*nonmembers_)[0];
  EXPECT_GT(LossAttack(*overfit_, EncodeDialogue(m.patient_text, m.doctor_text)),
            LossAttack(*overfit_, EncodeDialogue(n.patient_text, n.doctor_text)));
}

TEST_F(OverfitHarness, EveryAttackIsOrientedTowardMembers) {
  const auto scores = Scores(*overfit_);
  for (AttackKind k : AllAttacks()) {
    const RocResult roc = RocAnalysis(Side(scores, k, true), Side(scores, k, false));
    EXPECT_GT(roc.auc, 0.5) << AttackName(k);
  }
}

TEST_F(OverfitHarness, DpTrainingSuppressesLossAttack) {
  // The DP run above spends a small budget.
  EXPECT_LT(EpsilonFor(0.25, 6.0, 40, 1e-5, Stage::kSft, DefaultOrders()).epsilon, 1.5);
  const auto over = Scores(*overfit_);
  const auto dp = Scores(*dp_);
  const auto k = AttackKind::kLoss;
  const double auc_over = RocAnalysis(Side(over, k, true), Side(over, k, false)).auc;
  const double auc_dp = RocAnalysis(Side(dp, k, true), Side(dp, k, false)).auc;
  EXPECT_LT(auc_dp, auc_over) << auc_over;
  const Interval ci = BootstrapAuc(Side(dp, k, true), Side(dp, k, false), 1000, 0.95, 7);
  EXPECT_TRUE(ci.Contains(0.5)) << auc_dp << " " << ci.lo << " " << ci.hi;
}

TEST_F(OverfitHarness, UntrainedModelGivesNoSignal) {
  const auto scores = Scores(*base_);
  const auto k = AttackKind::kLoss;
  const Interval ci = BootstrapAuc(Side(scores, k, true), Side(scores, k, false),
                                   1000, 0.95, 8);
  EXPECT_TRUE(ci.Contains(0.5)) << ci.lo << " " << ci.hi;
}

TEST_F(OverfitHarness, ReferenceAttackAgainstItselfIsZero) {
  for (const auto& r : *members_) {
    EXPECT_EQ(RefAttack(*base_, *base_, EncodeDialogue(r.patient_text, r.doctor_text)),
              0.0);
  }
  const auto& r = (*members_)[1];
  const TokenSeq s = EncodeDialogue(r.patient_text, r.doctor_text);
  EXPECT_DOUBLE_EQ(RefAttack(*overfit_, *base_, s), -RefAttack(*base_, *overfit_, s));
}

TEST_F(OverfitHarness, ScoresAreDeterministic) {
  EXPECT_EQ(Scores(*overfit_).back().score, Scores(*overfit_).back().score);
  const auto& r = (*members_)[2];
  EXPECT_EQ(ZlibAttack(*overfit_, r.patient_text, r.doctor_text),
            ZlibAttack(*overfit_, r.patient_text, r.doctor_text));
}

TEST(LossAttackTest, IsNegatedResponseNll) {
  const Model m = RandomModel(1);
  const TokenSeq s = EncodeDialogue("a", "bc");
  EXPECT_DOUBLE_EQ(LossAttack(m, s), -NllLoss(m, s, true));
}

TEST(MinKTest, HandArithmetic) {
  const std::vector<double> lp = {-1, -2, -3, -4, -5};
  EXPECT_DOUBLE_EQ(MinKFromLogProbs(lp, 0.4), -4.5);
  EXPECT_DOUBLE_EQ(MinKFromLogProbs(lp, 1.0), -3.0);
}

TEST(MinKTest, FullFractionEqualsLossAttack) {
  const Model m = RandomModel(2, AttackConfigModel());
  const TokenSeq s = EncodeDialogue("Fever", "Rest and fluids");
  EXPECT_NEAR(MinKAttack(m, s, 1.0), LossAttack(m, s), 1e-12);
}

TEST(MinKTest, TooShortAndBadFractionThrow) {
  const std::vector<double> lp = {-1, -2, -3, -4};
  EXPECT_THROW(MinKFromLogProbs(lp, 0.2), Error);
  EXPECT_THROW(MinKFromLogProbs(lp, 0.0), Error);
  EXPECT_THROW(MinKFromLogProbs(lp, 1.5), Error);
}

TEST(MinKTest, UniformModelGivesZeroStandardizedScore) {
  const Model m = InitModel(AttackConfigModel(), 3, /*zero_lm_head=*/true);
  const TokenSeq s = EncodeDialogue("Fever", "Rest and fluids");
  const TokenStats st = ResponseTokenStats(m, s);
  for (double sd : st.sigma) EXPECT_NEAR(sd, 0.0, 1e-6);
  EXPECT_NEAR(MinKppAttack(m, s, 0.2), 0.0, 1e-6);
}

TEST(MinKTest, StandardizationMatchesDirectFormula) {
  TokenStats st{{-1.0, -3.0, -0.5}, {-2.0, -2.0, -1.0}, {0.5, 1.0, 0.25}};
  // z = {2, -1, 2}; bottom one of three at k = 0.34.
  EXPECT_DOUBLE_EQ(MinKppFromStats(st, 0.34, 1e-6), -1.0);
  EXPECT_DOUBLE_EQ(MinKppFromStats(st, 1.0, 1e-6), 1.0);
}

TEST(ZlibTest, CompressedLengthOrdering) {
  Rng rng(4);
  std::string random_text;
  for (int i = 0; i < 200; ++i) random_text += static_cast<char>('a' + rng.UniformInt(26));
  const std::string flat(200, 'a');
  EXPECT_LT(CompressedLength(flat), CompressedLength(random_text));
  EXPECT_THROW(CompressedLength(""), Error);
}

TEST(ZlibTest, EqualNllOrdersByCompressedLength) {
  // A uniform model assigns every text of the same length the same NLL, so
  // the score is -nll / z and the less compressible text scores higher.
  const Model m = InitModel(AttackConfigModel(), 5, true);
  Rng rng(6);
  std::string random_text;
  for (int i = 0; i < 40; ++i) random_text += static_cast<char>('a' + rng.UniformInt(26));
  const std::string flat(40, 'a');
  const double nll_flat = NllLoss(m, EncodeDialogue("q", flat), true);
  const double nll_rand = NllLoss(m, EncodeDialogue("q", random_text), true);
  ASSERT_NEAR(nll_flat, nll_rand, 1e-9);
  const double s_flat = ZlibAttack(m, "q", flat);
  const double s_rand = ZlibAttack(m, "q", random_text);
  EXPECT_DOUBLE_EQ(s_flat, -nll_flat / CompressedLength(flat));
  EXPECT_GT(s_rand, s_flat);
}

TEST(LowercaseTest, AlreadyLowercaseScoresZero) {
  const Model m = RandomModel(7, AttackConfigModel());
  EXPECT_EQ(LowercaseAttack(m, "my head hurts", "rest and fluids"), 0.0);
  EXPECT_NE(LowercaseAttack(m, "My head hurts", "Rest and fluids"), 0.0);
  EXPECT_THROW(LowercaseAttack(m, "x", ""), Error);
}

TEST(RocTest, PerfectSeparation) {
  const std::vector<double> m = {2, 3}, n = {0, 1};
  const RocResult r = RocAnalysis(m, n);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_DOUBLE_EQ(r.tpr_at_fpr, 1.0);
}

TEST(RocTest, AllTiesGiveHalf) {
  const std::vector<double> m(5, 1.0), n(7, 1.0);
  const RocResult r = RocAnalysis(m, n);
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
  EXPECT_DOUBLE_EQ(r.tpr_at_fpr, 0.0);
}

TEST(RocTest, MatchesBruteForcePairCounting) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> m(50), n(50);
    for (double& v : m) v = std::round(rng.Normal(0.3, 1.0) * 4) / 4;
    for (double& v : n) v = std::round(rng.Normal(0.0, 1.0) * 4) / 4;
    double wins = 0.0;
    for (double a : m) {
      for (double b : n) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    }
    EXPECT_NEAR(RocAnalysis(m, n).auc, wins / 2500.0, 1e-12);
  }
}

TEST(RocTest, NegationMirrorsAuc) {
  Rng rng(10);
  std::vector<double> m(30), n(40);
  for (double& v : m) v = rng.Normal(0.5, 1.0);
  for (double& v : n) v = rng.Normal(0.0, 1.0);
  const double auc = RocAnalysis(m, n).auc;
  for (double& v : m) v = -v;
  for (double& v : n) v = -v;
  EXPECT_NEAR(RocAnalysis(m, n).auc, 1.0 - auc, 1e-12);
}

TEST(RocTest, TprAtLowFprUsesBestAdmissibleThreshold) {
  // 200 non-members, two above every member except one.
  std::vector<double> n(200, 0.0);
  n[0] = 10.0;
  n[1] = 10.0;
  const std::vector<double> m = {11.0, 5.0, 5.0, -1.0};
  const RocResult r = RocAnalysis(m, n, 0.01);
  // tau = 5 admits FPR 2/200 = 0.01 and TPR 3/4.
  EXPECT_DOUBLE_EQ(r.tpr_at_fpr, 0.75);
  EXPECT_EQ(r.curve.front(), (std::pair<double, double>{0.0, 0.0}));
  EXPECT_EQ(r.curve.back(), (std::pair<double, double>{1.0, 1.0}));
}

TEST(RocTest, SingleClassThrows) {
  const std::vector<double> m = {1.0}, none;
  try {
    RocAnalysis(m, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingleClass);
  }
}

TEST(BootstrapTest, SameSeedGivesPairedResamples) {
  Rng rng(11);
  std::vector<double> m(40), n(40);
  for (double& v : m) v = rng.Normal(0.5, 1.0);
  for (double& v : n) v = rng.Normal(0.0, 1.0);
  const Interval a = BootstrapAuc(m, n, 1000, 0.95, 12);
  const Interval b = BootstrapAuc(m, n, 1000, 0.95, 12);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_TRUE(a.Contains(RocAnalysis(m, n).auc));
  // Shifting every member score shifts the AUC of every resample upward.
  std::vector<double> shifted = m;
  for (double& v : shifted) v += 0.5;
  const Interval c = BootstrapAuc(shifted, n, 1000, 0.95, 12);
  EXPECT_GE(c.lo, a.lo);
  EXPECT_GE(c.hi, a.hi);
}

TEST(SummaryTest, OneRowPerAttack) {
  std::vector<AttackScore> s;
  for (AttackKind k : {AttackKind::kLoss, AttackKind::kZlib}) {
    for (int i = 0; i < 6; ++i) s.push_back({std::to_string(i), double(i), i < 3, k});
  }
  const auto rows = SummarizeAttacks(s, {.bootstrap_iterations = 50}, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].auc, 0.0);
  EXPECT_EQ(rows[1].attack, AttackKind::kZlib);
  EXPECT_EQ(rows[1].members, 3u);
}

TEST(AttackNameTest, RoundTrip) {
  for (AttackKind k : AllAttacks()) EXPECT_EQ(ParseAttack(AttackName(k)), k);
  EXPECT_THROW(ParseAttack("shadow"), Error);
}

TEST(PoolsTest, EqualSizesAndMatchedLengthBins) {
  Rng rng(13);
  std::vector<DialogueExample> train, held;
  for (int i = 0; i < 60; ++i) {
    train.push_back({"t" + std::to_string(i), "p", std::string(4 + (i % 30) * 3, 'x')});
  }
  for (int i = 0; i < 30; ++i) {
    held.push_back({"h" + std::to_string(i), "p", std::string(4 + (i % 10) * 7, 'y')});
  }
  const MembershipPools pools = BuildMembershipPools(train, held, 100, rng);
  ASSERT_EQ(pools.members.size(), pools.nonmembers.size());
  EXPECT_GT(pools.members.size(), 10u);
  std::multiset<int> bm, bn;
  for (const auto& e : pools.members) bm.insert(std::bit_width(e.doctor_text.size()));
  for (const auto& e : pools.nonmembers) bn.insert(std::bit_width(e.doctor_text.size()));
  EXPECT_EQ(bm, bn);
  Rng again(13);
  EXPECT_EQ(BuildMembershipPools(train, held, 5, again).members.size(), 5u);
}

TEST(CanaryTest, FormatAndInsertion) {
  Rng rng(14);
  const auto canaries = MakeCanaries(25, 10, rng);
  ASSERT_EQ(canaries.size(), 25u);
  std::set<std::string> ids;
  for (const Canary& c : canaries) {
    ids.insert(c.id);
    EXPECT_EQ(c.secret.size(), 8u);
    EXPECT_EQ(c.doctor_text(), "secret code " + c.id + " is " + c.secret);
    EXPECT_EQ(c.prefix(), DialoguePrompt(c.patient_text()) + " secret code " + c.id + " is");
  }
  EXPECT_EQ(ids.size(), 25u);
  const std::vector<DialogueExample> corpus = {{"a", "hello", "world"}};
  const auto out = InsertCanaries(corpus, canaries);
  EXPECT_EQ(out.size(), 1u + 250u);
  EXPECT_EQ(out[0], corpus[0]);
}

TEST(CanaryTest, CollisionIsRejected) {
  Rng rng(15);
  const auto canaries = MakeCanaries(2, 1, rng);
  const std::vector<DialogueExample> corpus = {
      {"a", "what is it", "the " + canaries[1].doctor_text()}};
  try {
    InsertCanaries(corpus, canaries);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCanaryCollision);
  }
}

TEST(CanaryTest, UntrainedModelExtractsNothing) {
  Rng rng(16);
  const auto canaries = MakeCanaries(25, 1, rng);
  const Model m = RandomModel(17, AttackConfigModel());
  EXPECT_EQ(CountExtractions(m, canaries), 0);
}

TEST(CanaryTest, OverfitModelExtractsRepeatedCanaries) {
  Rng rng(18);
  const auto canaries = MakeCanaries(3, 20, rng);
  const auto corpus = InsertCanaries({}, canaries);
  Model m = RandomModel(19, AttackConfigModel());
  Rng erng(20);
  const double exposure_before = CanaryExposure(m, canaries[0], 63, erng);
  TrainNll(m, Encode(corpus),
           {.adam = {.learning_rate = 1e-2}, .batch_size = 8, .steps = 500, .seed = 21});
  EXPECT_GE(CountExtractions(m, canaries), 1);
  Rng erng2(20);
  const double exposure_after = CanaryExposure(m, canaries[0], 63, erng2);
  EXPECT_GT(exposure_after, exposure_before);
  EXPECT_DOUBLE_EQ(exposure_after, 6.0);
}

}  // namespace
}  // namespace dprlhf
