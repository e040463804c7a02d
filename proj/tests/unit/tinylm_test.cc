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


#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"
#include "dprlhf/tinylm/checkpoint.h"
#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/sampling.h"
#include "dprlhf/tinylm/tokenizer.h"
#include "dprlhf/tinylm/train.h"
#include "../support/test_models.h"

namespace dprlhf {
namespace {

using testing::CheckGradient;
using testing::RandomModel;
using testing::RandomSeq;
using testing::TinyConfig;

TEST(TokenizerTest, EmptyAndAscii) {
  EXPECT_TRUE(Tokenize("").tokens.empty());
  EXPECT_EQ(Tokenize("ab").tokens, (std::vector<int>{97, 98}));
}

TEST(TokenizerTest, RoundTripOnRandomBytes) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s(rng.UniformInt(64), '\0');
    for (char& c : s) c = static_cast<char>(rng.UniformInt(256));
    EXPECT_EQ(Detokenize(Tokenize(s)), s);
  }
}

TEST(TokenizerTest, ExampleEncodingMarksPrompt) {
  const TokenSeq s = EncodeExample("hi", "yo");
  ASSERT_EQ(s.size(), 6u);
  EXPECT_EQ(s.tokens.front(), kBosToken);
  EXPECT_EQ(s.tokens.back(), kEosToken);
  EXPECT_EQ(s.prompt_len, 3u);
  EXPECT_EQ(Detokenize(s), "hiyo");
}

TEST(ForwardTest, CausalMasking) {
  const Model m = RandomModel(1);
  Rng rng(2);
  TokenSeq s = RandomSeq(rng, 0, 20);
  const std::vector<double> base = ForwardLogits(m, s);
  const std::size_t v = m.config.vocab_size;
  for (std::size_t t : {0u, 5u, 19u}) {
    TokenSeq p = s;
    p.tokens[t] = (p.tokens[t] + 17) % 256;
    const std::vector<double> changed = ForwardLogits(m, p);
    for (std::size_t row = 0; row < t; ++row) {
      for (std::size_t j = 0; j < v; ++j) {
        ASSERT_EQ(base[row * v + j], changed[row * v + j]) << t << " " << row;
      }
    }
    double diff = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      diff += std::abs(base[t * v + j] - changed[t * v + j]);
    }
    EXPECT_GT(diff, 0.0);
  }
}

TEST(ForwardTest, ZeroHeadGivesZeroLogits) {
  const Model m = InitModel(TinyConfig(), 3, /*zero_lm_head=*/true);
  const std::vector<double> logits = ForwardLogits(m, Tokenize("hello"));
  for (double x : logits) EXPECT_EQ(x, 0.0);
}

TEST(ForwardTest, RejectsOverlongSequence) {
  const Model m = InitModel(TinyConfig(), 3);
  TokenSeq s;
  s.tokens.assign(m.config.max_seq_len + 1, 65);
  try {
    ForwardLogits(m, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSequenceTooLong);
  }
}

TEST(ForwardTest, Deterministic) {
  const Model a = RandomModel(4);
  const Model b = RandomModel(4);
  const TokenSeq s = Tokenize("deterministic");
  EXPECT_EQ(ForwardLogits(a, s), ForwardLogits(b, s));
}

TEST(NllTest, UniformLogitsOver256Symbols) {
  ModelConfig c = TinyConfig();
  c.vocab_size = 256;
  const Model m = InitModel(c, 5, /*zero_lm_head=*/true);
  EXPECT_NEAR(NllLoss(m, Tokenize("uniform text"), false), std::log(256.0),
              1e-12);
}

TEST(NllTest, ConfidentCorrectLogitsGiveNearZeroLoss) {
  ModelConfig c = TinyConfig();
  Model m = InitModel(c, 6, /*zero_lm_head=*/true);
  // Hidden states are normalised, so a large bias-like direction through the
  // final norm bias makes one class dominate.
  std::span<double> bias = m.base.Mutable("ln_f.b");
  std::span<double> head = m.base.Mutable("lm_head.w");
  std::span<double> gain = m.base.Mutable("ln_f.g");
  for (double& g : gain) g = 0.0;
  bias[0] = 1.0;
  head[65 * c.d_model + 0] = 60.0;
  TokenSeq s;
  s.tokens = {65, 65, 65, 65};
  EXPECT_LT(NllLoss(m, s, false), 1e-20);
}

// Direct summation over softmax probabilities.
double OracleNll(const std::vector<double>& logits, const TokenSeq& s,
                 std::size_t v, std::size_t begin) {
  long double total = 0.0L;
  for (std::size_t t = begin; t < s.size(); ++t) {
    long double z = 0.0L;
    for (std::size_t j = 0; j < v; ++j) z += std::exp((long double)logits[(t - 1) * v + j]);
    const long double p =
        std::exp((long double)logits[(t - 1) * v + s.tokens[t]]) / z;
    total -= std::log(p);
  }
  return static_cast<double>(total / (s.size() - begin));
}

TEST(NllTest, MatchesIndependentCrossEntropy) {
  const Model m = RandomModel(8);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    TokenSeq s = RandomSeq(rng, 4, 12);
    const std::vector<double> logits = ForwardLogits(m, s);
    const std::size_t v = m.config.vocab_size;
    EXPECT_NEAR(NllLoss(m, s, false), OracleNll(logits, s, v, 1),
                1e-10 * NllLoss(m, s, false));
    EXPECT_NEAR(NllLoss(m, s, true), OracleNll(logits, s, v, 4),
                1e-10 * NllLoss(m, s, true));
  }
}

TEST(NllTest, EmptyResponseRejected) {
  const Model m = RandomModel(8);
  TokenSeq s = Tokenize("abc");
  s.prompt_len = 3;
  try {
    NllLoss(m, s, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTarget);
  }
}

double LossAt(Model& m, const ParamSet& layout, const std::vector<double>& x,
              const TokenSeq& s, bool response_only, const ForwardOptions& o) {
  ParamSet values = layout;
  std::copy(x.begin(), x.end(), values.flat().begin());
  SetTrainable(m, values);
  return NllLossGrad(m, s, response_only, o).loss;
}

void ExpectGradientMatches(Model m, const TokenSeq& s, bool response_only,
                           const ForwardOptions& opts, std::size_t coords,
                           uint64_t seed) {
  const ParamSet layout = TrainableValues(m);
  std::vector<double> x(layout.flat().begin(), layout.flat().end());
  const ExampleGrad g = NllLossGrad(m, s, response_only, opts);
  ASSERT_TRUE(g.grads.SameLayout(layout));
  const std::vector<double> analytic(g.grads.flat().begin(),
                                     g.grads.flat().end());
  const auto report = CheckGradient(
      x, analytic, [&] { return LossAt(m, layout, x, s, response_only, opts); },
      coords, seed);
  EXPECT_EQ(report.failures, 0u) << report.first_failure
                                 << " worst rel " << report.worst_rel;
}

TEST(GradientTest, FullModeMatchesFiniteDifferences) {
  const Model m = RandomModel(10);
  Rng rng(11);
  ExpectGradientMatches(m, RandomSeq(rng, 3, 10), false, {}, 250, 12);
}

TEST(GradientTest, ResponseOnlyMatchesFiniteDifferences) {
  const Model m = RandomModel(13);
  Rng rng(14);
  ExpectGradientMatches(m, RandomSeq(rng, 5, 11), true, {}, 250, 15);
}

TEST(GradientTest, AdapterModeMatchesFiniteDifferences) {
  Model m = RandomModel(16);
  AttachAdapters(m, 2, 4.0, 0.0, "qkvo", 17);
  testing::RandomizeAdapters(m, 18);
  Rng rng(19);
  ExpectGradientMatches(m, RandomSeq(rng, 3, 10), true, {}, 250, 20);
}

TEST(GradientTest, AdapterDropoutMatchesFiniteDifferences) {
  Model m = RandomModel(21);
  AttachAdapters(m, 2, 4.0, 0.3, "qv", 22);
  testing::RandomizeAdapters(m, 23);
  ForwardOptions opts;
  opts.training = true;
  opts.dropout_seed = 24;
  Rng rng(25);
  ExpectGradientMatches(m, RandomSeq(rng, 3, 10), true, opts, 200, 26);
}

TEST(GradientTest, HiddenUpstreamMatchesFiniteDifferences) {
  const Model m = RandomModel(27);
  Rng rng(28);
  const TokenSeq s = RandomSeq(rng, 0, 8);
  const std::size_t d = m.config.d_model;
  std::vector<double> w(8 * d);
  for (double& x : w) x = rng.Normal();
  auto f = [&](const Model& mm) {
    ForwardOptions o;
    o.compute_logits = false;
    const ForwardCache c = Forward(mm, s.tokens, o);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * c.hidden[i];
    return acc;
  };
  ForwardOptions o;
  o.compute_logits = false;
  const ForwardCache c = Forward(m, s.tokens, o);
  ParamSet grads = TrainableLayout(m);
  Backward(m, c, {}, w, grads);
  const ParamSet layout = TrainableValues(m);
  std::vector<double> x(layout.flat().begin(), layout.flat().end());
  const std::vector<double> analytic(grads.flat().begin(), grads.flat().end());
  Model work = m;
  const auto report = CheckGradient(
      x, analytic,
      [&] {
        ParamSet v = layout;
        std::copy(x.begin(), x.end(), v.flat().begin());
        SetTrainable(work, v);
        return f(work);
      },
      250, 29);
  EXPECT_EQ(report.failures, 0u) << report.first_failure;
}

TEST(PerExampleTest, SingletonMatchesSingleGradient) {
  const Model m = RandomModel(30);
  const TokenSeq s = EncodeExample("q", "answer");
  const auto grads = PerExampleGrads(m, std::span(&s, 1), LossKind::kNllResponseOnly);
  ASSERT_EQ(grads.size(), 1u);
  EXPECT_EQ(grads[0].grads, NllLossGrad(m, s, true).grads);
}

TEST(PerExampleTest, DuplicatesAreIdenticalAndOrderPreserved) {
  const Model m = RandomModel(31);
  const std::vector<TokenSeq> batch = {EncodeExample("a", "xy"),
                                       EncodeExample("b", "zw"),
                                       EncodeExample("a", "xy")};
  const auto grads = PerExampleGrads(m, batch, LossKind::kNll);
  EXPECT_EQ(grads[0].grads, grads[2].grads);
  EXPECT_FALSE(grads[0].grads == grads[1].grads);
  EXPECT_EQ(grads[1].grads, NllLossGrad(m, batch[1], false).grads);
}

TEST(PerExampleTest, SerialAndParallelBitwiseEqual) {
  Model m = RandomModel(32);
  AttachAdapters(m, 4, 8.0, 0.1, "qkvo", 33);
  testing::RandomizeAdapters(m, 34);
  Rng rng(35);
  std::vector<TokenSeq> batch;
  for (int i = 0; i < 12; ++i) batch.push_back(RandomSeq(rng, 2, 6 + i));
  const auto serial =
      PerExampleGrads(m, batch, LossKind::kNll, Exec::kSerial, true, 36);
  const auto parallel =
      PerExampleGrads(m, batch, LossKind::kNll, Exec::kParallel, true, 36);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(serial[i].grads, parallel[i].grads);
    EXPECT_EQ(serial[i].loss, parallel[i].loss);
  }
}

TEST(AdapterTest, FreezeLeavesOnlyAdapterGradients) {
  Model m = RandomModel(37);
  AttachAdapters(m, 2, 2.0, 0.0, "qv", 38);
  const ParamSet layout = TrainableLayout(m);
  for (const ParamEntry& e : layout.entries()) {
    EXPECT_NE(e.name.find("lora_"), std::string::npos) << e.name;
  }
  const ParamSet base_before = m.base;
  const auto g = NllLossGrad(m, EncodeExample("p", "resp"), true);
  ApplyDelta(m, g.grads);
  EXPECT_EQ(m.base, base_before);
}

TEST(AdapterTest, FreshAdaptersLeaveLogitsUnchanged) {
  Model m = RandomModel(39);
  const TokenSeq s = Tokenize("same output");
  const auto before = ForwardLogits(m, s);
  AttachAdapters(m, 4, 8.0, 0.0, "qkvo", 40);
  EXPECT_EQ(ForwardLogits(m, s), before);
}

TEST(MergeTest, ZeroAdapterGivesBase) {
  Model m = RandomModel(41);
  AttachAdapters(m, 2, 2.0, 0.0, "qkvo", 42);
  EXPECT_EQ(MergeAdapters(m.config, m.base, m.adapters), m.base);
}

TEST(MergeTest, HandComputedRankOneUpdate) {
  ModelConfig c;
  c.d_model = 2;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_ff = 2;
  c.max_seq_len = 4;
  Model m = InitModel(c, 43);
  AttachAdapters(m, 1, 1.0, 0.0, "q", 44);
  // A = [1 2], B = [3; 4], scale 1 -> B A = [[3 6], [4 8]].
  auto a = m.adapters.Mutable(AdapterA(0, 'q'));
  auto b = m.adapters.Mutable(AdapterB(0, 'q'));
  a[0] = 1.0;
  a[1] = 2.0;
  b[0] = 3.0;
  b[1] = 4.0;
  const ParamSet merged = MergeAdapters(m.config, m.base, m.adapters);
  const auto w0 = m.base.Get(ProjectionWeight(0, 'q'));
  const auto w1 = merged.Get(ProjectionWeight(0, 'q'));
  const double expected[4] = {3.0, 6.0, 4.0, 8.0};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w1[i] - w0[i], expected[i]);
}

TEST(MergeTest, MergedLogitsMatchOnTheFly) {
  Model m = RandomModel(45);
  AttachAdapters(m, 4, 8.0, 0.0, "qkvo", 46);
  testing::RandomizeAdapters(m, 47);
  Rng rng(48);
  const TokenSeq s = RandomSeq(rng, 0, 24);
  const auto live = ForwardLogits(m, s);
  Model merged;
  merged.config = m.config;
  merged.config.adapter_rank = 0;
  merged.base = MergeAdapters(m.config, m.base, m.adapters);
  const auto flat = ForwardLogits(merged, s);
  ASSERT_EQ(live.size(), flat.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    ASSERT_NEAR(live[i], flat[i], 1e-9);
  }
}

TEST(SamplingTest, IncrementalDecoderMatchesFullForward) {
  Model m = RandomModel(49);
  AttachAdapters(m, 2, 4.0, 0.0, "qv", 50);
  testing::RandomizeAdapters(m, 51);
  Rng rng(52);
  const TokenSeq s = RandomSeq(rng, 0, 30);
  const auto full = ForwardLogits(m, s);
  IncrementalDecoder dec(m);
  const std::size_t v = m.config.vocab_size;
  for (std::size_t t = 0; t < s.size(); ++t) {
    const auto& row = dec.Push(s.tokens[t]);
    for (std::size_t j = 0; j < v; ++j) {
      ASSERT_NEAR(row[j], full[t * v + j], 1e-12);
    }
  }
}

TEST(SamplingTest, NucleusFrequenciesMatchSoftmax) {
  // Three-symbol distribution, top_p = 1: Pearson chi-square with 2 degrees
  // of freedom; 13.82 is the 0.999 quantile.
  const std::vector<double> logits = {0.3, -1.1, 1.4};
  std::vector<double> p(3);
  LogSoftmaxRow(logits, p);
  for (double& x : p) x = std::exp(x);
  Rng rng(53);
  const int n = 60000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[NucleusDraw(p, 1.0, rng)];
  double chi2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double e = n * p[k];
    chi2 += (counts[k] - e) * (counts[k] - e) / e;
  }
  EXPECT_LT(chi2, 13.82);
}

TEST(SamplingTest, NucleusTruncatesTail) {
  const std::vector<double> p = {0.5, 0.3, 0.15, 0.05};
  Rng rng(54);
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < 20000; ++i) ++counts[NucleusDraw(p, 0.8, rng)];
  EXPECT_EQ(counts[2], 0);
  EXPECT_EQ(counts[3], 0);
  EXPECT_NEAR(counts[0] / 20000.0, 0.5 / 0.8, 0.02);
}

TEST(SamplingTest, LowTemperatureIsGreedy) {
  const Model m = RandomModel(55);
  const TokenSeq prompt = EncodePrompt("start");
  Rng rng(56);
  SamplingOptions o;
  o.max_new = 12;
  o.temperature = 1e-6;
  EXPECT_EQ(Sample(m, prompt, o, rng), Greedy(m, prompt, 12));
}

TEST(SamplingTest, SameSeedSameSample) {
  const Model m = RandomModel(57);
  const TokenSeq prompt = EncodePrompt("x");
  SamplingOptions o;
  o.max_new = 20;
  o.temperature = 0.7;
  o.top_p = 0.95;
  Rng a(58);
  Rng b(58);
  const TokenSeq sa = Sample(m, prompt, o, a);
  EXPECT_EQ(sa, Sample(m, prompt, o, b));
  EXPECT_EQ(sa.prompt_len, prompt.size());
  EXPECT_LE(sa.size(), prompt.size() + 20);
}

TEST(SamplingTest, RejectsBadArguments) {
  const Model m = RandomModel(59);
  Rng rng(60);
  SamplingOptions o;
  o.temperature = 0.0;
  EXPECT_THROW(Sample(m, EncodePrompt("x"), o, rng), Error);
  o.temperature = 1.0;
  o.top_p = 1.5;
  EXPECT_THROW(Sample(m, EncodePrompt("x"), o, rng), Error);
  TokenSeq full;
  full.tokens.assign(m.config.max_seq_len, 66);
  EXPECT_THROW(Greedy(m, full, 1), Error);
}

TEST(CheckpointTest, RoundTripPreservesModel) {
  Model m = RandomModel(61);
  AttachAdapters(m, 2, 4.0, 0.05, "qv", 62);
  AttachHead(m, HeadKind::kReward);
  Checkpoint ck;
  ck.meta["stage"] = "rm";
  PutModel(ck, m);
  const Checkpoint back = DeserializeCheckpoint(SerializeCheckpoint(ck));
  const Model r = GetModel(back);
  EXPECT_EQ(r.config, m.config);
  EXPECT_EQ(r.base, m.base);
  EXPECT_EQ(r.adapters, m.adapters);
  EXPECT_EQ(r.head, m.head);
  EXPECT_EQ(r.head_kind, HeadKind::kReward);
  EXPECT_EQ(back.meta["stage"], "rm");
}

TEST(CheckpointTest, DetectsCorruption) {
  Checkpoint ck;
  PutModel(ck, RandomModel(63));
  std::string bytes = SerializeCheckpoint(ck);
  bytes[bytes.size() / 2] ^= 0x5a;
  try {
    DeserializeCheckpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCorruptCheckpoint);
  }
  EXPECT_THROW(DeserializeCheckpoint(bytes.substr(0, 10)), Error);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  ParamSet p(ParamMode::kFull);
  p.Add("x", {3});
  ParamSet g = p.ZerosLike();
  g.flat()[0] = 0.5;
  g.flat()[1] = -0.01;
  Adam adam(p, {.learning_rate = 0.1, .max_grad_norm = 0.0});
  adam.Step(p, g);
  EXPECT_NEAR(p.flat()[0], -0.1, 1e-6);
  EXPECT_NEAR(p.flat()[1], 0.1, 1e-5);
  EXPECT_EQ(p.flat()[2], 0.0);
}

TEST(AdamTest, MinimizesQuadratic) {
  ParamSet p(ParamMode::kFull);
  p.Add("x", {2});
  p.flat()[0] = 3.0;
  p.flat()[1] = -2.0;
  Adam adam(p, {.learning_rate = 0.05, .max_grad_norm = 0.0});
  for (int i = 0; i < 2000; ++i) {
    ParamSet g = p;
    g.flat()[0] = 2.0 * (p.flat()[0] - 1.0);
    g.flat()[1] = 2.0 * (p.flat()[1] + 0.5);
    adam.Step(p, g);
  }
  EXPECT_NEAR(p.flat()[0], 1.0, 1e-3);
  EXPECT_NEAR(p.flat()[1], -0.5, 1e-3);
}

TEST(TrainNllTest, LossDecreasesOnSmallSet) {
  Model m = RandomModel(80);
  Rng rng(81);
  std::vector<TokenSeq> data;
  for (int i = 0; i < 4; ++i) data.push_back(RandomSeq(rng, 2, 12, 20));
  double before = 0.0;
  for (const auto& s : data) before += NllLoss(m, s, true);
  const auto losses = TrainNll(m, data, {.batch_size = 4, .steps = 60, .seed = 82});
  ASSERT_EQ(losses.size(), 60u);
  double after = 0.0;
  for (const auto& s : data) after += NllLoss(m, s, true);
  EXPECT_LT(after, 0.5 * before);
}

}  // namespace
}  // namespace dprlhf
