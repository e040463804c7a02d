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
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"
#include "dprlhf/prefbuild/prefbuild.h"
#include "../support/test_models.h"

namespace dprlhf {
namespace {

RefusalPatterns Refusals() {
  return RefusalPatterns::Load(DPRLHF_DATA_DIR "/refusal_patterns.txt");
}

EntityLexicon Lexicon() {
  return EntityLexicon::Load(DPRLHF_DATA_DIR "/medical_lexicon.txt");
}

TEST(NormalizeTest, CollapsesWhitespace) {
  EXPECT_EQ(NormalizeText("a  b\n c"), "a b c");
  EXPECT_EQ(NormalizeText("  lead and trail\t"), "lead and trail");
  EXPECT_EQ(NormalizeText("bell\x07 char"), "bell char");
  EXPECT_EQ(NormalizeText("Keep Case"), "Keep Case");
}

TEST(NormalizeTest, IdempotentOnRandomStrings) {
  Rng rng(1);
  const std::string alphabet = "ab \t\n\r\x01\x1f\x7f.Z";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s(rng.UniformInt(30), ' ');
    for (char& c : s) c = alphabet[rng.UniformInt(alphabet.size())];
    const std::string once = NormalizeText(s);
    EXPECT_EQ(NormalizeText(once), once);
  }
}

TEST(PromptTest, RejectedTemplateMatchesGolden) {
  std::ifstream in(DPRLHF_SOURCE_DIR "/tests/data/rejected_prompt.golden",
                   std::ios::binary);
  ASSERT_TRUE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(RejectedPrompt("My chest hurts when I climb stairs."), ss.str());
}

TEST(PromptTest, DialogueEncoding) {
  const TokenSeq s = EncodeDialogue("cough", "rest");
  EXPECT_EQ(Detokenize(s), "[Patient]: cough\n[Doctor]: rest");
  EXPECT_EQ(s.prompt_len, 1 + DialoguePrompt("cough").size());
  EXPECT_EQ(s.tokens.back(), kEosToken);
}

TEST(GenerateTest, DeterministicAndBounded) {
  const Model m = testing::RandomModel(2, [] {
    ModelConfig c = testing::TinyConfig();
    c.max_seq_len = 400;
    return c;
  }());
  const Generator gen = ModelGenerator(m);
  GenerationConfig cfg;
  cfg.match_length = false;
  Rng a(3), b(3);
  const std::string ra = GenerateRejected(gen, "I have a headache.", cfg, a);
  const std::string rb = GenerateRejected(gen, "I have a headache.", cfg, b);
  EXPECT_EQ(ra, rb);
  // Count tokens from a raw draw as well: never more than 256 new tokens.
  SamplingOptions o;
  o.max_new = cfg.max_new_tokens;
  o.temperature = cfg.temperature;
  o.top_p = cfg.top_p;
  Rng c(4);
  const TokenSeq prompt = EncodePrompt(RejectedPrompt("x"));
  const TokenSeq out = Sample(m, prompt, o, c);
  EXPECT_LE(out.size() - out.prompt_len, 256u);
}

TEST(GenerateTest, EmptyOutputFails) {
  const Generator empty = [](const std::string&, const SamplingOptions&, Rng&) {
    return std::string(" \n ");
  };
  Rng rng(5);
  try {
    GenerateRejected(empty, "hi", GenerationConfig{}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGenerationFailure);
  }
}

TEST(GenerateTest, MatchLengthCapsTokens) {
  std::size_t seen = 0;
  const Generator spy = [&](const std::string&, const SamplingOptions& o, Rng&) {
    seen = o.max_new;
    return std::string("ok");
  };
  Rng rng(6);
  GenerateRejected(spy, "hi", GenerationConfig{}, rng, 40);
  EXPECT_EQ(seen, 40u);
  GenerateRejected(spy, "hi", GenerationConfig{}, rng, 4000);
  EXPECT_EQ(seen, 256u);
}

TEST(DegenerateTest, NineWordsTooShort) {
  EXPECT_EQ(DegenerateFilter("one two three four five six seven eight nine",
                             Refusals()),
            DropReason::kTooShort);
}

TEST(DegenerateTest, RefusalPattern) {
  EXPECT_EQ(DegenerateFilter("I am an AI and cannot give you advice on this matter "
                             "so please see someone",
                             Refusals()),
            DropReason::kRefusal);
  EXPECT_EQ(DegenerateFilter("I am an AI and cannot...", Refusals()),
            DropReason::kRefusal);
}

TEST(DegenerateTest, RepeatedSentenceVersusNormalAnswer) {
  std::string repeated;
  for (int i = 0; i < 5; ++i) repeated += "Drink more water every day. ";
  EXPECT_EQ(DegenerateFilter(repeated, Refusals()), DropReason::kRepetition);
  const std::string normal =
      "Your symptoms sound like a mild viral infection. Rest for a few days, "
      "drink plenty of fluids, and take acetaminophen for the fever if needed. "
      "If breathing becomes difficult or the fever lasts beyond three days, "
      "please see your physician promptly.";
  EXPECT_GE(LowerWords(normal).size(), 30u);
  EXPECT_EQ(DegenerateFilter(normal, Refusals()), DropReason::kNone);
}

TEST(DegenerateTest, RepetitionThresholdsOnConstructedCorpus) {
  // Four copies of one 4-gram sit at the limit; five exceed it.
  const std::string base = "alpha beta gamma delta";
  std::string four, five;
  for (int i = 0; i < 4; ++i) four += base + " w" + std::to_string(i) + " ";
  five = four + base;
  EXPECT_EQ(MaxNgramCount(four), 4u);
  EXPECT_EQ(MaxNgramCount(five), 5u);
  EXPECT_NEAR(DistinctWordRatio("a a b b"), 0.5, 1e-15);
  DegenerateConfig cfg;
  cfg.max_ngram_repeats = 4;
  EXPECT_NE(DegenerateFilter(four, Refusals(), cfg), DropReason::kRepetition);
  EXPECT_EQ(DegenerateFilter(five, Refusals(), cfg), DropReason::kRepetition);
}

TEST(EmbedTest, IdenticalAndDisjoint) {
  const HashedNgramEmbedder e;
  const auto a = e.Embed("take ibuprofen with food");
  EXPECT_NEAR(Cosine(a, a), 1.0, 1e-12);
  EXPECT_NEAR(Cosine(a, e.Embed("take ibuprofen with food")), 1.0, 1e-12);
  EXPECT_NEAR(Cosine(e.Embed("aaaa"), e.Embed("bbbb")), 0.0, 1e-12);
}

TEST(EmbedTest, ZeroVectorGivesZeroSimilarity) {
  const HashedNgramEmbedder e;
  EXPECT_EQ(Cosine(e.Embed("ab"), e.Embed("abc")), 0.0);
}

TEST(EmbedTest, SymmetryAndBound) {
  const HashedNgramEmbedder e;
  Rng rng(7);
  const std::string alphabet = "abcdef ghij";
  for (int trial = 0; trial < 300; ++trial) {
    std::string s(3 + rng.UniformInt(40), ' '), t(3 + rng.UniformInt(40), ' ');
    for (char& c : s) c = alphabet[rng.UniformInt(alphabet.size())];
    for (char& c : t) c = alphabet[rng.UniformInt(alphabet.size())];
    const auto a = e.Embed(s), b = e.Embed(t);
    EXPECT_EQ(Cosine(a, b), Cosine(b, a));
    EXPECT_LE(std::abs(Cosine(a, b)), 1.0);
  }
}

TEST(JudgeTest, EqualResponsesHaveZeroMargin) {
  const std::string r = "rest and fluids help most colds within a week or so";
  const double m = JudgeScore(r, Lexicon(), Refusals()).score -
                   JudgeScore(r, Lexicon(), Refusals()).score;
  EXPECT_EQ(m, 0.0);
  EXPECT_FALSE(JudgeKeep(m));
}

TEST(JudgeTest, InclusiveThreshold) {
  EXPECT_TRUE(JudgeKeep(0.20));
  EXPECT_TRUE(JudgeKeep(0.6 - 0.4));  // 0.19999999999999996 in binary
  EXPECT_FALSE(JudgeKeep(0.1999));
}

TEST(JudgeTest, HandCalculatedComposite) {
  // 60 words, 6 of them lexicon terms (covering 6 words): density 0.1,
  // saturating at 0.15 -> 2/3; length (60 - 10) / 110 = 5/11; no refusal.
  std::string dense;
  const char* terms[] = {"ibuprofen", "hypertension", "asthma",
                         "metformin", "ultrasound", "kidney"};
  for (int i = 0; i < 60; ++i) {
    dense += (i % 10 == 0 ? std::string(terms[i / 10]) : "word" + std::to_string(i));
    dense += ' ';
  }
  const JudgeBreakdown d = JudgeScore(dense, Lexicon(), Refusals());
  EXPECT_NEAR(d.length_score, 50.0 / 110.0, 1e-15);
  EXPECT_NEAR(d.density_score, 0.1 / 0.15, 1e-15);
  EXPECT_FALSE(d.refusal);
  const double dense_expected = 0.4 * 50.0 / 110.0 + 0.4 * (0.1 / 0.15) + 0.2;
  EXPECT_NEAR(d.score, dense_expected, 1e-15);
  // Refusal: 13 words, no terms -> length 3/110, density 0, refusal.
  const std::string refusal =
      "I am an AI so I cannot give any advice about this today";
  const JudgeBreakdown r = JudgeScore(refusal, Lexicon(), Refusals());
  EXPECT_TRUE(r.refusal);
  const double refusal_expected = 0.4 * 3.0 / 110.0;
  EXPECT_NEAR(r.score, refusal_expected, 1e-15);
  EXPECT_NEAR(d.score - r.score, dense_expected - refusal_expected, 1e-15);
}

std::vector<DialogueExample> Conversations(std::size_t groups, Rng& rng) {
  std::vector<DialogueExample> out;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t turns = 1 + rng.UniformInt(4);
    for (std::size_t t = 0; t < turns; ++t) {
      out.push_back({"conv" + std::to_string(g), "p" + std::to_string(t),
                     "d" + std::to_string(t)});
    }
  }
  return out;
}

TEST(SplitTest, GroupAtomicity) {
  std::vector<DialogueExample> ex;
  for (int t = 0; t < 5; ++t) ex.push_back({"only", "p", "d"});
  for (int g = 0; g < 4; ++g) ex.push_back({"g" + std::to_string(g), "p", "d"});
  Rng rng(8);
  const Splits s = GroupSplit(ex, {0.6, 0.2, 0.2}, rng);
  std::size_t holders = 0;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    std::size_t n = 0;
    for (const auto& e : *part) n += e.conversation_id == "only";
    EXPECT_TRUE(n == 0 || n == 5);
    holders += n == 5;
  }
  EXPECT_EQ(holders, 1u);
}

TEST(SplitTest, RatiosAtGroupGranularity) {
  Rng rng(9);
  const auto ex = Conversations(1000, rng);
  const Splits s = GroupSplit(ex, {0.8, 0.1, 0.1}, rng);
  auto groups = [](const std::vector<DialogueExample>& v) {
    std::set<std::string> ids;
    for (const auto& e : v) ids.insert(e.conversation_id);
    return ids;
  };
  const auto tr = groups(s.train), va = groups(s.validation), te = groups(s.test);
  EXPECT_NEAR(tr.size() / 1000.0, 0.8, 0.02);
  EXPECT_NEAR(va.size() / 1000.0, 0.1, 0.02);
  EXPECT_NEAR(te.size() / 1000.0, 0.1, 0.02);
  for (const auto& id : tr) {
    EXPECT_FALSE(va.count(id));
    EXPECT_FALSE(te.count(id));
  }
  for (const auto& id : va) EXPECT_FALSE(te.count(id));
  EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), ex.size());
}

TEST(SplitTest, NeverLeaksAcrossSplitsAndDeterministic) {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng data_rng(seed);
    const auto ex = Conversations(3 + seed, data_rng);
    Rng a(seed + 100), b(seed + 100);
    const Splits s = GroupSplit(ex, {0.5, 0.25, 0.25}, a);
    const Splits t = GroupSplit(ex, {0.5, 0.25, 0.25}, b);
    EXPECT_EQ(s.train, t.train);
    EXPECT_FALSE(s.train.empty() || s.validation.empty() || s.test.empty());
    std::map<std::string, int> owner;
    int k = 0;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      for (const auto& e : *part) {
        auto [it, fresh] = owner.emplace(e.conversation_id, k);
        EXPECT_EQ(it->second, k);
      }
      ++k;
    }
  }
}

TEST(SplitTest, TooFewGroups) {
  const std::vector<DialogueExample> ex = {{"a", "p", "d"}, {"b", "p", "d"}};
  Rng rng(10);
  try {
    GroupSplit(ex, {0.8, 0.1, 0.1}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooFewGroups);
  }
}

TEST(PipelineTest, EmptyInputEmptyOutput) {
  const Generator gen = [](const std::string&, const SamplingOptions&, Rng&) {
    return std::string("unused");
  };
  const auto r = BuildPreferencePairs({}, gen, HashedNgramEmbedder(), Lexicon(),
                                      Refusals(), PrefBuildConfig{}, 1);
  EXPECT_TRUE(r.pairs.empty());
  EXPECT_EQ(r.report.input, 0u);
  Rng rng(11);
  const Splits s = GroupSplit({}, {0.8, 0.1, 0.1}, rng);
  EXPECT_TRUE(s.train.empty());
}

TEST(PipelineTest, OutputsSatisfyPairInvariants) {
  const std::vector<std::string> canned = {
      "ok",                                                       // too short
      "I am an AI and I cannot say much about this at all today",  // refusal
      "water water water water water water water water water water water",
      "You should rest and drink fluids and see how you feel in a few days time.",
  };
  const Generator gen = [&](const std::string& prompt, const SamplingOptions&,
                            Rng&) {
    return canned[prompt.size() % canned.size()];
  };
  std::vector<DialogueExample> ex;
  Rng rng(12);
  for (int i = 0; i < 40; ++i) {
    std::string patient = "patient question " + std::string(i % 7, 'x');
    ex.push_back({"c" + std::to_string(i), patient,
                  "Your hypertension needs lisinopril and a blood test; check "
                  "your kidney function with an ultrasound and monitor blood "
                  "pressure monitoring daily for two weeks."});
  }
  const PrefBuildConfig cfg;
  const auto a = BuildPreferencePairs(ex, gen, HashedNgramEmbedder(), Lexicon(),
                                      Refusals(), cfg, 13);
  const auto b = BuildPreferencePairs(ex, gen, HashedNgramEmbedder(), Lexicon(),
                                      Refusals(), cfg, 13);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_GT(a.pairs.size(), 0u);
  std::size_t dropped = 0;
  for (const auto& [reason, n] : a.report.dropped) dropped += n;
  EXPECT_EQ(dropped + a.report.kept, ex.size());
  for (const auto& p : a.pairs) {
    EXPECT_NE(p.chosen, p.rejected);
    EXPECT_LT(p.similarity, 0.90);
    EXPECT_GE(p.judge_margin, 0.20 - 1e-12);
    EXPECT_EQ(DegenerateFilter(p.rejected, Refusals()), DropReason::kNone);
  }
}

TEST(IoTest, JsonlRoundTrip) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "dprlhf_prefbuild_io";
  std::filesystem::remove_all(dir);
  const std::vector<DialogueExample> ex = {{"a", "p \"q\"", "d\nx"}, {"b", "p2", "d2"}};
  WriteDialogues(dir / "d.jsonl", ex);
  EXPECT_EQ(ReadDialogues(dir / "d.jsonl"), ex);
  const std::vector<PreferencePair> pairs = {{"a", "p", "c", "r", 0.25, 0.5}};
  WritePairs(dir / "p.jsonl", pairs);
  EXPECT_EQ(ReadPairs(dir / "p.jsonl"), pairs);
  std::filesystem::remove_all(dir);
}

TEST(IoTest, InvalidUtf8IsReplacedNotFatal) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "dprlhf_prefbuild_utf8";
  std::filesystem::remove_all(dir);
  const std::vector<PreferencePair> pairs = {{"a", "p", "ok", "bad \x97 byte", 0.1, 0.2}};
  WritePairs(dir / "p.jsonl", pairs);
  const std::vector<PreferencePair> back = ReadPairs(dir / "p.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].rejected, "bad \xEF\xBF\xBD byte");
  EXPECT_EQ(back[0].chosen, "ok");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dprlhf
