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


// Annotation-free preference pairs: expert responses paired with filtered
// generations from a non-expert generator.

#ifndef DPRLHF_PREFBUILD_PREFBUILD_H_
#define DPRLHF_PREFBUILD_PREFBUILD_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dprlhf/common/rng.h"
#include "dprlhf/evalmetrics/metrics.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/sampling.h"
#include "dprlhf/tinylm/tokenizer.h"

namespace dprlhf {

struct DialogueExample {
  std::string conversation_id;
  std::string patient_text;
  std::string doctor_text;
  bool operator==(const DialogueExample&) const = default;
};

struct PreferencePair {
  std::string conversation_id;
  std::string prompt;  // patient text
  std::string chosen;
  std::string rejected;
  double judge_margin = 0.0;
  double similarity = 0.0;
  bool operator==(const PreferencePair&) const = default;
};

// Collapses whitespace runs to one space, trims, and removes other control
// characters. Case is preserved. Idempotent.
std::string NormalizeText(std::string_view raw);

// "[Patient]: {patient}\n[Doctor]:" and the response continuation
// " {response}" + EOS used for every dialogue-conditioned model.
std::string DialoguePrompt(std::string_view patient_text);
TokenSeq EncodeDialogue(std::string_view patient_text,
                        std::string_view response_text);
TokenSeq EncodeDialoguePrompt(std::string_view patient_text);

// Non-expert generation prompt.
std::string RejectedPrompt(std::string_view patient_text);

// Text generator: returns the continuation (without the prompt) of
// `prompt_text`.
using Generator = std::function<std::string(
    const std::string& prompt_text, const SamplingOptions& options, Rng& rng)>;

// Samples from `model`, dropping EOS and truncating at the first newline
// (a new turn marker).
Generator ModelGenerator(const Model& model);

struct GenerationConfig {
  double temperature = 0.7;
  double top_p = 0.95;
  std::size_t max_new_tokens = 256;
  // Cap the rejected length at the chosen response's byte length.
  bool match_length = true;
  int retries = 3;
};

// Normalized non-empty continuation of RejectedPrompt(patient). Throws
// kGenerationFailure when every attempt is empty.
std::string GenerateRejected(const Generator& generator,
                             std::string_view patient_text,
                             const GenerationConfig& config, Rng& rng,
                             std::size_t length_hint = 0);

enum class DropReason { kNone, kTooShort, kRefusal, kRepetition, kSimilarity, kJudge };

std::string DropReasonName(DropReason reason);

class RefusalPatterns {
 public:
  RefusalPatterns() = default;
  explicit RefusalPatterns(std::vector<std::string> phrases);
  // One phrase per line, '#' comments. Throws kMissingPrerequisite.
  static RefusalPatterns Load(const std::filesystem::path& path);
  bool Matches(std::string_view text) const;
  const std::vector<std::string>& phrases() const { return phrases_; }

 private:
  std::vector<std::string> phrases_;
};

struct DegenerateConfig {
  std::size_t min_words = 10;
  std::size_t max_ngram_repeats = 3;  // over word 4-grams
  double min_distinct_ratio = 0.4;
};

// Checks refusal, then length, then repetition; the first hit is returned.
DropReason DegenerateFilter(std::string_view response,
                            const RefusalPatterns& refusals,
                            const DegenerateConfig& config = {});

// Highest count of any word 4-gram and distinct-word ratio.
std::size_t MaxNgramCount(std::string_view text, std::size_t n = 4);
double DistinctWordRatio(std::string_view text);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> Embed(std::string_view text) const = 0;
};

// Hashed bag of lowercase character n-grams (FNV-1a), l2-normalised. Text
// with no n-grams embeds to the zero vector.
class HashedNgramEmbedder : public Embedder {
 public:
  explicit HashedNgramEmbedder(std::size_t dim = 512, std::size_t min_n = 3,
                               std::size_t max_n = 5);
  std::vector<double> Embed(std::string_view text) const override;

 private:
  std::size_t dim_, min_n_, max_n_;
};

// Zero when either vector is zero.
double Cosine(std::span<const double> a, std::span<const double> b);

struct JudgeConfig {
  double length_weight = 0.4;
  double density_weight = 0.4;
  double refusal_weight = 0.2;
  double length_lo = 10.0;
  double length_hi = 120.0;
  // Fraction of words covered by lexicon terms at which density saturates.
  double density_saturation = 0.15;
  double min_margin = 0.20;
};

struct JudgeBreakdown {
  double length_score = 0.0;
  double density_score = 0.0;
  bool refusal = false;
  double score = 0.0;
};

JudgeBreakdown JudgeScore(std::string_view response, const EntityLexicon& lexicon,
                          const RefusalPatterns& refusals,
                          const JudgeConfig& config = {});

// Inclusive threshold; a tiny tolerance absorbs rounding in the difference.
bool JudgeKeep(double margin, const JudgeConfig& config = {});

struct PrefBuildConfig {
  GenerationConfig generation;
  DegenerateConfig degenerate;
  JudgeConfig judge;
  double similarity_threshold = 0.90;
  bool judge_enabled = true;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::map<std::string, std::size_t> dropped;  // reason -> count
};

struct PrefBuildResult {
  std::vector<PreferencePair> pairs;
  FilterReport report;
};

// For every example: generate a rejected response (seed stream i), then drop
// by degeneracy, similarity >= threshold, and judge margin, in that order.
// Generation runs in parallel; output keeps input order.
PrefBuildResult BuildPreferencePairs(std::span<const DialogueExample> examples,
                                     const Generator& generator,
                                     const Embedder& embedder,
                                     const EntityLexicon& lexicon,
                                     const RefusalPatterns& refusals,
                                     const PrefBuildConfig& config,
                                     uint64_t seed);

struct Splits {
  std::vector<DialogueExample> train, validation, test;
};

// Shuffles the distinct conversation ids and cuts them by the ratios, so each
// conversation lands in exactly one split. Within a split, input order is
// kept. Throws kTooFewGroups when there are fewer groups than non-zero
// ratios and kInvalidArgument when ratios do not sum to 1.
Splits GroupSplit(std::span<const DialogueExample> examples,
                  std::array<double, 3> ratios, Rng& rng);

// JSONL with {conversation_id, patient, doctor}. Writers replace byte
// sequences that are not valid UTF-8 (possible in sampled text) with U+FFFD.
std::vector<DialogueExample> ReadDialogues(const std::filesystem::path& path);
void WriteDialogues(const std::filesystem::path& path,
                    std::span<const DialogueExample> examples);
std::vector<PreferencePair> ReadPairs(const std::filesystem::path& path);
void WritePairs(const std::filesystem::path& path,
                std::span<const PreferencePair> pairs);
void WriteFilterReport(const std::filesystem::path& path,
                       const FilterReport& report);

}  // namespace dprlhf

#endif  // DPRLHF_PREFBUILD_PREFBUILD_H_
