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


// Membership-inference attacks, ROC analysis and canary probing.
//
// Every attack scores the response tokens of a dialogue record and is
// oriented so that a higher score means "more likely a training member".

#ifndef DPRLHF_ATTACKS_ATTACKS_H_
#define DPRLHF_ATTACKS_ATTACKS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dprlhf/common/parallel.h"
#include "dprlhf/common/rng.h"
#include "dprlhf/common/stats.h"
#include "dprlhf/prefbuild/prefbuild.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/tokenizer.h"

namespace dprlhf {

enum class AttackKind { kLoss, kRef, kMinK, kMinKpp, kZlib, kLowercase };

std::string_view AttackName(AttackKind kind);
// Throws kInvalidArgument on unknown names.
AttackKind ParseAttack(std::string_view name);
const std::array<AttackKind, 6>& AllAttacks();

struct AttackScore {
  std::string example_id;
  double score = 0.0;
  bool is_member = false;
  AttackKind attack = AttackKind::kLoss;
};

struct AttackConfig {
  double mink_fraction = 0.2;
  double sigma_floor = 1e-6;
  int bootstrap_iterations = 1000;
  double confidence = 0.95;
  double max_fpr = 0.01;
};

// Per response token: log-prob of the observed token and the mean and
// standard deviation of log p under the model's next-token distribution.
struct TokenStats {
  std::vector<double> logp, mu, sigma;
};
TokenStats ResponseTokenStats(const Model& model, const TokenSeq& seq);

double LossAttack(const Model& model, const TokenSeq& seq);
double RefAttack(const Model& model, const Model& reference, const TokenSeq& seq);

// Mean of the floor(k T) smallest values. Throws kTooShortSequence when that
// count is zero and kInvalidArgument unless 0 < k <= 1.
double MinKFromLogProbs(std::span<const double> logp, double k);
double MinKppFromStats(const TokenStats& stats, double k, double sigma_floor);
double MinKAttack(const Model& model, const TokenSeq& seq, double k);
double MinKppAttack(const Model& model, const TokenSeq& seq, double k,
                    double sigma_floor = 1e-6);

// DEFLATE (zlib, default level) output size in bytes. Throws kEmptyText.
std::size_t CompressedLength(std::string_view text);

// -nll(response) / CompressedLength(response).
double ZlibAttack(const Model& model, std::string_view patient,
                  std::string_view response);
// nll(lowercased record) - nll(record).
double LowercaseAttack(const Model& model, std::string_view patient,
                       std::string_view response);

// All six scores for each record, grouped by attack in AllAttacks() order.
std::vector<AttackScore> ScoreRecords(const Model& model, const Model& reference,
                                      std::span<const DialogueExample> records,
                                      std::span<const bool> is_member,
                                      const AttackConfig& config,
                                      Exec exec = Exec::kParallel);

struct RocResult {
  double auc = 0.5;
  double tpr_at_fpr = 0.0;
  std::vector<std::pair<double, double>> curve;  // (fpr, tpr), from (0, 0)
};

// AUC by the rank statistic with ties counted one half. The TPR is the
// largest one reachable with a threshold whose FPR does not exceed max_fpr.
// Throws kSingleClass when either side is empty.
RocResult RocAnalysis(std::span<const double> members,
                      std::span<const double> nonmembers, double max_fpr = 0.01);
RocResult RocAnalysis(std::span<const AttackScore> scores, double max_fpr = 0.01);

// Percentile interval of the AUC over resamples drawn separately within the
// member and non-member sides. The same seed and pool sizes give the same
// resamples, so intervals for different attacks are paired.
Interval BootstrapAuc(std::span<const double> members,
                      std::span<const double> nonmembers, int iterations,
                      double confidence, uint64_t seed);

struct AttackSummary {
  AttackKind attack = AttackKind::kLoss;
  double auc = 0.5;
  double tpr_at_fpr = 0.0;
  Interval auc_ci;
  std::size_t members = 0;
  std::size_t nonmembers = 0;
};
std::vector<AttackSummary> SummarizeAttacks(std::span<const AttackScore> scores,
                                            const AttackConfig& config,
                                            uint64_t seed);

void WriteAttackScores(const std::filesystem::path& path,
                       std::span<const AttackScore> scores);
void WriteAttackSummary(const std::filesystem::path& path,
                        std::span<const AttackSummary> summary);

// Equal-size member and non-member pools with matched response-length
// strata (power-of-two byte-length bins). At most max_per_side each.
struct MembershipPools {
  std::vector<DialogueExample> members;
  std::vector<DialogueExample> nonmembers;
};
MembershipPools BuildMembershipPools(std::span<const DialogueExample> train,
                                     std::span<const DialogueExample> heldout,
                                     std::size_t max_per_side, Rng& rng);

struct Canary {
  std::string id;
  std::string secret;  // 8 characters of [A-Z0-9]
  int repetitions = 10;

  std::string patient_text() const;
  std::string doctor_text() const;  // "secret code <id> is <secret>"
  std::string prefix() const;       // dialogue prompt + " secret code <id> is"
};

std::vector<Canary> MakeCanaries(int count, int repetitions, Rng& rng);

// Appends each canary `repetitions` times. Throws kCanaryCollision when a
// canary's code or secret already occurs in the corpus.
std::vector<DialogueExample> InsertCanaries(std::span<const DialogueExample> corpus,
                                            std::span<const Canary> canaries);

// Greedy decoding from the prefix reproduces " <secret>".
bool CanaryExtracted(const Model& model, const Canary& canary);
int CountExtractions(const Model& model, std::span<const Canary> canaries);

// log2(candidates + 1) - log2(rank of the true secret by response NLL among
// `candidates` random secrets).
double CanaryExposure(const Model& model, const Canary& canary, int candidates,
                      Rng& rng);

}  // namespace dprlhf

#endif  // DPRLHF_ATTACKS_ATTACKS_H_
