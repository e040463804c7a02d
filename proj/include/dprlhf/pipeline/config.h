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


// Run configuration: one JSON file describing every stage of a run.

#ifndef DPRLHF_PIPELINE_CONFIG_H_
#define DPRLHF_PIPELINE_CONFIG_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "dprlhf/accountant/accountant.h"
#include "dprlhf/attacks/attacks.h"
#include "dprlhf/common/error.h"
#include "dprlhf/dpsgd/dpsgd.h"
#include "dprlhf/ppo/ppo.h"
#include "dprlhf/prefbuild/prefbuild.h"
#include "dprlhf/tinylm/model.h"

namespace dprlhf {

// DP settings of one stage. The sampling rate is either given directly or as
// an expected batch size over the stage's dataset; the step count either
// directly or as a number of epochs (T = ceil(epochs / q)). Without an
// explicit noise multiplier, sigma is calibrated to the stage's target.
struct StageDp {
  bool enabled = true;
  double clip_norm = 1.0;
  std::optional<double> noise_multiplier;
  std::optional<double> sampling_rate;
  std::optional<double> expected_batch;
  std::optional<int64_t> steps;
  std::optional<double> epochs;
  // Dataset size for accounting-only configs; otherwise taken from the data.
  std::optional<int64_t> dataset_size;
  std::optional<double> target_epsilon;
};

struct AdapterSettings {
  int rank = 8;
  double alpha = 16.0;
  double dropout = 0.05;
  std::string targets = "qkvo";
};

struct CorpusSettings {
  // JSONL with {conversation_id, patient, doctor}; synthetic when empty.
  std::filesystem::path path;
  int dialogues = 2000;
  double generic_fraction = 0.0;
  int canaries = 25;
  int canary_repetitions = 10;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
};

// Non-private pretraining of the shared backbone on a public corpus drawn
// from its own seed. The checkpoint is cached by content under the output
// root, so runs with identical settings share it.
struct PretrainSettings {
  int public_dialogues = 3000;
  double generic_fraction = 0.3;
  // Fraction of public examples rendered with the rejected-style prompt and
  // a generic answer.
  double system_prompt_fraction = 0.5;
  int64_t steps = 400;
  int batch_size = 16;
  double learning_rate = 3e-3;
  uint64_t seed = 1;
};

struct SftSettings {
  StageDp dp;
  double learning_rate = 0.5;
  AdapterSettings adapter;
  // Non-private mode (dp.enabled = false): Adam on mini-batches.
  int64_t steps = 0;
  int batch_size = 16;
  double adam_learning_rate = 3e-3;
};

struct PairsSettings {
  int max_dialogues = 1000;
  PrefBuildConfig build;
};

struct RmSettings {
  StageDp dp;
  double learning_rate = 0.05;
  AdapterSettings adapter{8, 16.0, 0.05, "qv"};
};

struct PpoSettings {
  StageDp dp;
  PpoConfig ppo;
  int prompts = 64;
  AdapterSettings adapter{8, 16.0, 0.0, "qv"};
  // Upper bound on the mean sequence KL of the trained policy to the
  // reference, checked by the eval stage.
  double kl_cap = 5.0;
  // Rewards are shifted by the mean reward of the SFT policy on this many
  // public (pretraining) prompts; 0 disables the shift.
  int baseline_prompts = 64;
};

struct AttackSettings {
  AttackConfig attack;
  std::size_t pool_size = 200;
  int exposure_candidates = 1000;
};

struct EvalSettings {
  std::size_t max_examples = 200;
  std::size_t max_new = 160;
  int bootstrap_iterations = 1000;
  double confidence = 0.95;
  std::size_t reward_prompts = 200;
};

struct BudgetSettings {
  std::optional<double> epsilon_total;
  double delta = 1e-5;
  // Share of epsilon_total given to SFT, RM and PPO.
  std::array<double, 3> weights = {1.0, 1.0, 1.0};
};

struct RunConfig {
  std::string name = "run";
  uint64_t seed = 0;
  ModelConfig model;
  std::filesystem::path lexicon;
  std::filesystem::path refusals;
  BudgetSettings budget;
  CorpusSettings corpus;
  PretrainSettings pretrain;
  SftSettings sft;
  PairsSettings pairs;
  RmSettings rm;
  PpoSettings ppo;
  AttackSettings attack;
  EvalSettings eval;
  // Verbatim file contents, snapshotted into the run directory.
  std::string source_text;
};

// Parses and checks ranges. Relative paths are resolved against base_dir.
// Unknown keys are rejected. Throws kConfigInvalid.
RunConfig ParseRunConfig(const std::string& text,
                         const std::filesystem::path& base_dir);
// Throws kMissingPrerequisite when the file does not exist.
RunConfig LoadRunConfig(const std::filesystem::path& path);

// Paths must exist (kConfigInvalid). Stages whose dataset size is known
// from the config are resolved, which runs the budget pre-check.
void ValidateRunConfig(const RunConfig& config);

// Target epsilon of a stage: its own target, else its weighted share of
// epsilon_total; +inf when neither is set.
double StageTarget(const RunConfig& config, Stage stage);
const StageDp& StageDpSettings(const RunConfig& config, Stage stage);

struct ResolvedStage {
  Stage stage = Stage::kSft;
  std::size_t n = 0;
  DpSpec spec;
  double target_epsilon = 0.0;
  bool calibrated = false;
  Budget budget;
};

// Resolves q, T and sigma for n examples. `derive_steps`, when given, maps q
// to T in place of steps/epochs. Throws kConfigInvalid when the settings are
// incomplete and, with enforce_target, kBudgetViolation when the accountant
// puts the stage above its target. An unreachable calibration target is
// always a budget violation.
ResolvedStage ResolveStage(const RunConfig& config, Stage stage, std::size_t n,
                           const std::function<int64_t(double)>& derive_steps = {},
                           bool enforce_target = true);

// Dataset size used for accounting when it is fixed by the config alone:
// dp.dataset_size, or the PPO prompt count. 0 when it depends on the data.
std::size_t ConfiguredStageSize(const RunConfig& config, Stage stage);

// "<name>-<16 hex digits>" from a hash of the canonical parsed config.
std::string RunId(const RunConfig& config);

// DPRLHF_OUTPUT_ROOT when set, else "runs".
std::filesystem::path OutputRoot();

// 0 success, 2 config-invalid, 3 missing-prerequisite, 4 budget-violation,
// 1 anything else.
int ExitCodeFor(ErrorCode code);

}  // namespace dprlhf

#endif  // DPRLHF_PIPELINE_CONFIG_H_
