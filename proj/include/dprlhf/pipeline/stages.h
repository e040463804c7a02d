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


// Stage sequencing over a run directory.
//
//   <root>/config.snapshot   verbatim copy of the config file
//   <root>/ledger.csv        privacy ledger (see PrivacyLedger)
//   <root>/data/             splits, canaries, preference pairs
//   <root>/checkpoints/      base, sft, rm, ppo_actor, ppo_critic
//   <root>/metrics/          curves, attack results, utility metrics
//   <root>/logs/             per-step DP audits and a progress log

#ifndef DPRLHF_PIPELINE_STAGES_H_
#define DPRLHF_PIPELINE_STAGES_H_

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dprlhf/attacks/attacks.h"
#include "dprlhf/pipeline/config.h"
#include "dprlhf/pipeline/ledger.h"
#include "dprlhf/ppo/ppo.h"
#include "dprlhf/prefbuild/prefbuild.h"
#include "dprlhf/tinylm/model.h"

namespace dprlhf {

enum class PipelineStage { kPrep, kPretrain, kPairs, kSft, kRm, kPpo, kAttack, kEval, kAccount };

std::string_view PipelineStageName(PipelineStage stage);
// Throws kInvalidArgument on unknown names.
PipelineStage ParsePipelineStage(std::string_view name);
// Execution order of a full run.
const std::vector<PipelineStage>& AllPipelineStages();

class RunDir {
 public:
  explicit RunDir(std::filesystem::path root) : root_(std::move(root)) {}
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path data(const std::string& name) const { return root_ / "data" / name; }
  std::filesystem::path checkpoint(const std::string& name) const {
    return root_ / "checkpoints" / (name + ".ckpt");
  }
  std::filesystem::path metrics(const std::string& name) const {
    return root_ / "metrics" / name;
  }
  std::filesystem::path logs(const std::string& name) const { return root_ / "logs" / name; }
  std::filesystem::path ledger() const { return root_ / "ledger.csv"; }
  std::filesystem::path snapshot() const { return root_ / "config.snapshot"; }
  // Shared cache for the pretrained backbone, next to the run directories.
  std::filesystem::path cache() const { return root_.parent_path() / "cache"; }

 private:
  std::filesystem::path root_;
};

// Creates the layout and snapshots the config. The default location is
// OutputRoot() / RunId(config). Throws kConfigInvalid when the directory
// already holds a different config.
RunDir OpenRunDir(const RunConfig& config);
RunDir OpenRunDir(const RunConfig& config, const std::filesystem::path& root);

// Throws kMissingPrerequisite when an input artifact is absent.
void RunStage(PipelineStage stage, const RunConfig& config, const RunDir& dir);

// True when every output of the stage exists.
bool StageComplete(PipelineStage stage, const RunConfig& config, const RunDir& dir);

// All stages in order. With resume, completed stages are skipped.
void RunPipeline(const RunConfig& config, const RunDir& dir, bool resume);

// Library form of the private fine-tuning stage: adapters (or the full
// model when rank is 0) trained with response-only NLL under DP-SGD.
struct SftCurvePoint {
  int64_t step = 0;
  std::size_t batch_size = 0;
  double mean_loss = 0.0;
  double fraction_clipped = 0.0;
};
struct SftResult {
  Model model;
  std::vector<SftCurvePoint> curve;
};
// Throws kBudgetViolation when the accountant puts `spec` above
// target_epsilon.
SftResult DpSft(const Model& base, std::span<const DialogueExample> corpus,
                const DpSpec& spec, const SftSettings& settings,
                double target_epsilon, uint64_t seed,
                const std::filesystem::path& audit_log = {});
void WriteSftCurve(const std::filesystem::path& path,
                   std::span<const SftCurvePoint> curve);

// Reward of a sampled sequence under a reward model: the response is cut at
// its first newline or EOS and scored with a closing EOS, as in training.
RewardFn MakeRewardFn(const Model& reward_model);

// Response text of a generated sequence, cut at the first newline, with
// surrounding spaces removed.
std::string ResponseText(const TokenSeq& seq);

void WriteCanaries(const std::filesystem::path& path, std::span<const Canary> canaries);
std::vector<Canary> ReadCanaries(const std::filesystem::path& path);

}  // namespace dprlhf

#endif  // DPRLHF_PIPELINE_STAGES_H_
