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


// Command-line entry point: one subcommand per pipeline stage.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dprlhf/common/error.h"
#include "dprlhf/pipeline/config.h"
#include "dprlhf/pipeline/stages.h"
#include "dprlhf/pipeline/synth.h"

namespace {

using dprlhf::PipelineStage;

struct SynthArgs {
  int dialogues = 2000;
  uint64_t seed = 0;
  int canaries = 0;
  int repetitions = 10;
  double generic_fraction = 0.0;
  std::string out = "corpus.jsonl";
};

int RunSynth(const SynthArgs& a) {
  dprlhf::SynthConfig sc;
  sc.dialogues = a.dialogues;
  sc.seed = a.seed;
  sc.canaries = a.canaries;
  sc.canary_repetitions = a.repetitions;
  sc.generic_fraction = a.generic_fraction;
  const dprlhf::SynthCorpus corpus = dprlhf::GenerateSyntheticCorpus(sc);
  dprlhf::WriteDialogues(a.out, corpus.dialogues);
  std::printf("wrote %zu dialogues to %s\n", corpus.dialogues.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private RLHF pipeline on a tiny byte-level model"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic dialogue corpus");
  synth_cmd->add_option("--dialogues", synth.dialogues, "Number of dialogues");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--canaries", synth.canaries, "Planted canaries");
  synth_cmd->add_option("--repetitions", synth.repetitions, "Copies per canary");
  synth_cmd->add_option("--generic-fraction", synth.generic_fraction,
                        "Share of hedged generic answers");
  synth_cmd->add_option("--out", synth.out, "Output JSONL path");

  std::string config_path;
  bool resume = false;
  struct StageCmd {
    CLI::App* cmd;
    PipelineStage stage;
  };
  std::vector<StageCmd> stage_cmds;
  const std::pair<PipelineStage, const char*> described[] = {
      {PipelineStage::kPrep, "Split the corpus and plant canaries"},
      {PipelineStage::kPretrain, "Pretrain (or fetch) the public backbone"},
      {PipelineStage::kPairs, "Build filtered preference pairs"},
      {PipelineStage::kSft, "Fine-tune the policy with DP-SGD"},
      {PipelineStage::kRm, "Train the reward model with DP-SGD"},
      {PipelineStage::kPpo, "Align the policy with DP-PPO"},
      {PipelineStage::kAttack, "Run membership inference and canary extraction"},
      {PipelineStage::kEval, "Utility metrics and held-out reward"},
      {PipelineStage::kAccount, "Privacy accounting for the configured stages"},
  };
  for (const auto& [stage, help] : described) {
    CLI::App* cmd = app.add_subcommand(std::string(dprlhf::PipelineStageName(stage)), help);
    cmd->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    stage_cmds.push_back({cmd, stage});
  }
  CLI::App* run_cmd = app.add_subcommand("run", "Run every stage in order");
  run_cmd->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  run_cmd->add_flag("--resume", resume, "Skip stages whose outputs already exist");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) return RunSynth(synth);
    const dprlhf::RunConfig config = dprlhf::LoadRunConfig(config_path);
    dprlhf::ValidateRunConfig(config);
    const dprlhf::RunDir dir = dprlhf::OpenRunDir(config);
    std::cerr << "run directory: " << dir.root().string() << '\n';
    if (run_cmd->parsed()) {
      dprlhf::RunPipeline(config, dir, resume);
      return 0;
    }
    for (const StageCmd& s : stage_cmds) {
      if (s.cmd->parsed()) dprlhf::RunStage(s.stage, config, dir);
    }
    return 0;
  } catch (const dprlhf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return dprlhf::ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
