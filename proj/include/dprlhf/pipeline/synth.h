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


// Templated synthetic medical dialogues, so the pipeline runs without any
// external data.

#ifndef DPRLHF_PIPELINE_SYNTH_H_
#define DPRLHF_PIPELINE_SYNTH_H_

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "dprlhf/attacks/attacks.h"
#include "dprlhf/prefbuild/prefbuild.h"

namespace dprlhf {

enum class ResponseStyle {
  kExpert,   // names a condition, a test and a medication
  kGeneric,  // hedged advice without medical terms
};

struct SynthConfig {
  int dialogues = 2000;
  uint64_t seed = 0;
  std::string id_prefix = "syn";
  // Probability that a dialogue gets a generic instead of an expert answer.
  double generic_fraction = 0.0;
  int canaries = 0;
  int canary_repetitions = 10;
};

struct SynthCorpus {
  std::vector<DialogueExample> dialogues;  // canary copies at the end
  std::vector<Canary> canaries;
};

// Deterministic in (config, seed). Ids are "<prefix>-<index>" with six
// digits; canary copies use the ids from InsertCanaries.
SynthCorpus GenerateSyntheticCorpus(const SynthConfig& config);

// One patient turn and one answer in the given style, drawn from `rng`.
DialogueExample SynthDialogue(const std::string& id, ResponseStyle style,
                              Rng& rng);

// Every word (MatchWords form) the templates can emit, excluding canaries.
const std::set<std::string>& TemplateVocabulary();

}  // namespace dprlhf

#endif  // DPRLHF_PIPELINE_SYNTH_H_
