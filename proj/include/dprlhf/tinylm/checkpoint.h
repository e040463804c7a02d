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

// Binary checkpoint container.
//
// Layout (little-endian):
//   8 bytes   magic "DPRLHFCK"
//   u32       format version (1)
//   u64       header length H
//   H bytes   JSON header: {"meta": {...}, "sets": [{"name", "mode",
//             "tensors": [{"name", "shape"}]}]}
//   f64[]     tensor payloads, sets and tensors in header order
//   u32       CRC-32 of every preceding byte

#ifndef DPRLHF_TINYLM_CHECKPOINT_H_
#define DPRLHF_TINYLM_CHECKPOINT_H_

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/param_set.h"

namespace dprlhf {

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, ParamSet> sets;
};

std::string SerializeCheckpoint(const Checkpoint& ckpt);
// Throws kCorruptCheckpoint on bad magic, version, truncation or CRC.
Checkpoint DeserializeCheckpoint(const std::string& bytes);

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws kMissingPrerequisite when the file does not exist.
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

nlohmann::json ConfigToJson(const ModelConfig& config);
ModelConfig ConfigFromJson(const nlohmann::json& j);

// Stores config and head kind under meta["model"] and the tensors under
// "base", "adapters" and "head".
void PutModel(Checkpoint& ckpt, const Model& model);
Model GetModel(const Checkpoint& ckpt);

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_CHECKPOINT_H_
