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

#ifndef DPRLHF_TINYLM_MODEL_H_
#define DPRLHF_TINYLM_MODEL_H_

#include <cstdint>
#include <string>

#include "dprlhf/tinylm/param_set.h"
#include "dprlhf/tinylm/tokenizer.h"

namespace dprlhf {

struct ModelConfig {
  int vocab_size = kByteVocabSize;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 256;
  // Low-rank adapters. rank 0 means full fine-tuning.
  int adapter_rank = 0;
  double adapter_alpha = 0.0;
  double adapter_dropout = 0.0;
  // Which attention projections carry adapters: any of "q", "k", "v", "o".
  std::string adapter_targets = "qkvo";

  void Validate() const;
  double adapter_scale() const {
    return adapter_rank > 0 ? adapter_alpha / adapter_rank : 0.0;
  }
  bool HasAdapter(char projection) const {
    return adapter_rank > 0 &&
           adapter_targets.find(projection) != std::string::npos;
  }
  bool operator==(const ModelConfig&) const = default;
};

// Scalar head reading the final hidden state. The reward model pools the last
// token; the critic reads every position.
enum class HeadKind { kNone, kReward, kValue };

std::string HeadPrefix(HeadKind kind);

// Frozen backbone, optional adapters and an optional scalar head. In adapter
// mode only the adapter factors and the head are trainable; in full mode the
// backbone and the head are.
struct Model {
  ModelConfig config;
  ParamSet base{ParamMode::kFull};
  ParamSet adapters{ParamMode::kAdapter};
  ParamSet head{ParamMode::kFull};
  HeadKind head_kind = HeadKind::kNone;

  ParamMode train_mode() const {
    return config.adapter_rank > 0 ? ParamMode::kAdapter : ParamMode::kFull;
  }
};

// Names used for backbone tensors.
std::string LayerName(int layer, const std::string& suffix);
std::string ProjectionWeight(int layer, char projection);
std::string AdapterA(int layer, char projection);
std::string AdapterB(int layer, char projection);

// GPT-2 style initialisation: N(0, 0.02) weights, unit layer-norm gains, and
// a zero output head when zero_lm_head is set. No adapters, no head.
Model InitModel(ModelConfig config, uint64_t seed, bool zero_lm_head = false);

// Replaces any adapters with fresh ones: A ~ N(0, 1/d_model), B = 0, so the
// adapted model starts out identical to the backbone.
void AttachAdapters(Model& model, int rank, double alpha, double dropout,
                    const std::string& targets, uint64_t seed);
void DetachAdapters(Model& model);

// Zero-initialised scalar head (weight [d_model], bias [1]).
void AttachHead(Model& model, HeadKind kind);

// Zero-filled set with one entry per trainable tensor.
ParamSet TrainableLayout(const Model& model);
ParamSet TrainableValues(const Model& model);
// Adds delta (trainable layout) onto the trainable tensors.
void ApplyDelta(Model& model, const ParamSet& delta);
void SetTrainable(Model& model, const ParamSet& values);

// W' = W + (alpha / r) * B A for every adapted projection. The result is a
// full-mode backbone that reproduces the adapted model without adapters.
ParamSet MergeAdapters(const ModelConfig& config, const ParamSet& base,
                       const ParamSet& adapters);

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_MODEL_H_
