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

#include "dprlhf/tinylm/model.h"

#include <algorithm>
#include <cmath>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"

namespace dprlhf {
namespace {

constexpr char kProjections[] = {'q', 'k', 'v', 'o'};

void FillNormal(std::span<double> out, Rng& rng, double stddev) {
  for (double& v : out) v = rng.Normal(0.0, stddev);
}

}  // namespace

void ModelConfig::Validate() const {
  Require(vocab_size >= 1 && d_model >= 1 && n_layers >= 1 && n_heads >= 1 &&
              d_ff >= 1 && max_seq_len >= 1,
          ErrorCode::kConfigInvalid, "model dimensions must be >= 1");
  Require(d_model % n_heads == 0, ErrorCode::kConfigInvalid,
          "d_model must be divisible by n_heads");
  Require(adapter_rank >= 0, ErrorCode::kConfigInvalid,
          "adapter rank must be >= 0");
  Require(adapter_dropout >= 0.0 && adapter_dropout < 1.0,
          ErrorCode::kConfigInvalid, "adapter dropout must be in [0, 1)");
  for (char c : adapter_targets) {
    Require(c == 'q' || c == 'k' || c == 'v' || c == 'o',
            ErrorCode::kConfigInvalid,
            "adapter targets must be drawn from q, k, v, o");
  }
}

std::string HeadPrefix(HeadKind kind) {
  switch (kind) {
    case HeadKind::kReward: return "reward_head";
    case HeadKind::kValue: return "value_head";
    case HeadKind::kNone: break;
  }
  return "";
}

std::string LayerName(int layer, const std::string& suffix) {
  return "layer" + std::to_string(layer) + "." + suffix;
}

std::string ProjectionWeight(int layer, char projection) {
  return LayerName(layer, std::string("attn.") + projection + ".w");
}

std::string AdapterA(int layer, char projection) {
  return LayerName(layer, std::string("attn.") + projection + ".lora_A");
}

std::string AdapterB(int layer, char projection) {
  return LayerName(layer, std::string("attn.") + projection + ".lora_B");
}

Model InitModel(ModelConfig config, uint64_t seed, bool zero_lm_head) {
  config.adapter_rank = 0;
  config.adapter_alpha = 0.0;
  config.adapter_dropout = 0.0;
  config.Validate();
  Model model;
  model.config = config;
  Rng rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t f = config.d_ff;
  const std::size_t v = config.vocab_size;
  const double stddev = 0.02;
  ParamSet& p = model.base;
  FillNormal(p.Add("tok_emb", {v, d}), rng, stddev);
  FillNormal(p.Add("pos_emb", {static_cast<std::size_t>(config.max_seq_len), d}),
             rng, stddev);
  for (int l = 0; l < config.n_layers; ++l) {
    auto g1 = p.Add(LayerName(l, "ln1.g"), {d});
    std::fill(g1.begin(), g1.end(), 1.0);
    p.Add(LayerName(l, "ln1.b"), {d});
    for (char proj : kProjections) {
      FillNormal(p.Add(ProjectionWeight(l, proj), {d, d}), rng, stddev);
    }
    auto g2 = p.Add(LayerName(l, "ln2.g"), {d});
    std::fill(g2.begin(), g2.end(), 1.0);
    p.Add(LayerName(l, "ln2.b"), {d});
    FillNormal(p.Add(LayerName(l, "mlp.fc1.w"), {f, d}), rng, stddev);
    p.Add(LayerName(l, "mlp.fc1.b"), {f});
    FillNormal(p.Add(LayerName(l, "mlp.fc2.w"), {d, f}), rng, stddev);
    p.Add(LayerName(l, "mlp.fc2.b"), {d});
  }
  auto gf = p.Add("ln_f.g", {d});
  std::fill(gf.begin(), gf.end(), 1.0);
  p.Add("ln_f.b", {d});
  auto head = p.Add("lm_head.w", {v, d});
  if (!zero_lm_head) FillNormal(head, rng, stddev);
  return model;
}

void AttachAdapters(Model& model, int rank, double alpha, double dropout,
                    const std::string& targets, uint64_t seed) {
  Require(rank >= 1, ErrorCode::kInvalidArgument, "adapter rank must be >= 1");
  model.config.adapter_rank = rank;
  model.config.adapter_alpha = alpha;
  model.config.adapter_dropout = dropout;
  model.config.adapter_targets = targets;
  model.config.Validate();
  model.adapters = ParamSet(ParamMode::kAdapter);
  Rng rng(seed);
  const std::size_t d = model.config.d_model;
  const std::size_t r = rank;
  for (int l = 0; l < model.config.n_layers; ++l) {
    for (char proj : kProjections) {
      if (!model.config.HasAdapter(proj)) continue;
      FillNormal(model.adapters.Add(AdapterA(l, proj), {r, d}), rng,
                 1.0 / std::sqrt(static_cast<double>(d)));
      model.adapters.Add(AdapterB(l, proj), {d, r});
    }
  }
}

void DetachAdapters(Model& model) {
  model.config.adapter_rank = 0;
  model.config.adapter_alpha = 0.0;
  model.config.adapter_dropout = 0.0;
  model.adapters = ParamSet(ParamMode::kAdapter);
}

void AttachHead(Model& model, HeadKind kind) {
  model.head = ParamSet(ParamMode::kFull);
  model.head_kind = kind;
  if (kind == HeadKind::kNone) return;
  const std::string prefix = HeadPrefix(kind);
  model.head.Add(prefix + ".w", {static_cast<std::size_t>(model.config.d_model)});
  model.head.Add(prefix + ".b", {1});
}

ParamSet TrainableValues(const Model& model) {
  ParamSet out(model.train_mode());
  out.AppendAll(model.train_mode() == ParamMode::kAdapter ? model.adapters
                                                           : model.base);
  out.AppendAll(model.head);
  return out;
}

ParamSet TrainableLayout(const Model& model) {
  return TrainableValues(model).ZerosLike();
}

void ApplyDelta(Model& model, const ParamSet& delta) {
  ParamSet& body =
      model.train_mode() == ParamMode::kAdapter ? model.adapters : model.base;
  for (const ParamEntry& e : delta.entries()) {
    double* dst = body.Find(e.name);
    if (dst == nullptr) dst = model.head.Find(e.name);
    Require(dst != nullptr, ErrorCode::kShapeMismatch,
            "update for non-trainable tensor " + e.name);
    const double* src = delta.flat().data() + e.offset;
    for (std::size_t i = 0; i < e.size; ++i) dst[i] += src[i];
  }
}

void SetTrainable(Model& model, const ParamSet& values) {
  ParamSet& body =
      model.train_mode() == ParamMode::kAdapter ? model.adapters : model.base;
  for (const ParamEntry& e : values.entries()) {
    double* dst = body.Find(e.name);
    if (dst == nullptr) dst = model.head.Find(e.name);
    Require(dst != nullptr, ErrorCode::kShapeMismatch,
            "value for non-trainable tensor " + e.name);
    std::copy_n(values.flat().data() + e.offset, e.size, dst);
  }
}

ParamSet MergeAdapters(const ModelConfig& config, const ParamSet& base,
                       const ParamSet& adapters) {
  ParamSet merged = base;
  merged.set_mode(ParamMode::kFull);
  if (adapters.empty()) return merged;
  Require(config.adapter_rank > 0, ErrorCode::kShapeMismatch,
          "adapters present but config has rank 0");
  const std::size_t d = config.d_model;
  const std::size_t r = config.adapter_rank;
  const double scale = config.adapter_scale();
  for (int l = 0; l < config.n_layers; ++l) {
    for (char proj : kProjections) {
      if (!config.HasAdapter(proj)) continue;
      const ParamEntry& a = adapters.entry(AdapterA(l, proj));
      const ParamEntry& b = adapters.entry(AdapterB(l, proj));
      const ParamEntry& w = merged.entry(ProjectionWeight(l, proj));
      Require(a.shape == std::vector<std::size_t>{r, w.shape[1]} &&
                  b.shape == std::vector<std::size_t>{w.shape[0], r} &&
                  w.shape[0] == d,
              ErrorCode::kShapeMismatch,
              "adapter shape inconsistent with " + w.name);
      std::span<const double> av = adapters.Get(a.name);
      std::span<const double> bv = adapters.Get(b.name);
      std::span<double> wv = merged.Mutable(w.name);
      const std::size_t d_out = w.shape[0];
      const std::size_t d_in = w.shape[1];
      for (std::size_t o = 0; o < d_out; ++o) {
        for (std::size_t i = 0; i < d_in; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < r; ++k) acc += bv[o * r + k] * av[k * d_in + i];
          wv[o * d_in + i] += scale * acc;
        }
      }
    }
  }
  return merged;
}

}  // namespace dprlhf
