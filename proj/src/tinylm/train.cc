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


#include "dprlhf/tinylm/train.h"

#include <cmath>
#include <numeric>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"

namespace dprlhf {

Adam::Adam(const ParamSet& layout, const AdamConfig& config)
    : config_(config), m_(layout.size(), 0.0), v_(layout.size(), 0.0) {
  Require(config.learning_rate > 0.0 && config.beta1 >= 0.0 && config.beta1 < 1.0 &&
              config.beta2 >= 0.0 && config.beta2 < 1.0 && config.epsilon > 0.0 &&
              config.max_grad_norm >= 0.0,
          ErrorCode::kConfigInvalid, "invalid Adam settings");
}

void Adam::Step(ParamSet& params, const ParamSet& grad) {
  Require(params.size() == m_.size() && grad.size() == m_.size(),
          ErrorCode::kShapeMismatch, "Adam state does not match parameters");
  double scale = 1.0;
  if (config_.max_grad_norm > 0.0) {
    const double norm = grad.L2Norm();
    if (norm > config_.max_grad_norm) scale = config_.max_grad_norm / norm;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::span<double> p = params.flat();
  std::span<const double> g = grad.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i] * scale;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * gi;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * gi * gi;
    p[i] -= config_.learning_rate * (m_[i] / c1) /
            (std::sqrt(v_[i] / c2) + config_.epsilon);
  }
}

std::vector<double> TrainNll(Model& model, std::span<const TokenSeq> data,
                             const NllTrainConfig& config) {
  Require(!data.empty(), ErrorCode::kInvalidArgument, "empty training set");
  Require(config.batch_size >= 1 && config.steps >= 0, ErrorCode::kConfigInvalid,
          "batch_size must be >= 1");
  ParamSet params = TrainableValues(model);
  Adam adam(params, config.adam);
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<double> losses;
  const bool dropout = model.config.adapter_dropout > 0.0;
  for (int64_t step = 0; step < config.steps; ++step) {
    std::vector<TokenSeq> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.Shuffle(order);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    const std::vector<ExampleGrad> grads =
        PerExampleGrads(model, batch, config.loss, config.exec, dropout,
                        DeriveSeed(config.seed, static_cast<uint64_t>(step)));
    ParamSet sum = params.ZerosLike();
    double loss = 0.0;
    for (const ExampleGrad& g : grads) {
      sum.Axpy(1.0, g.grads);
      loss += g.loss;
    }
    sum.Scale(1.0 / static_cast<double>(grads.size()));
    adam.Step(params, sum);
    SetTrainable(model, params);
    losses.push_back(loss / static_cast<double>(grads.size()));
  }
  return losses;
}

}  // namespace dprlhf
