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


#include "dprlhf/dpsgd/dpsgd.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dprlhf/common/error.h"

namespace dprlhf {

void DpSpec::Validate() const {
  Require(clip_norm > 0.0 && std::isfinite(clip_norm), ErrorCode::kConfigInvalid,
          "clip_norm must be > 0");
  Require(noise_multiplier >= 0.0 && std::isfinite(noise_multiplier),
          ErrorCode::kConfigInvalid, "noise_multiplier must be >= 0");
  Require(sampling_rate > 0.0 && sampling_rate <= 1.0,
          ErrorCode::kConfigInvalid, "sampling_rate must be in (0, 1]");
  Require(steps >= 1, ErrorCode::kConfigInvalid, "steps must be >= 1");
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kConfigInvalid,
          "delta must be in (0, 1)");
}

ParamSet ClipGrad(const ParamSet& grad, double clip_norm) {
  Require(clip_norm > 0.0, ErrorCode::kInvalidArgument, "clip_norm must be > 0");
  for (double v : grad.flat()) {
    Require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite gradient");
  }
  ParamSet out = grad;
  const double norm = grad.L2Norm();
  if (norm > clip_norm) out.Scale(clip_norm / norm);
  return out;
}

std::vector<std::size_t> PoissonSample(std::size_t n, double q, Rng& rng) {
  Require(q > 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "sampling rate must be in (0, 1]");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.Bernoulli(q)) out.push_back(i);
  }
  return out;
}

ClipAudit AuditClipNorms(std::span<const ParamSet> grads, double clip_norm) {
  ClipAudit audit;
  if (grads.empty()) return audit;
  std::size_t clipped = 0;
  for (const ParamSet& g : grads) {
    const double pre = g.L2Norm();
    audit.max_pre_clip_norm = std::max(audit.max_pre_clip_norm, pre);
    if (pre > clip_norm) ++clipped;
    const double post = ClipGrad(g, clip_norm).L2Norm();
    audit.max_post_clip_norm = std::max(audit.max_post_clip_norm, post);
    Require(post <= clip_norm * (1.0 + 1e-12), ErrorCode::kClipViolation,
            "clipped gradient exceeds the clipping norm");
  }
  audit.fraction_clipped =
      static_cast<double>(clipped) / static_cast<double>(grads.size());
  return audit;
}

NoisyGradient PrivatizeGradients(std::span<const ParamSet> grads,
                                 const ParamSet& layout, const DpSpec& spec,
                                 double expected_batch, Rng& rng, Exec exec) {
  Require(expected_batch > 0.0, ErrorCode::kInvalidArgument,
          "expected batch must be > 0");
  struct Clipped {
    ParamSet grad;
    double pre_norm;
  };
  const std::vector<Clipped> clipped = IndexedMap<Clipped>(
      grads.size(),
      [&](std::size_t i) {
        Require(grads[i].SameLayout(layout), ErrorCode::kShapeMismatch,
                "gradient layout differs from parameters");
        return Clipped{ClipGrad(grads[i], spec.clip_norm), grads[i].L2Norm()};
      },
      exec);

  NoisyGradient out;
  out.gradient = layout.ZerosLike();
  std::span<double> sum = out.gradient.flat();
  std::size_t n_clipped = 0;
  for (const Clipped& c : clipped) {
    std::span<const double> g = c.grad.flat();
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += g[j];
    out.audit.max_pre_clip_norm = std::max(out.audit.max_pre_clip_norm, c.pre_norm);
    if (c.pre_norm > spec.clip_norm) ++n_clipped;
  }
  const double noise_std = spec.noise_multiplier * spec.clip_norm;
  const double inv = 1.0 / expected_batch;
  for (double& v : sum) {
    if (noise_std > 0.0) v += noise_std * rng.Normal();
    v *= inv;
  }
  out.audit.batch_size = grads.size();
  out.audit.fraction_clipped =
      grads.empty() ? 0.0
                    : static_cast<double>(n_clipped) / static_cast<double>(grads.size());
  return out;
}

StepAudit DpStep(ParamSet& params, std::span<const ParamSet> grads,
                 const DpSpec& spec, double expected_batch, OptimState& state,
                 Exec exec) {
  Require(state.step_count < spec.steps, ErrorCode::kStepBudgetExhausted,
          "DP step budget exhausted");
  NoisyGradient g =
      PrivatizeGradients(grads, params, spec, expected_batch, state.rng, exec);
  params.Axpy(-state.learning_rate, g.gradient);
  g.audit.step = state.step_count;
  ++state.step_count;
  return g.audit;
}

void AppendStepAudit(const std::filesystem::path& path, const StepAudit& a) {
  const bool fresh = !std::filesystem::exists(path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  Require(out.good(), ErrorCode::kIo, "cannot append to " + path.string());
  if (fresh) out << "step,batch_size,max_pre_clip_norm,fraction_clipped\n";
  out.precision(17);
  out << a.step << ',' << a.batch_size << ',' << a.max_pre_clip_norm << ','
      << a.fraction_clipped << '\n';
}

}  // namespace dprlhf
