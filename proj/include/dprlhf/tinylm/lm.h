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

// Forward and reverse-mode passes of the decoder.
//
// Layout: pre-norm blocks (layer norm -> causal multi-head attention ->
// residual, layer norm -> GELU MLP -> residual), a final layer norm producing
// the hidden states read by scalar heads, and an untied output head producing
// logits. Every matrix is row-major; a linear map with weight [out, in]
// computes y = W x. Adapted projections add (alpha / r) * B (A x) on the fly.

#ifndef DPRLHF_TINYLM_LM_H_
#define DPRLHF_TINYLM_LM_H_

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dprlhf/common/parallel.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/param_set.h"
#include "dprlhf/tinylm/tokenizer.h"

namespace dprlhf {

struct ForwardOptions {
  bool compute_logits = true;
  // Adapter dropout is applied only when training is set and the model has a
  // non-zero dropout rate. The mask is drawn from a stream seeded here.
  bool training = false;
  uint64_t dropout_seed = 0;
};

struct LayerCache {
  std::vector<double> x_in, ln1_xhat, ln1_rstd, a;
  std::vector<double> q, k, v, probs, ctx, x_mid;
  std::vector<double> ln2_xhat, ln2_rstd, b, h1, g;
  // Per projection (q, k, v, o): dropout scale factors (empty when off),
  // dropped adapter input, and x A^T.
  std::array<std::vector<double>, 4> lora_mask, lora_x, lora_u;
};

struct ForwardCache {
  std::vector<int> tokens;
  std::size_t length = 0;
  std::vector<LayerCache> layers;
  std::vector<double> x_final, lnf_xhat, lnf_rstd;
  std::vector<double> hidden;  // [length, d_model]
  std::vector<double> logits;  // [length, vocab] when requested
};

// Throws kSequenceTooLong past max_seq_len and kInvalidArgument on bad ids.
ForwardCache Forward(const Model& model, std::span<const int> tokens,
                     const ForwardOptions& options = {});

// Reverse pass. Accumulates into `grads`, whose layout must be
// TrainableLayout(model) or a subset of it by name. Either upstream gradient
// may be empty.
void Backward(const Model& model, const ForwardCache& cache,
              std::span<const double> dlogits, std::span<const double> dhidden,
              ParamSet& grads);

// Row t holds the logits for the token at position t + 1.
std::vector<double> ForwardLogits(const Model& model, const TokenSeq& seq);

// log p(tokens[t] | tokens[<t]) for t in [begin, size).
std::vector<double> TokenLogProbs(const Model& model, const TokenSeq& seq,
                                  std::size_t begin);

// First position whose token is scored. Throws kEmptyTarget / kInvalidArgument
// when there is nothing to score.
std::size_t FirstScoredPosition(const TokenSeq& seq, bool response_only);

// Mean negative log-likelihood over predicted positions (response only when
// flagged).
double NllLoss(const Model& model, const TokenSeq& seq, bool response_only);

struct ExampleGrad {
  ParamSet grads;
  double loss = 0.0;
};

ExampleGrad NllLossGrad(const Model& model, const TokenSeq& seq,
                        bool response_only, const ForwardOptions& options = {});

enum class LossKind { kNll, kNllResponseOnly };

// One gradient per example, in input order. The kernel parallelises across
// examples; results are bitwise identical to the serial path.
std::vector<ExampleGrad> PerExampleGrads(const Model& model,
                                         std::span<const TokenSeq> batch,
                                         LossKind kind,
                                         Exec exec = Exec::kParallel,
                                         bool training = false,
                                         uint64_t dropout_seed = 0);

// Scalar head readout v_t = hidden_t . w + b. Throws kInvalidArgument when
// the model has no head.
double HeadValue(const Model& model, const ForwardCache& cache,
                 std::size_t position);
std::vector<double> HeadValues(const Model& model, const ForwardCache& cache);

// For upstream dvalues[t] = dL/dv_t (length cache.length): adds dL/dhidden
// into `dhidden` and the head weight/bias gradients into `grads` when present.
void HeadBackward(const Model& model, const ForwardCache& cache,
                  std::span<const double> dvalues, std::span<double> dhidden,
                  ParamSet& grads);

// Softmax helpers shared with the attack and PPO code.
void LogSoftmaxRow(std::span<const double> logits, std::span<double> out);
double LogSumExp(std::span<const double> values);

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_LM_H_
