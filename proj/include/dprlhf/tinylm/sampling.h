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

#ifndef DPRLHF_TINYLM_SAMPLING_H_
#define DPRLHF_TINYLM_SAMPLING_H_

#include <cstddef>
#include <span>
#include <vector>

#include "dprlhf/common/rng.h"
#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/tokenizer.h"

namespace dprlhf {

// Token-at-a-time evaluation with cached keys and values. Produces the same
// logits as Forward() on the full prefix.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Model& model);

  // Appends one token and returns the logits for the next position.
  const std::vector<double>& Push(int token);
  std::size_t length() const { return length_; }

 private:
  const Model& model_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer [len, d]
  std::vector<std::vector<double>> values_;  // per layer [len, d]
  std::vector<double> logits_;
};

struct SamplingOptions {
  std::size_t max_new = 256;
  double temperature = 1.0;
  double top_p = 1.0;
};

// Index drawn from the smallest set of highest-probability entries whose
// mass reaches top_p, renormalised. Ties are broken by lower index.
int NucleusDraw(std::span<const double> probs, double top_p, Rng& rng);

// Appends sampled tokens to `prompt` (prompt_len is set to the prompt size).
// Stops after max_new tokens, at EOS (which is kept), or when the sequence
// reaches max_seq_len. Throws kSequenceTooLong when the prompt leaves no room.
TokenSeq Sample(const Model& model, const TokenSeq& prompt,
                const SamplingOptions& options, Rng& rng);

// Argmax decoding with the same stopping rules.
TokenSeq Greedy(const Model& model, const TokenSeq& prompt,
                std::size_t max_new);

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_SAMPLING_H_
