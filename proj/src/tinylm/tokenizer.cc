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

#include "dprlhf/tinylm/tokenizer.h"

#include "dprlhf/common/error.h"

namespace dprlhf {

TokenSeq Tokenize(std::string_view text) {
  TokenSeq seq;
  seq.tokens.reserve(text.size());
  for (char c : text) seq.tokens.push_back(static_cast<unsigned char>(c));
  return seq;
}

std::string Detokenize(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  }
  return out;
}

std::string Detokenize(const TokenSeq& seq) { return Detokenize(seq.tokens); }

TokenSeq EncodePrompt(std::string_view prompt) {
  TokenSeq seq = Tokenize(prompt);
  seq.tokens.insert(seq.tokens.begin(), kBosToken);
  seq.prompt_len = seq.tokens.size();
  return seq;
}

TokenSeq EncodeExample(std::string_view prompt, std::string_view response) {
  TokenSeq seq = EncodePrompt(prompt);
  for (char c : response) seq.tokens.push_back(static_cast<unsigned char>(c));
  seq.tokens.push_back(kEosToken);
  return seq;
}

void ValidateTokenSeq(const TokenSeq& seq, int vocab_size) {
  Require(seq.prompt_len <= seq.tokens.size(), ErrorCode::kInvalidArgument,
          "prompt_len exceeds sequence length");
  for (int t : seq.tokens) {
    Require(t >= 0 && t < vocab_size, ErrorCode::kInvalidArgument,
            "token id out of vocabulary: " + std::to_string(t));
  }
}

}  // namespace dprlhf
