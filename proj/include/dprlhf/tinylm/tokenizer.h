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

#ifndef DPRLHF_TINYLM_TOKENIZER_H_
#define DPRLHF_TINYLM_TOKENIZER_H_

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dprlhf {

// Byte vocabulary: ids 0..255 are raw bytes, followed by two specials.
inline constexpr int kEosToken = 256;
inline constexpr int kBosToken = 257;
inline constexpr int kByteVocabSize = 258;

// Token ids with a prompt/response boundary. Positions [0, prompt_len) are
// the prompt; everything after is the response.
struct TokenSeq {
  std::vector<int> tokens;
  std::size_t prompt_len = 0;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::size_t response_len() const { return tokens.size() - prompt_len; }
  bool operator==(const TokenSeq&) const = default;
};

// Lossless and total: one token per byte. prompt_len is left at 0.
TokenSeq Tokenize(std::string_view text);

// Inverse of Tokenize. Special tokens are dropped.
std::string Detokenize(const std::vector<int>& tokens);
std::string Detokenize(const TokenSeq& seq);

// BOS + prompt bytes, with prompt_len covering both.
TokenSeq EncodePrompt(std::string_view prompt);

// BOS + prompt + response + EOS. The EOS is part of the response region.
TokenSeq EncodeExample(std::string_view prompt, std::string_view response);

// Throws kInvalidArgument unless prompt_len <= size and ids < vocab_size.
void ValidateTokenSeq(const TokenSeq& seq, int vocab_size);

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_TOKENIZER_H_
