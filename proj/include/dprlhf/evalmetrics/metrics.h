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


// Utility metrics: ROUGE-L, teacher-forced perplexity and gazetteer entity F1.

#ifndef DPRLHF_EVALMETRICS_METRICS_H_
#define DPRLHF_EVALMETRICS_METRICS_H_

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dprlhf/tinylm/model.h"
#include "dprlhf/tinylm/tokenizer.h"

namespace dprlhf {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lowercased whitespace tokens.
std::vector<std::string> LowerWords(std::string_view text);

// Longest common subsequence length of two token lists.
std::size_t LcsLength(const std::vector<std::string>& a,
                      const std::vector<std::string>& b);

// LCS over lowercased whitespace tokens; empty input on either side gives 0.
Prf RougeL(std::string_view candidate, std::string_view reference);

// exp(mean response-only NLL). Throws kEmptyResponse when the sequence has no
// response tokens.
double Perplexity(const Model& model, const TokenSeq& seq);

// Medical term gazetteer. Terms are stored case-folded with single spaces.
class EntityLexicon {
 public:
  EntityLexicon() = default;
  explicit EntityLexicon(const std::vector<std::string>& terms);

  // One term per line; blank lines and lines starting with '#' are skipped.
  // Throws kMissingLexicon when the file is absent or has no terms.
  static EntityLexicon Load(const std::filesystem::path& path);

  bool empty() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }
  const std::set<std::string>& terms() const { return terms_; }
  std::size_t max_words() const { return max_words_; }

 private:
  std::set<std::string> terms_;
  std::size_t max_words_ = 0;
};

// Case-folded words with surrounding punctuation removed.
std::vector<std::string> MatchWords(std::string_view text);

struct EntityMatches {
  std::set<std::string> entities;
  std::size_t covered_words = 0;
  std::size_t total_words = 0;
};

// Left-to-right scan taking the longest lexicon term at each position.
EntityMatches FindEntities(std::string_view text, const EntityLexicon& lexicon);

// Set-based P/R/F1 over extracted entities. Both sets empty gives 1.0.
// Throws kMissingLexicon on an empty lexicon.
Prf EntityF1(std::string_view candidate, std::string_view reference,
             const EntityLexicon& lexicon);

}  // namespace dprlhf

#endif  // DPRLHF_EVALMETRICS_METRICS_H_
