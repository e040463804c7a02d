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


#include "dprlhf/evalmetrics/metrics.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dprlhf/common/error.h"
#include "dprlhf/tinylm/lm.h"

namespace dprlhf {
namespace {

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool IsTrimmable(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) && c != '-' && c != '\'';
}

Prf FromCounts(double overlap, double n_cand, double n_ref) {
  Prf out;
  if (n_cand == 0 || n_ref == 0 || overlap == 0) return out;
  out.precision = overlap / n_cand;
  out.recall = overlap / n_ref;
  out.f1 = 2 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

}  // namespace

std::vector<std::string> LowerWords(std::string_view text) {
  std::istringstream in(Lower(text));
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::size_t LcsLength(const std::vector<std::string>& a,
                      const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Prf RougeL(std::string_view candidate, std::string_view reference) {
  const auto c = LowerWords(candidate);
  const auto r = LowerWords(reference);
  return FromCounts(static_cast<double>(LcsLength(c, r)),
                    static_cast<double>(c.size()), static_cast<double>(r.size()));
}

double Perplexity(const Model& model, const TokenSeq& seq) {
  Require(seq.prompt_len < seq.size(), ErrorCode::kEmptyResponse,
          "no response tokens to score");
  return std::exp(NllLoss(model, seq, /*response_only=*/true));
}

EntityLexicon::EntityLexicon(const std::vector<std::string>& terms) {
  for (const std::string& t : terms) {
    const auto words = MatchWords(t);
    if (words.empty()) continue;
    std::string joined;
    for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
    terms_.insert(joined);
    max_words_ = std::max(max_words_, words.size());
  }
}

EntityLexicon EntityLexicon::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorCode::kMissingLexicon,
          "cannot open lexicon " + path.string());
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    terms.push_back(line);
  }
  EntityLexicon lex(terms);
  Require(!lex.empty(), ErrorCode::kMissingLexicon, "lexicon has no terms");
  return lex;
}

std::vector<std::string> MatchWords(std::string_view text) {
  std::vector<std::string> out;
  for (std::string w : LowerWords(text)) {
    std::size_t b = 0, e = w.size();
    while (b < e && IsTrimmable(w[b])) ++b;
    while (e > b && IsTrimmable(w[e - 1])) --e;
    if (e > b) out.push_back(w.substr(b, e - b));
  }
  return out;
}

EntityMatches FindEntities(std::string_view text, const EntityLexicon& lexicon) {
  EntityMatches m;
  const auto words = MatchWords(text);
  m.total_words = words.size();
  std::size_t i = 0;
  while (i < words.size()) {
    std::size_t taken = 0;
    const std::size_t longest = std::min(lexicon.max_words(), words.size() - i);
    for (std::size_t n = longest; n >= 1; --n) {
      std::string cand = words[i];
      for (std::size_t k = 1; k < n; ++k) cand += " " + words[i + k];
      if (lexicon.terms().count(cand)) {
        m.entities.insert(cand);
        taken = n;
        break;
      }
    }
    if (taken > 0) {
      m.covered_words += taken;
      i += taken;
    } else {
      ++i;
    }
  }
  return m;
}

Prf EntityF1(std::string_view candidate, std::string_view reference,
             const EntityLexicon& lexicon) {
  Require(!lexicon.empty(), ErrorCode::kMissingLexicon, "lexicon not loaded");
  const auto c = FindEntities(candidate, lexicon).entities;
  const auto r = FindEntities(reference, lexicon).entities;
  if (c.empty() && r.empty()) return {1.0, 1.0, 1.0};
  std::size_t overlap = 0;
  for (const auto& e : c) overlap += r.count(e);
  return FromCounts(static_cast<double>(overlap), static_cast<double>(c.size()),
                    static_cast<double>(r.size()));
}

}  // namespace dprlhf
