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


#include "dprlhf/prefbuild/prefbuild.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "dprlhf/common/error.h"
#include "dprlhf/common/parallel.h"

namespace dprlhf {
namespace {

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> Words(std::string_view text) {
  return LowerWords(text);
}

uint64_t Fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> ReadPhraseFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorCode::kMissingPrerequisite,
          "cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace

std::string NormalizeText(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (c < 0x20 || c == 0x7f) continue;
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

std::string DialoguePrompt(std::string_view patient_text) {
  return "[Patient]: " + std::string(patient_text) + "\n[Doctor]:";
}

TokenSeq EncodeDialogue(std::string_view patient_text,
                        std::string_view response_text) {
  return EncodeExample(DialoguePrompt(patient_text),
                       " " + std::string(response_text));
}

TokenSeq EncodeDialoguePrompt(std::string_view patient_text) {
  return EncodePrompt(DialoguePrompt(patient_text));
}

std::string RejectedPrompt(std::string_view patient_text) {
  return "[System]: ... Avoid detailed differential\n"
         "          diagnosis ...\n"
         "[Patient]: " +
         std::string(patient_text) + "\n[Doctor]:";
}

Generator ModelGenerator(const Model& model) {
  return [&model](const std::string& prompt_text, const SamplingOptions& options,
                  Rng& rng) {
    const TokenSeq prompt = EncodePrompt(prompt_text);
    const TokenSeq out = Sample(model, prompt, options, rng);
    std::vector<int> fresh(out.tokens.begin() + out.prompt_len, out.tokens.end());
    std::string text = Detokenize(fresh);
    const std::size_t nl = text.find('\n');
    if (nl != std::string::npos) text.resize(nl);
    return text;
  };
}

std::string GenerateRejected(const Generator& generator,
                             std::string_view patient_text,
                             const GenerationConfig& config, Rng& rng,
                             std::size_t length_hint) {
  SamplingOptions options;
  options.temperature = config.temperature;
  options.top_p = config.top_p;
  options.max_new = config.max_new_tokens;
  if (config.match_length && length_hint > 0) {
    options.max_new = std::min(options.max_new, length_hint);
  }
  const std::string prompt = RejectedPrompt(patient_text);
  for (int attempt = 0; attempt < std::max(1, config.retries); ++attempt) {
    std::string text = NormalizeText(generator(prompt, options, rng));
    if (!text.empty()) return text;
  }
  Fail(ErrorCode::kGenerationFailure, "generator returned only empty text");
}

std::string DropReasonName(DropReason reason) {
  switch (reason) {
    case DropReason::kNone: return "kept";
    case DropReason::kTooShort: return "too_short";
    case DropReason::kRefusal: return "refusal";
    case DropReason::kRepetition: return "repetition";
    case DropReason::kSimilarity: return "similarity";
    case DropReason::kJudge: return "judge";
  }
  return "unknown";
}

RefusalPatterns::RefusalPatterns(std::vector<std::string> phrases) {
  for (auto& p : phrases) {
    std::string norm = Lower(NormalizeText(p));
    if (!norm.empty()) phrases_.push_back(std::move(norm));
  }
}

RefusalPatterns RefusalPatterns::Load(const std::filesystem::path& path) {
  return RefusalPatterns(ReadPhraseFile(path));
}

bool RefusalPatterns::Matches(std::string_view text) const {
  const std::string norm = Lower(NormalizeText(text));
  for (const auto& p : phrases_) {
    if (norm.find(p) != std::string::npos) return true;
  }
  return false;
}

std::size_t MaxNgramCount(std::string_view text, std::size_t n) {
  const auto w = Words(text);
  if (w.size() < n) return 0;
  std::map<std::string, std::size_t> counts;
  std::size_t best = 0;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    std::string key = w[i];
    for (std::size_t k = 1; k < n; ++k) key += ' ' + w[i + k];
    best = std::max(best, ++counts[key]);
  }
  return best;
}

double DistinctWordRatio(std::string_view text) {
  const auto w = Words(text);
  if (w.empty()) return 0.0;
  const std::set<std::string> uniq(w.begin(), w.end());
  return static_cast<double>(uniq.size()) / static_cast<double>(w.size());
}

DropReason DegenerateFilter(std::string_view response,
                            const RefusalPatterns& refusals,
                            const DegenerateConfig& config) {
  if (refusals.Matches(response)) return DropReason::kRefusal;
  if (Words(response).size() < config.min_words) return DropReason::kTooShort;
  if (MaxNgramCount(response, 4) > config.max_ngram_repeats ||
      DistinctWordRatio(response) < config.min_distinct_ratio) {
    return DropReason::kRepetition;
  }
  return DropReason::kNone;
}

HashedNgramEmbedder::HashedNgramEmbedder(std::size_t dim, std::size_t min_n,
                                         std::size_t max_n)
    : dim_(dim), min_n_(min_n), max_n_(max_n) {
  Require(dim > 0 && min_n >= 1 && min_n <= max_n, ErrorCode::kInvalidArgument,
          "bad embedder shape");
}

std::vector<double> HashedNgramEmbedder::Embed(std::string_view text) const {
  const std::string s = Lower(NormalizeText(text));
  std::vector<double> v(dim_, 0.0);
  for (std::size_t n = min_n_; n <= max_n_; ++n) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      v[Fnv1a(std::string_view(s).substr(i, n)) % dim_] += 1.0;
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

double Cosine(std::span<const double> a, std::span<const double> b) {
  Require(a.size() == b.size(), ErrorCode::kShapeMismatch,
          "embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

JudgeBreakdown JudgeScore(std::string_view response, const EntityLexicon& lexicon,
                          const RefusalPatterns& refusals,
                          const JudgeConfig& config) {
  JudgeBreakdown b;
  const EntityMatches m = FindEntities(response, lexicon);
  const double words = static_cast<double>(m.total_words);
  b.length_score = std::clamp(
      (words - config.length_lo) / (config.length_hi - config.length_lo), 0.0, 1.0);
  const double density =
      m.total_words == 0 ? 0.0 : static_cast<double>(m.covered_words) / words;
  b.density_score = std::min(1.0, density / config.density_saturation);
  b.refusal = refusals.Matches(response);
  b.score = config.length_weight * b.length_score +
            config.density_weight * b.density_score +
            config.refusal_weight * (b.refusal ? 0.0 : 1.0);
  return b;
}

bool JudgeKeep(double margin, const JudgeConfig& config) {
  return margin >= config.min_margin - 1e-12;
}

PrefBuildResult BuildPreferencePairs(std::span<const DialogueExample> examples,
                                     const Generator& generator,
                                     const Embedder& embedder,
                                     const EntityLexicon& lexicon,
                                     const RefusalPatterns& refusals,
                                     const PrefBuildConfig& config,
                                     uint64_t seed) {
  struct Candidate {
    PreferencePair pair;
    DropReason reason = DropReason::kNone;
  };
  const std::vector<Candidate> candidates = IndexedMap<Candidate>(
      examples.size(),
      [&](std::size_t i) {
        const DialogueExample& ex = examples[i];
        Candidate c;
        c.pair.conversation_id = ex.conversation_id;
        c.pair.prompt = NormalizeText(ex.patient_text);
        c.pair.chosen = NormalizeText(ex.doctor_text);
        Rng rng(DeriveSeed(seed, i));
        c.pair.rejected = GenerateRejected(generator, c.pair.prompt,
                                           config.generation, rng,
                                           c.pair.chosen.size());
        c.reason = DegenerateFilter(c.pair.rejected, refusals, config.degenerate);
        if (c.reason != DropReason::kNone) return c;
        c.pair.similarity =
            Cosine(embedder.Embed(c.pair.chosen), embedder.Embed(c.pair.rejected));
        if (c.pair.similarity >= config.similarity_threshold ||
            c.pair.chosen == c.pair.rejected) {
          c.reason = DropReason::kSimilarity;
          return c;
        }
        c.pair.judge_margin =
            JudgeScore(c.pair.chosen, lexicon, refusals, config.judge).score -
            JudgeScore(c.pair.rejected, lexicon, refusals, config.judge).score;
        if (config.judge_enabled && !JudgeKeep(c.pair.judge_margin, config.judge)) {
          c.reason = DropReason::kJudge;
        }
        return c;
      },
      Exec::kParallel);

  PrefBuildResult result;
  result.report.input = examples.size();
  for (DropReason r : {DropReason::kTooShort, DropReason::kRefusal,
                       DropReason::kRepetition, DropReason::kSimilarity,
                       DropReason::kJudge}) {
    result.report.dropped[DropReasonName(r)] = 0;
  }
  for (const Candidate& c : candidates) {
    if (c.reason == DropReason::kNone) {
      result.pairs.push_back(c.pair);
    } else {
      ++result.report.dropped[DropReasonName(c.reason)];
    }
  }
  result.report.kept = result.pairs.size();
  return result;
}

Splits GroupSplit(std::span<const DialogueExample> examples,
                  std::array<double, 3> ratios, Rng& rng) {
  double total = 0.0;
  std::size_t nonzero = 0;
  for (double r : ratios) {
    Require(r >= 0.0, ErrorCode::kInvalidArgument, "negative split ratio");
    total += r;
    if (r > 0.0) ++nonzero;
  }
  Require(std::abs(total - 1.0) < 1e-9, ErrorCode::kInvalidArgument,
          "split ratios must sum to 1");
  Splits out;
  if (examples.empty()) return out;
  std::set<std::string> unique;
  for (const auto& e : examples) unique.insert(e.conversation_id);
  Require(unique.size() >= nonzero, ErrorCode::kTooFewGroups,
          "fewer conversations than splits");
  std::vector<std::string> ids(unique.begin(), unique.end());
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[rng.UniformInt(i)]);
  }
  const std::size_t g = ids.size();
  std::array<std::size_t, 3> counts{};
  double cum = 0.0;
  std::size_t prev_cut = 0;
  for (int k = 0; k < 3; ++k) {
    cum += ratios[k];
    const std::size_t cut =
        k == 2 ? g : static_cast<std::size_t>(std::llround(cum * g));
    counts[k] = cut - prev_cut;
    prev_cut = cut;
  }
  // Every split with a non-zero ratio keeps at least one group.
  for (int k = 0; k < 3; ++k) {
    if (ratios[k] > 0.0 && counts[k] == 0) {
      auto donor = std::max_element(counts.begin(), counts.end());
      --*donor;
      counts[k] = 1;
    }
  }
  std::map<std::string, int> which;
  for (std::size_t i = 0; i < g; ++i) {
    which[ids[i]] = i < counts[0] ? 0 : (i < counts[0] + counts[1] ? 1 : 2);
  }
  for (const auto& e : examples) {
    switch (which[e.conversation_id]) {
      case 0: out.train.push_back(e); break;
      case 1: out.validation.push_back(e); break;
      default: out.test.push_back(e); break;
    }
  }
  return out;
}

std::vector<DialogueExample> ReadDialogues(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorCode::kMissingPrerequisite,
          "cannot open " + path.string());
  std::vector<DialogueExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (NormalizeText(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("conversation_id").get<std::string>(),
                   j.at("patient").get<std::string>(),
                   j.at("doctor").get<std::string>()});
  }
  return out;
}

void WriteDialogues(const std::filesystem::path& path,
                    std::span<const DialogueExample> examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& e : examples) {
    out << nlohmann::json{{"conversation_id", e.conversation_id},
                          {"patient", e.patient_text},
                          {"doctor", e.doctor_text}}
               .dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
        << '\n';
  }
}

std::vector<PreferencePair> ReadPairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorCode::kMissingPrerequisite,
          "cannot open " + path.string());
  std::vector<PreferencePair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (NormalizeText(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PreferencePair p;
    p.conversation_id = j.at("conversation_id").get<std::string>();
    p.prompt = j.at("prompt").get<std::string>();
    p.chosen = j.at("chosen").get<std::string>();
    p.rejected = j.at("rejected").get<std::string>();
    p.judge_margin = j.at("judge_margin").get<double>();
    p.similarity = j.at("similarity").get<double>();
    out.push_back(std::move(p));
  }
  return out;
}

void WritePairs(const std::filesystem::path& path,
                std::span<const PreferencePair> pairs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& p : pairs) {
    out << nlohmann::json{{"conversation_id", p.conversation_id},
                          {"prompt", p.prompt},
                          {"chosen", p.chosen},
                          {"rejected", p.rejected},
                          {"judge_margin", p.judge_margin},
                          {"similarity", p.similarity}}
               .dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
        << '\n';
  }
}

void WriteFilterReport(const std::filesystem::path& path,
                       const FilterReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << "stage,count\n";
  out << "input," << report.input << '\n';
  for (const char* r : {"refusal", "too_short", "repetition", "similarity", "judge"}) {
    auto it = report.dropped.find(r);
    out << r << ',' << (it == report.dropped.end() ? 0 : it->second) << '\n';
  }
  out << "kept," << report.kept << '\n';
}

}  // namespace dprlhf
