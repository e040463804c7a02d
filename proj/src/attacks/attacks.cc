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


#include "dprlhf/attacks/attacks.h"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "dprlhf/common/error.h"
#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/sampling.h"

namespace dprlhf {
namespace {

constexpr std::array<AttackKind, 6> kAll = {
    AttackKind::kLoss,   AttackKind::kRef,  AttackKind::kMinK,
    AttackKind::kMinKpp, AttackKind::kZlib, AttackKind::kLowercase};

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

double MeanOf(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::size_t BottomCount(std::size_t n, double k) {
  Require(k > 0.0 && k <= 1.0, ErrorCode::kInvalidArgument, "k must be in (0, 1]");
  const auto m = static_cast<std::size_t>(std::floor(k * static_cast<double>(n) + 1e-9));
  Require(m >= 1, ErrorCode::kTooShortSequence,
          "too few scored tokens for the requested fraction");
  return m;
}

double BottomMean(std::vector<double> v, double k) {
  const std::size_t m = BottomCount(v.size(), k);
  std::partial_sort(v.begin(), v.begin() + m, v.end());
  return std::accumulate(v.begin(), v.begin() + m, 0.0) / static_cast<double>(m);
}

double AucFromSorted(std::span<const double> members,
                     std::span<const double> nonmembers) {
  // Mann-Whitney U via a merged sort with midranks for ties.
  struct Item {
    double score;
    bool member;
  };
  std::vector<Item> all;
  all.reserve(members.size() + nonmembers.size());
  for (double s : members) all.push_back({s, true});
  for (double s : nonmembers) all.push_back({s, false});
  std::sort(all.begin(), all.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].member) rank_sum += mid;
    }
    i = j;
  }
  const double m = static_cast<double>(members.size());
  const double n = static_cast<double>(nonmembers.size());
  return (rank_sum - m * (m + 1.0) / 2.0) / (m * n);
}

constexpr char kSecretAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

}  // namespace

std::string_view AttackName(AttackKind kind) {
  switch (kind) {
    case AttackKind::kLoss: return "loss";
    case AttackKind::kRef: return "ref";
    case AttackKind::kMinK: return "mink";
    case AttackKind::kMinKpp: return "minkpp";
    case AttackKind::kZlib: return "zlib";
    case AttackKind::kLowercase: return "lowercase";
  }
  return "unknown";
}

AttackKind ParseAttack(std::string_view name) {
  for (AttackKind k : kAll) {
    if (AttackName(k) == name) return k;
  }
  Fail(ErrorCode::kInvalidArgument, "unknown attack " + std::string(name));
}

const std::array<AttackKind, 6>& AllAttacks() { return kAll; }

TokenStats ResponseTokenStats(const Model& model, const TokenSeq& seq) {
  const std::size_t begin = FirstScoredPosition(seq, true);
  const ForwardCache c = Forward(model, seq.tokens);
  const std::size_t vocab = model.config.vocab_size;
  std::vector<double> logp(vocab);
  TokenStats out;
  for (std::size_t t = begin; t < seq.size(); ++t) {
    LogSoftmaxRow(std::span<const double>(&c.logits[(t - 1) * vocab], vocab), logp);
    double mu = 0.0, second = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double p = std::exp(logp[j]);
      mu += p * logp[j];
      second += p * logp[j] * logp[j];
    }
    out.logp.push_back(logp[seq.tokens[t]]);
    out.mu.push_back(mu);
    out.sigma.push_back(std::sqrt(std::max(0.0, second - mu * mu)));
  }
  return out;
}

double LossAttack(const Model& model, const TokenSeq& seq) {
  return -NllLoss(model, seq, true);
}

double RefAttack(const Model& model, const Model& reference, const TokenSeq& seq) {
  return NllLoss(reference, seq, true) - NllLoss(model, seq, true);
}

double MinKFromLogProbs(std::span<const double> logp, double k) {
  return BottomMean(std::vector<double>(logp.begin(), logp.end()), k);
}

double MinKppFromStats(const TokenStats& stats, double k, double sigma_floor) {
  std::vector<double> z(stats.logp.size());
  for (std::size_t t = 0; t < z.size(); ++t) {
    z[t] = (stats.logp[t] - stats.mu[t]) / std::max(stats.sigma[t], sigma_floor);
  }
  return BottomMean(std::move(z), k);
}

double MinKAttack(const Model& model, const TokenSeq& seq, double k) {
  return MinKFromLogProbs(ResponseTokenStats(model, seq).logp, k);
}

double MinKppAttack(const Model& model, const TokenSeq& seq, double k,
                    double sigma_floor) {
  return MinKppFromStats(ResponseTokenStats(model, seq), k, sigma_floor);
}

std::size_t CompressedLength(std::string_view text) {
  Require(!text.empty(), ErrorCode::kEmptyText, "empty text");
  uLongf size = compressBound(static_cast<uLong>(text.size()));
  std::vector<Bytef> buf(size);
  const int rc = compress2(buf.data(), &size,
                           reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uLong>(text.size()), Z_DEFAULT_COMPRESSION);
  Require(rc == Z_OK, ErrorCode::kIo, "zlib compression failed");
  return size;
}

double ZlibAttack(const Model& model, std::string_view patient,
                  std::string_view response) {
  const std::size_t z = CompressedLength(response);
  return -NllLoss(model, EncodeDialogue(patient, response), true) /
         static_cast<double>(z);
}

double LowercaseAttack(const Model& model, std::string_view patient,
                       std::string_view response) {
  Require(!response.empty(), ErrorCode::kEmptyText, "empty text");
  return NllLoss(model, EncodeDialogue(Lower(patient), Lower(response)), true) -
         NllLoss(model, EncodeDialogue(patient, response), true);
}

std::vector<AttackScore> ScoreRecords(const Model& model, const Model& reference,
                                      std::span<const DialogueExample> records,
                                      std::span<const bool> is_member,
                                      const AttackConfig& config, Exec exec) {
  Require(records.size() == is_member.size(), ErrorCode::kLengthMismatch,
          "membership flags differ from record count");
  using Row = std::array<double, 6>;
  const std::vector<Row> rows = IndexedMap<Row>(
      records.size(),
      [&](std::size_t i) {
        const DialogueExample& r = records[i];
        const TokenSeq seq = EncodeDialogue(r.patient_text, r.doctor_text);
        const TokenStats st = ResponseTokenStats(model, seq);
        const double nll = -MeanOf(st.logp);
        const double nll_lower =
            NllLoss(model,
                    EncodeDialogue(Lower(r.patient_text), Lower(r.doctor_text)),
                    true);
        Row row;
        row[0] = -nll;
        row[1] = NllLoss(reference, seq, true) - nll;
        row[2] = MinKFromLogProbs(st.logp, config.mink_fraction);
        row[3] = MinKppFromStats(st, config.mink_fraction, config.sigma_floor);
        row[4] = -nll / static_cast<double>(CompressedLength(r.doctor_text));
        row[5] = nll_lower - nll;
        for (double v : row) {
          Require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite attack score");
        }
        return row;
      },
      exec);
  std::vector<AttackScore> out;
  out.reserve(records.size() * kAll.size());
  for (std::size_t a = 0; a < kAll.size(); ++a) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      out.push_back({records[i].conversation_id, rows[i][a], is_member[i], kAll[a]});
    }
  }
  return out;
}

RocResult RocAnalysis(std::span<const double> members,
                      std::span<const double> nonmembers, double max_fpr) {
  Require(!members.empty() && !nonmembers.empty(), ErrorCode::kSingleClass,
          "ROC needs members and non-members");
  RocResult r;
  r.auc = AucFromSorted(members, nonmembers);
  // Sweep thresholds from high to low; predict member when score >= tau.
  std::vector<double> m(members.begin(), members.end());
  std::vector<double> n(nonmembers.begin(), nonmembers.end());
  std::sort(m.begin(), m.end(), std::greater<>());
  std::sort(n.begin(), n.end(), std::greater<>());
  std::vector<double> taus = m;
  taus.insert(taus.end(), n.begin(), n.end());
  std::sort(taus.begin(), taus.end(), std::greater<>());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  const double nm = static_cast<double>(m.size());
  const double nn = static_cast<double>(n.size());
  r.curve.push_back({0.0, 0.0});
  std::size_t im = 0, in = 0;
  for (double tau : taus) {
    while (im < m.size() && m[im] >= tau) ++im;
    while (in < n.size() && n[in] >= tau) ++in;
    const double fpr = static_cast<double>(in) / nn;
    const double tpr = static_cast<double>(im) / nm;
    r.curve.push_back({fpr, tpr});
    if (fpr <= max_fpr + 1e-15) r.tpr_at_fpr = std::max(r.tpr_at_fpr, tpr);
  }
  return r;
}

RocResult RocAnalysis(std::span<const AttackScore> scores, double max_fpr) {
  std::vector<double> m, n;
  for (const AttackScore& s : scores) (s.is_member ? m : n).push_back(s.score);
  return RocAnalysis(m, n, max_fpr);
}

Interval BootstrapAuc(std::span<const double> members,
                      std::span<const double> nonmembers, int iterations,
                      double confidence, uint64_t seed) {
  Require(!members.empty() && !nonmembers.empty(), ErrorCode::kSingleClass,
          "bootstrap needs members and non-members");
  Require(iterations >= 1, ErrorCode::kInvalidArgument, "iterations must be >= 1");
  Rng rng(seed);
  std::vector<double> aucs;
  aucs.reserve(iterations);
  std::vector<double> m(members.size()), n(nonmembers.size());
  for (int it = 0; it < iterations; ++it) {
    for (double& v : m) v = members[rng.UniformInt(members.size())];
    for (double& v : n) v = nonmembers[rng.UniformInt(nonmembers.size())];
    aucs.push_back(AucFromSorted(m, n));
  }
  const double tail = (1.0 - confidence) / 2.0;
  return {Quantile(aucs, tail), Quantile(aucs, 1.0 - tail)};
}

std::vector<AttackSummary> SummarizeAttacks(std::span<const AttackScore> scores,
                                            const AttackConfig& config,
                                            uint64_t seed) {
  std::vector<AttackSummary> out;
  for (AttackKind kind : kAll) {
    std::vector<double> m, n;
    for (const AttackScore& s : scores) {
      if (s.attack == kind) (s.is_member ? m : n).push_back(s.score);
    }
    if (m.empty() && n.empty()) continue;
    const RocResult roc = RocAnalysis(m, n, config.max_fpr);
    AttackSummary s;
    s.attack = kind;
    s.auc = roc.auc;
    s.tpr_at_fpr = roc.tpr_at_fpr;
    s.auc_ci = BootstrapAuc(m, n, config.bootstrap_iterations, config.confidence,
                            seed);
    s.members = m.size();
    s.nonmembers = n.size();
    out.push_back(s);
  }
  return out;
}

void WriteAttackScores(const std::filesystem::path& path,
                       std::span<const AttackScore> scores) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out.precision(12);
  out << "example_id,attack,is_member,score\n";
  for (const AttackScore& s : scores) {
    out << s.example_id << ',' << AttackName(s.attack) << ','
        << (s.is_member ? 1 : 0) << ',' << s.score << '\n';
  }
}

void WriteAttackSummary(const std::filesystem::path& path,
                        std::span<const AttackSummary> summary) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out.precision(6);
  out << "attack,auc,tpr_at_1pct_fpr,auc_ci_lo,auc_ci_hi,members,nonmembers\n";
  for (const AttackSummary& s : summary) {
    out << AttackName(s.attack) << ',' << s.auc << ',' << s.tpr_at_fpr << ','
        << s.auc_ci.lo << ',' << s.auc_ci.hi << ',' << s.members << ','
        << s.nonmembers << '\n';
  }
}

MembershipPools BuildMembershipPools(std::span<const DialogueExample> train,
                                     std::span<const DialogueExample> heldout,
                                     std::size_t max_per_side, Rng& rng) {
  auto bin = [](const DialogueExample& e) {
    return static_cast<int>(std::bit_width(e.doctor_text.size()));
  };
  std::map<int, std::vector<std::size_t>> tb, hb;
  for (std::size_t i = 0; i < train.size(); ++i) tb[bin(train[i])].push_back(i);
  for (std::size_t i = 0; i < heldout.size(); ++i) hb[bin(heldout[i])].push_back(i);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (auto& [b, hs] : hb) {
    auto it = tb.find(b);
    if (it == tb.end()) continue;
    std::vector<std::size_t>& ts = it->second;
    rng.Shuffle(hs);
    rng.Shuffle(ts);
    const std::size_t k = std::min(hs.size(), ts.size());
    for (std::size_t i = 0; i < k; ++i) pairs.push_back({ts[i], hs[i]});
  }
  rng.Shuffle(pairs);
  if (pairs.size() > max_per_side) pairs.resize(max_per_side);
  MembershipPools pools;
  for (const auto& [t, h] : pairs) {
    pools.members.push_back(train[t]);
    pools.nonmembers.push_back(heldout[h]);
  }
  return pools;
}

std::string Canary::patient_text() const { return "What is secret code " + id + "?"; }

std::string Canary::doctor_text() const {
  return "secret code " + id + " is " + secret;
}

std::string Canary::prefix() const {
  return DialoguePrompt(patient_text()) + " secret code " + id + " is";
}

std::vector<Canary> MakeCanaries(int count, int repetitions, Rng& rng) {
  Require(count >= 1 && repetitions >= 1, ErrorCode::kInvalidArgument,
          "canary count and repetitions must be >= 1");
  constexpr std::size_t kAlphabet = sizeof(kSecretAlphabet) - 1;
  std::vector<Canary> out;
  for (int i = 0; i < count; ++i) {
    Canary c;
    c.id = "Q" + std::to_string(1000 + i);
    for (int j = 0; j < 8; ++j) c.secret += kSecretAlphabet[rng.UniformInt(kAlphabet)];
    c.repetitions = repetitions;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<DialogueExample> InsertCanaries(std::span<const DialogueExample> corpus,
                                            std::span<const Canary> canaries) {
  for (const Canary& c : canaries) {
    Require(c.repetitions >= 1, ErrorCode::kInvalidArgument,
            "canary repetitions must be >= 1");
    const std::string code = "secret code " + c.id;
    for (const DialogueExample& e : corpus) {
      for (const std::string* text : {&e.patient_text, &e.doctor_text}) {
        Require(text->find(code) == std::string::npos &&
                    text->find(c.secret) == std::string::npos,
                ErrorCode::kCanaryCollision,
                "canary " + c.id + " already occurs in the corpus");
      }
    }
  }
  std::vector<DialogueExample> out(corpus.begin(), corpus.end());
  for (const Canary& c : canaries) {
    for (int r = 0; r < c.repetitions; ++r) {
      out.push_back({"canary-" + c.id + "-" + std::to_string(r), c.patient_text(),
                     c.doctor_text()});
    }
  }
  return out;
}

bool CanaryExtracted(const Model& model, const Canary& canary) {
  const TokenSeq prompt = EncodePrompt(canary.prefix());
  const std::string target = " " + canary.secret;
  const TokenSeq out = Greedy(model, prompt, target.size());
  std::vector<int> gen(out.tokens.begin() + out.prompt_len, out.tokens.end());
  return Detokenize(gen) == target;
}

int CountExtractions(const Model& model, std::span<const Canary> canaries) {
  const std::vector<int> hits = IndexedMap<int>(
      canaries.size(),
      [&](std::size_t i) { return CanaryExtracted(model, canaries[i]) ? 1 : 0; },
      Exec::kParallel);
  return std::accumulate(hits.begin(), hits.end(), 0);
}

double CanaryExposure(const Model& model, const Canary& canary, int candidates,
                      Rng& rng) {
  Require(candidates >= 1, ErrorCode::kInvalidArgument, "candidates must be >= 1");
  auto nll = [&](const std::string& secret) {
    Canary c = canary;
    c.secret = secret;
    return NllLoss(model, EncodeDialogue(c.patient_text(), c.doctor_text()), true);
  };
  const double truth = nll(canary.secret);
  constexpr std::size_t kAlphabet = sizeof(kSecretAlphabet) - 1;
  int better = 0;
  for (int i = 0; i < candidates; ++i) {
    std::string s;
    for (int j = 0; j < 8; ++j) s += kSecretAlphabet[rng.UniformInt(kAlphabet)];
    if (nll(s) < truth) ++better;
  }
  return std::log2(static_cast<double>(candidates) + 1.0) -
         std::log2(static_cast<double>(better) + 1.0);
}

}  // namespace dprlhf
