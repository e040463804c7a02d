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


#include "dprlhf/pipeline/ledger.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "dprlhf/common/error.h"

namespace dprlhf {
namespace {

Stage ParseStage(const std::string& s) {
  for (Stage st : {Stage::kSft, Stage::kRm, Stage::kPpo}) {
    if (StageName(st) == s) return st;
  }
  Fail(ErrorCode::kIo, "unknown ledger stage " + s);
}

std::string Num(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void PrivacyLedger::Record(const LedgerEntry& entry) {
  Require(entry.stage != Stage::kTotal, ErrorCode::kInvalidArgument,
          "the total is derived, not recorded");
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const LedgerEntry& e) { return e.stage == entry.stage; });
  if (it != entries_.end()) {
    *it = entry;
    return;
  }
  entries_.push_back(entry);
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const LedgerEntry& a, const LedgerEntry& b) {
                     return static_cast<int>(a.stage) < static_cast<int>(b.stage);
                   });
}

Budget PrivacyLedger::Total() const {
  Require(!entries_.empty(), ErrorCode::kEmptyCurve, "ledger is empty");
  std::vector<Budget> budgets;
  for (const LedgerEntry& e : entries_) budgets.push_back(e.budget);
  Budget total = ComposeStages(budgets);
  for (const LedgerEntry& e : entries_) {
    if (!e.private_stage) total.epsilon = std::numeric_limits<double>::infinity();
  }
  return total;
}

PrivacyLedger PrivacyLedger::Load(const std::filesystem::path& path) {
  PrivacyLedger ledger;
  std::ifstream in(path);
  if (!in.good()) return ledger;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    Require(f.size() >= 8, ErrorCode::kIo, "malformed ledger row: " + line);
    if (f[0] == "total") continue;
    LedgerEntry e;
    e.stage = ParseStage(f[0]);
    e.n = std::stoull(f[1]);
    e.spec.sampling_rate = std::stod(f[2]);
    e.spec.steps = std::stoll(f[3]);
    e.spec.clip_norm = std::stod(f[4]);
    e.spec.noise_multiplier = std::stod(f[5]);
    e.budget.epsilon = f[6] == "inf" ? std::numeric_limits<double>::infinity()
                                     : std::stod(f[6]);
    e.budget.delta = e.spec.delta = std::stod(f[7]);
    e.budget.order = f.size() > 8 && !f[8].empty() ? std::stod(f[8]) : 0.0;
    e.budget.stage = e.stage;
    e.private_stage = e.spec.noise_multiplier > 0.0;
    ledger.entries_.push_back(e);
  }
  return ledger;
}

void PrivacyLedger::Save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << "stage,n,q,T,C,sigma,epsilon,delta,order\n";
  for (const LedgerEntry& e : entries_) {
    out << StageName(e.stage) << ',' << e.n << ',' << Num(e.spec.sampling_rate)
        << ',' << e.spec.steps << ',' << Num(e.spec.clip_norm) << ','
        << Num(e.spec.noise_multiplier) << ',' << Num(e.budget.epsilon) << ','
        << Num(e.budget.delta) << ',' << Num(e.budget.order) << '\n';
  }
  if (!entries_.empty()) {
    const Budget total = Total();
    out << "total,,,,,," << Num(total.epsilon) << ',' << Num(total.delta) << ",\n";
  }
}

LedgerEntry MakeLedgerEntry(Stage stage, std::size_t n, const DpSpec& spec) {
  LedgerEntry e;
  e.stage = stage;
  e.n = n;
  e.spec = spec;
  e.private_stage = spec.noise_multiplier > 0.0;
  e.budget = EpsilonFor(spec.sampling_rate, spec.noise_multiplier, spec.steps,
                        spec.delta, stage);
  return e;
}

}  // namespace dprlhf
