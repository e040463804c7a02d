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


// Privacy ledger of a run: one entry per private stage plus the total.

#ifndef DPRLHF_PIPELINE_LEDGER_H_
#define DPRLHF_PIPELINE_LEDGER_H_

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dprlhf/accountant/accountant.h"
#include "dprlhf/dpsgd/dpsgd.h"

namespace dprlhf {

struct LedgerEntry {
  Stage stage = Stage::kSft;
  std::size_t n = 0;
  DpSpec spec;
  // False for a non-private stage, recorded with sigma 0 and eps = inf.
  bool private_stage = true;
  Budget budget;
};

// Entries are kept in stage order (SFT, RM, PPO), one per stage. Recording a
// stage that is already present replaces its entry, so re-running a stage
// from the same inputs leaves the file unchanged.
class PrivacyLedger {
 public:
  void Record(const LedgerEntry& entry);
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  // Sum of stage epsilons at the shared delta; +inf if any stage is
  // non-private. Throws kEmptyCurve when there are no entries.
  Budget Total() const;

  // CSV with header stage,n,q,T,C,sigma,epsilon,delta,order and a final
  // "total" row. A missing file loads as an empty ledger.
  static PrivacyLedger Load(const std::filesystem::path& path);
  void Save(const std::filesystem::path& path) const;

 private:
  std::vector<LedgerEntry> entries_;
};

// Entry for a DP stage, with epsilon from the accountant.
LedgerEntry MakeLedgerEntry(Stage stage, std::size_t n, const DpSpec& spec);

}  // namespace dprlhf

#endif  // DPRLHF_PIPELINE_LEDGER_H_
