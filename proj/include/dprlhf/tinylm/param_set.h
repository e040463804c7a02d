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

#ifndef DPRLHF_TINYLM_PARAM_SET_H_
#define DPRLHF_TINYLM_PARAM_SET_H_

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dprlhf {

enum class ParamMode { kFull, kAdapter };

struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Named tensors backed by one contiguous buffer. Entry order is insertion
// order and is part of the layout: two sets with the same layout can be
// combined elementwise through flat().
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(ParamMode mode) : mode_(mode) {}

  ParamMode mode() const { return mode_; }
  void set_mode(ParamMode mode) { mode_ = mode; }

  // Appends a zero-filled tensor. Throws kInvalidArgument on duplicate names.
  // The returned span is invalidated by the next Add.
  std::span<double> Add(const std::string& name, std::vector<std::size_t> shape);

  bool Contains(const std::string& name) const;
  const ParamEntry& entry(const std::string& name) const;
  const std::vector<ParamEntry>& entries() const { return entries_; }

  std::span<double> Mutable(const std::string& name);
  std::span<const double> Get(const std::string& name) const;
  // Null when the name is absent.
  double* Find(const std::string& name);
  const double* Find(const std::string& name) const;

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return entries_.empty(); }

  ParamSet ZerosLike() const;
  bool SameLayout(const ParamSet& other) const;

  // Appends every entry of `other` (names must not collide), prefixing names.
  void AppendAll(const ParamSet& other, const std::string& prefix = "");
  // Copies a contiguous name-prefixed slice back out (inverse of AppendAll).
  ParamSet Extract(const std::string& prefix, const ParamSet& layout) const;

  double L2Norm() const;
  void Scale(double factor);
  // this += factor * other; layouts must match.
  void Axpy(double factor, const ParamSet& other);

  bool operator==(const ParamSet& other) const;

 private:
  ParamMode mode_ = ParamMode::kFull;
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::vector<double> data_;
};

}  // namespace dprlhf

#endif  // DPRLHF_TINYLM_PARAM_SET_H_
