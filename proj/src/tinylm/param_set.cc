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

#include "dprlhf/tinylm/param_set.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dprlhf/common/error.h"

namespace dprlhf {

std::span<double> ParamSet::Add(const std::string& name,
                                std::vector<std::size_t> shape) {
  Require(!index_.contains(name), ErrorCode::kInvalidArgument,
          "duplicate parameter name " + name);
  const std::size_t count = std::accumulate(shape.begin(), shape.end(),
                                            std::size_t{1}, std::multiplies<>());
  ParamEntry e{name, std::move(shape), data_.size(), count};
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  data_.resize(data_.size() + count, 0.0);
  const ParamEntry& added = entries_.back();
  return std::span<double>(data_).subspan(added.offset, added.size);
}

bool ParamSet::Contains(const std::string& name) const {
  return index_.contains(name);
}

const ParamEntry& ParamSet::entry(const std::string& name) const {
  auto it = index_.find(name);
  Require(it != index_.end(), ErrorCode::kShapeMismatch,
          "missing parameter " + name);
  return entries_[it->second];
}

std::span<double> ParamSet::Mutable(const std::string& name) {
  const ParamEntry& e = entry(name);
  return std::span<double>(data_).subspan(e.offset, e.size);
}

std::span<const double> ParamSet::Get(const std::string& name) const {
  const ParamEntry& e = entry(name);
  return std::span<const double>(data_).subspan(e.offset, e.size);
}

double* ParamSet::Find(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return nullptr;
  return data_.data() + entries_[it->second].offset;
}

const double* ParamSet::Find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return nullptr;
  return data_.data() + entries_[it->second].offset;
}

ParamSet ParamSet::ZerosLike() const {
  ParamSet out = *this;
  std::fill(out.data_.begin(), out.data_.end(), 0.0);
  return out;
}

bool ParamSet::SameLayout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].shape != other.entries_[i].shape) {
      return false;
    }
  }
  return true;
}

void ParamSet::AppendAll(const ParamSet& other, const std::string& prefix) {
  for (const ParamEntry& e : other.entries_) {
    std::span<double> dst = Add(prefix + e.name, e.shape);
    std::copy_n(other.data_.begin() + e.offset, e.size, dst.begin());
  }
}

ParamSet ParamSet::Extract(const std::string& prefix,
                           const ParamSet& layout) const {
  ParamSet out(layout.mode());
  for (const ParamEntry& e : layout.entries_) {
    const ParamEntry& src = entry(prefix + e.name);
    Require(src.shape == e.shape, ErrorCode::kShapeMismatch,
            "shape mismatch extracting " + e.name);
    std::span<double> dst = out.Add(e.name, e.shape);
    std::copy_n(data_.begin() + src.offset, src.size, dst.begin());
  }
  return out;
}

double ParamSet::L2Norm() const {
  double sum = 0.0;
  for (double v : data_) sum += v * v;
  return std::sqrt(sum);
}

void ParamSet::Scale(double factor) {
  for (double& v : data_) v *= factor;
}

void ParamSet::Axpy(double factor, const ParamSet& other) {
  Require(SameLayout(other), ErrorCode::kShapeMismatch,
          "Axpy on mismatched layouts");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += factor * other.data_[i];
  }
}

bool ParamSet::operator==(const ParamSet& other) const {
  return mode_ == other.mode_ && SameLayout(other) && data_ == other.data_;
}

}  // namespace dprlhf
