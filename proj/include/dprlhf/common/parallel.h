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

#ifndef DPRLHF_COMMON_PARALLEL_H_
#define DPRLHF_COMMON_PARALLEL_H_

#include <cstddef>
#include <exception>
#include <mutex>
#include <vector>

namespace dprlhf {

enum class Exec { kSerial, kParallel };

// Evaluates fn(i) for i in [0, n) and stores the result at position i.
// The parallel path uses OpenMP over independent indices; since every result
// lands in its own slot and callers reduce in index order, both paths produce
// bitwise-identical output. The serial path is the reference used in tests.
template <typename T, typename Fn>
std::vector<T> IndexedMap(std::size_t n, Fn&& fn, Exec exec = Exec::kParallel) {
  std::vector<T> out(n);
  if (exec == Exec::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::exception_ptr first_error;
  std::mutex error_mu;
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace dprlhf

#endif  // DPRLHF_COMMON_PARALLEL_H_
