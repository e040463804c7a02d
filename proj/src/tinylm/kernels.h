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

// Dense row-major kernels for the decoder. Weights are [out, in].

#ifndef DPRLHF_SRC_TINYLM_KERNELS_H_
#define DPRLHF_SRC_TINYLM_KERNELS_H_

#include <cmath>
#include <cstddef>

namespace dprlhf::kernels {

// y[len, out] = x[len, in] W^T
inline void LinearForward(const double* x, const double* w, std::size_t len,
                          std::size_t in, std::size_t out, double* y) {
  for (std::size_t t = 0; t < len; ++t) {
    const double* xt = x + t * in;
    double* yt = y + t * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w + o * in;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xt[i];
      yt[o] = acc;
    }
  }
}

// dx[len, in] += dy[len, out] W
inline void LinearBackwardInput(const double* dy, const double* w,
                                std::size_t len, std::size_t out,
                                std::size_t in, double* dx) {
  for (std::size_t t = 0; t < len; ++t) {
    const double* dyt = dy + t * out;
    double* dxt = dx + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyt[o];
      if (g == 0.0) continue;
      const double* wo = w + o * in;
      for (std::size_t i = 0; i < in; ++i) dxt[i] += g * wo[i];
    }
  }
}

// dW[out, in] += dy^T x
inline void LinearBackwardWeight(const double* dy, const double* x,
                                 std::size_t len, std::size_t out,
                                 std::size_t in, double* dw) {
  for (std::size_t t = 0; t < len; ++t) {
    const double* dyt = dy + t * out;
    const double* xt = x + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyt[o];
      if (g == 0.0) continue;
      double* wo = dw + o * in;
      for (std::size_t i = 0; i < in; ++i) wo[i] += g * xt[i];
    }
  }
}

inline constexpr double kLayerNormEps = 1e-5;

inline void LayerNormForward(const double* x, const double* gain,
                             const double* bias, std::size_t len, std::size_t d,
                             double* xhat, double* rstd, double* y) {
  for (std::size_t t = 0; t < len; ++t) {
    const double* xt = x + t * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xt[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xt[i] - mean) * (xt[i] - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[t] = r;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xt[i] - mean) * r;
      xhat[t * d + i] = h;
      y[t * d + i] = h * gain[i] + bias[i];
    }
  }
}

// dx += d(norm)/dx^T dy. dgain/dbias are optional.
inline void LayerNormBackward(const double* dy, const double* xhat,
                              const double* rstd, const double* gain,
                              std::size_t len, std::size_t d, double* dx,
                              double* dgain, double* dbias) {
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t t = 0; t < len; ++t) {
    const double* dyt = dy + t * d;
    const double* ht = xhat + t * d;
    double m1 = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = dyt[i] * gain[i];
      m1 += g;
      m2 += g * ht[i];
    }
    m1 *= inv_d;
    m2 *= inv_d;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = dyt[i] * gain[i];
      dx[t * d + i] += rstd[t] * (g - m1 - ht[i] * m2);
    }
    if (dgain != nullptr) {
      for (std::size_t i = 0; i < d; ++i) dgain[i] += dyt[i] * ht[i];
    }
    if (dbias != nullptr) {
      for (std::size_t i = 0; i < d; ++i) dbias[i] += dyt[i];
    }
  }
}

}  // namespace dprlhf::kernels

#endif  // DPRLHF_SRC_TINYLM_KERNELS_H_
