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

#include "dprlhf/tinylm/sampling.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "dprlhf/common/error.h"
#include "kernels.h"

namespace dprlhf {
namespace {

constexpr char kProjections[4] = {'q', 'k', 'v', 'o'};

const double* Tensor(const ParamSet& set, const std::string& name) {
  const double* p = set.Find(name);
  Require(p != nullptr, ErrorCode::kShapeMismatch, "missing parameter " + name);
  return p;
}

// y = W x (+ adapter) for a single row.
void ProjectRow(const Model& model, int layer, char proj, const double* x,
                double* y) {
  const ModelConfig& cfg = model.config;
  const std::size_t d = cfg.d_model;
  kernels::LinearForward(x, Tensor(model.base, ProjectionWeight(layer, proj)),
                         1, d, d, y);
  if (!cfg.HasAdapter(proj)) return;
  const std::size_t r = cfg.adapter_rank;
  const double* a = Tensor(model.adapters, AdapterA(layer, proj));
  const double* b = Tensor(model.adapters, AdapterB(layer, proj));
  std::vector<double> u(r);
  kernels::LinearForward(x, a, 1, d, r, u.data());
  const double s = cfg.adapter_scale();
  for (std::size_t o = 0; o < d; ++o) {
    double acc = 0.0;
    for (std::size_t k = 0; k < r; ++k) acc += b[o * r + k] * u[k];
    y[o] += s * acc;
  }
}

double Gelu(double x) {
  constexpr double kC = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const Model& model)
    : model_(model),
      keys_(model.config.n_layers),
      values_(model.config.n_layers),
      logits_(model.config.vocab_size) {}

const std::vector<double>& IncrementalDecoder::Push(int token) {
  const ModelConfig& cfg = model_.config;
  Require(length_ < static_cast<std::size_t>(cfg.max_seq_len),
          ErrorCode::kSequenceTooLong, "decoder reached max_seq_len");
  Require(token >= 0 && token < cfg.vocab_size, ErrorCode::kInvalidArgument,
          "token id out of vocabulary");
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.d_ff;
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t pos = length_;

  const double* tok_emb = Tensor(model_.base, "tok_emb");
  const double* pos_emb = Tensor(model_.base, "pos_emb");
  std::vector<double> x(d), a(d), xhat(d), q(d), ctx(d), out(d), h1(f), m(d);
  double rstd = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    x[i] = tok_emb[token * d + i] + pos_emb[pos * d + i];
  }
  std::vector<double> scores(pos + 1);
  for (int l = 0; l < cfg.n_layers; ++l) {
    kernels::LayerNormForward(x.data(), Tensor(model_.base, LayerName(l, "ln1.g")),
                              Tensor(model_.base, LayerName(l, "ln1.b")), 1, d,
                              xhat.data(), &rstd, a.data());
    ProjectRow(model_, l, kProjections[0], a.data(), q.data());
    keys_[l].resize((pos + 1) * d);
    values_[l].resize((pos + 1) * d);
    ProjectRow(model_, l, kProjections[1], a.data(), &keys_[l][pos * d]);
    ProjectRow(model_, l, kProjections[2], a.data(), &values_[l][pos * d]);
    std::fill(ctx.begin(), ctx.end(), 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= pos; ++j) {
        const double* kj = &keys_[l][j * d + off];
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += q[off + e] * kj[e];
        scores[j] = s * att_scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j <= pos; ++j) {
        const double p = scores[j] / z;
        const double* vj = &values_[l][j * d + off];
        for (std::size_t e = 0; e < dh; ++e) ctx[off + e] += p * vj[e];
      }
    }
    ProjectRow(model_, l, kProjections[3], ctx.data(), out.data());
    for (std::size_t i = 0; i < d; ++i) x[i] += out[i];

    kernels::LayerNormForward(x.data(), Tensor(model_.base, LayerName(l, "ln2.g")),
                              Tensor(model_.base, LayerName(l, "ln2.b")), 1, d,
                              xhat.data(), &rstd, a.data());
    const double* b1 = Tensor(model_.base, LayerName(l, "mlp.fc1.b"));
    const double* b2 = Tensor(model_.base, LayerName(l, "mlp.fc2.b"));
    kernels::LinearForward(a.data(), Tensor(model_.base, LayerName(l, "mlp.fc1.w")),
                           1, d, f, h1.data());
    for (std::size_t j = 0; j < f; ++j) h1[j] = Gelu(h1[j] + b1[j]);
    kernels::LinearForward(h1.data(), Tensor(model_.base, LayerName(l, "mlp.fc2.w")),
                           1, f, d, m.data());
    for (std::size_t i = 0; i < d; ++i) x[i] += m[i] + b2[i];
  }
  kernels::LayerNormForward(x.data(), Tensor(model_.base, "ln_f.g"),
                            Tensor(model_.base, "ln_f.b"), 1, d, xhat.data(),
                            &rstd, a.data());
  kernels::LinearForward(a.data(), Tensor(model_.base, "lm_head.w"), 1, d,
                         cfg.vocab_size, logits_.data());
  ++length_;
  return logits_;
}

int NucleusDraw(std::span<const double> probs, double top_p, Rng& rng) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    if (mass >= top_p) break;
  }
  double u = rng.Uniform() * mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= probs[order[i]];
    if (u < 0.0) return order[i];
  }
  return order[keep - 1];
}

namespace {

TokenSeq Decode(const Model& model, const TokenSeq& prompt, std::size_t max_new,
                const std::function<int(const std::vector<double>&)>& choose) {
  Require(!prompt.empty(), ErrorCode::kInvalidArgument, "empty prompt");
  Require(max_new >= 1, ErrorCode::kInvalidArgument, "max_new must be >= 1");
  const std::size_t limit = model.config.max_seq_len;
  Require(prompt.size() < limit, ErrorCode::kSequenceTooLong,
          "prompt leaves no room for generation");
  TokenSeq out = prompt;
  out.prompt_len = prompt.size();
  IncrementalDecoder decoder(model);
  const std::vector<double>* logits = nullptr;
  for (int t : prompt.tokens) logits = &decoder.Push(t);
  for (std::size_t n = 0; n < max_new && out.size() < limit; ++n) {
    const int next = choose(*logits);
    out.tokens.push_back(next);
    if (next == kEosToken || out.size() >= limit) break;
    logits = &decoder.Push(next);
  }
  return out;
}

}  // namespace

TokenSeq Sample(const Model& model, const TokenSeq& prompt,
                const SamplingOptions& options, Rng& rng) {
  Require(options.temperature > 0.0, ErrorCode::kInvalidArgument,
          "temperature must be > 0");
  Require(options.top_p > 0.0 && options.top_p <= 1.0,
          ErrorCode::kInvalidArgument, "top_p must be in (0, 1]");
  std::vector<double> probs(model.config.vocab_size);
  return Decode(model, prompt, options.max_new,
                [&](const std::vector<double>& logits) {
                  double mx = -std::numeric_limits<double>::infinity();
                  for (double v : logits) mx = std::max(mx, v);
                  double z = 0.0;
                  for (std::size_t i = 0; i < logits.size(); ++i) {
                    probs[i] = std::exp((logits[i] - mx) / options.temperature);
                    z += probs[i];
                  }
                  for (double& p : probs) p /= z;
                  return NucleusDraw(probs, options.top_p, rng);
                });
}

TokenSeq Greedy(const Model& model, const TokenSeq& prompt,
                std::size_t max_new) {
  return Decode(model, prompt, max_new, [](const std::vector<double>& logits) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                            logits.begin());
  });
}

}  // namespace dprlhf
