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

#include "dprlhf/tinylm/lm.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dprlhf/common/error.h"
#include "dprlhf/common/rng.h"
#include "kernels.h"

namespace dprlhf {
namespace {

using kernels::LayerNormBackward;
using kernels::LayerNormForward;
using kernels::LinearBackwardInput;
using kernels::LinearBackwardWeight;
using kernels::LinearForward;

constexpr char kProjections[4] = {'q', 'k', 'v', 'o'};

// Resolved pointers for one adapted projection.
struct Projection {
  const double* w = nullptr;
  const double* a = nullptr;
  const double* b = nullptr;
  double* dw = nullptr;
  double* da = nullptr;
  double* db = nullptr;
};

Projection ResolveProjection(const Model& model, int layer, char proj,
                             ParamSet* grads) {
  Projection p;
  p.w = model.base.Find(ProjectionWeight(layer, proj));
  if (model.config.HasAdapter(proj)) {
    p.a = model.adapters.Find(AdapterA(layer, proj));
    p.b = model.adapters.Find(AdapterB(layer, proj));
    Require(p.a != nullptr && p.b != nullptr, ErrorCode::kShapeMismatch,
            "missing adapter for layer " + std::to_string(layer));
  }
  if (grads != nullptr) {
    p.dw = grads->Find(ProjectionWeight(layer, proj));
    if (p.a != nullptr) {
      p.da = grads->Find(AdapterA(layer, proj));
      p.db = grads->Find(AdapterB(layer, proj));
    }
  }
  return p;
}

const double* MustFind(const ParamSet& set, const std::string& name) {
  const double* p = set.Find(name);
  Require(p != nullptr, ErrorCode::kShapeMismatch, "missing parameter " + name);
  return p;
}

// y = x W^T + s * (mask(x) A^T) B^T. Caches the adapter intermediates.
void ProjectionForward(const Projection& p, const ModelConfig& cfg,
                       const double* x, std::size_t len, double* y,
                       std::vector<double>& lora_mask,
                       std::vector<double>& lora_x, std::vector<double>& lora_u,
                       Rng* dropout) {
  const std::size_t d = cfg.d_model;
  LinearForward(x, p.w, len, d, d, y);
  if (p.a == nullptr) return;
  const std::size_t r = cfg.adapter_rank;
  lora_x.assign(x, x + len * d);
  if (dropout != nullptr) {
    const double keep = 1.0 - cfg.adapter_dropout;
    lora_mask.resize(len * d);
    for (std::size_t i = 0; i < len * d; ++i) {
      lora_mask[i] = dropout->Bernoulli(keep) ? 1.0 / keep : 0.0;
      lora_x[i] *= lora_mask[i];
    }
  }
  lora_u.assign(len * r, 0.0);
  LinearForward(lora_x.data(), p.a, len, d, r, lora_u.data());
  const double s = cfg.adapter_scale();
  for (std::size_t t = 0; t < len; ++t) {
    const double* u = &lora_u[t * r];
    double* yt = y + t * d;
    for (std::size_t o = 0; o < d; ++o) {
      const double* brow = p.b + o * r;
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += brow[k] * u[k];
      yt[o] += s * acc;
    }
  }
}

void ProjectionBackward(const Projection& p, const ModelConfig& cfg,
                        const double* x, const double* dy, std::size_t len,
                        const std::vector<double>& lora_mask,
                        const std::vector<double>& lora_x,
                        const std::vector<double>& lora_u, double* dx) {
  const std::size_t d = cfg.d_model;
  if (p.dw != nullptr) LinearBackwardWeight(dy, x, len, d, d, p.dw);
  LinearBackwardInput(dy, p.w, len, d, d, dx);
  if (p.a == nullptr) return;
  const std::size_t r = cfg.adapter_rank;
  const double s = cfg.adapter_scale();
  // du = s * dy B  [len, r]
  std::vector<double> du(len * r, 0.0);
  LinearBackwardInput(dy, p.b, len, d, r, du.data());
  for (double& v : du) v *= s;
  if (p.db != nullptr) {
    // dB[o, k] += s * sum_t dy[t, o] u[t, k]
    for (std::size_t t = 0; t < len; ++t) {
      const double* u = &lora_u[t * r];
      for (std::size_t o = 0; o < d; ++o) {
        const double g = s * dy[t * d + o];
        if (g == 0.0) continue;
        double* row = p.db + o * r;
        for (std::size_t k = 0; k < r; ++k) row[k] += g * u[k];
      }
    }
  }
  if (p.da != nullptr) LinearBackwardWeight(du.data(), lora_x.data(), len, r, d, p.da);
  std::vector<double> dxd(len * d, 0.0);
  LinearBackwardInput(du.data(), p.a, len, r, d, dxd.data());
  if (!lora_mask.empty()) {
    for (std::size_t i = 0; i < len * d; ++i) dx[i] += lora_mask[i] * dxd[i];
  } else {
    for (std::size_t i = 0; i < len * d; ++i) dx[i] += dxd[i];
  }
}

double Gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

double GeluGrad(double x) {
  constexpr double kC = 0.7978845608028654;
  const double inner = kC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace

ForwardCache Forward(const Model& model, std::span<const int> tokens,
                     const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  const std::size_t len = tokens.size();
  Require(len >= 1, ErrorCode::kInvalidArgument, "empty sequence");
  Require(len <= static_cast<std::size_t>(cfg.max_seq_len),
          ErrorCode::kSequenceTooLong,
          "length " + std::to_string(len) + " exceeds max_seq_len " +
              std::to_string(cfg.max_seq_len));
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.d_ff;
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache c;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.length = len;
  c.layers.resize(cfg.n_layers);

  const double* tok_emb = MustFind(model.base, "tok_emb");
  const double* pos_emb = MustFind(model.base, "pos_emb");
  std::vector<double> x(len * d);
  for (std::size_t t = 0; t < len; ++t) {
    const int id = tokens[t];
    Require(id >= 0 && id < cfg.vocab_size, ErrorCode::kInvalidArgument,
            "token id out of vocabulary: " + std::to_string(id));
    for (std::size_t i = 0; i < d; ++i) {
      x[t * d + i] = tok_emb[id * d + i] + pos_emb[t * d + i];
    }
  }

  const bool use_dropout = options.training && cfg.adapter_dropout > 0.0 &&
                           cfg.adapter_rank > 0;
  Rng dropout_rng(options.dropout_seed);

  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache& lc = c.layers[l];
    lc.x_in = x;
    lc.ln1_xhat.resize(len * d);
    lc.ln1_rstd.resize(len);
    lc.a.resize(len * d);
    LayerNormForward(x.data(), MustFind(model.base, LayerName(l, "ln1.g")),
                     MustFind(model.base, LayerName(l, "ln1.b")), len, d,
                     lc.ln1_xhat.data(), lc.ln1_rstd.data(), lc.a.data());

    Projection proj[4];
    for (int p = 0; p < 4; ++p) {
      proj[p] = ResolveProjection(model, l, kProjections[p], nullptr);
    }
    lc.q.resize(len * d);
    lc.k.resize(len * d);
    lc.v.resize(len * d);
    Rng* drop = use_dropout ? &dropout_rng : nullptr;
    ProjectionForward(proj[0], cfg, lc.a.data(), len, lc.q.data(), lc.lora_mask[0],
                      lc.lora_x[0], lc.lora_u[0], drop);
    ProjectionForward(proj[1], cfg, lc.a.data(), len, lc.k.data(), lc.lora_mask[1],
                      lc.lora_x[1], lc.lora_u[1], drop);
    ProjectionForward(proj[2], cfg, lc.a.data(), len, lc.v.data(), lc.lora_mask[2],
                      lc.lora_x[2], lc.lora_u[2], drop);

    lc.probs.assign(heads * len * len, 0.0);
    lc.ctx.assign(len * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        double* prow = &lc.probs[(h * len + i) * len];
        const double* qi = &lc.q[i * d + off];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = &lc.k[j * d + off];
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          prow[j] = s * att_scale;
          mx = std::max(mx, prow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        double* ci = &lc.ctx[i * d + off];
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] /= z;
          const double* vj = &lc.v[j * d + off];
          for (std::size_t e = 0; e < dh; ++e) ci[e] += prow[j] * vj[e];
        }
      }
    }

    std::vector<double> attn_out(len * d);
    ProjectionForward(proj[3], cfg, lc.ctx.data(), len, attn_out.data(),
                      lc.lora_mask[3], lc.lora_x[3], lc.lora_u[3], drop);
    for (std::size_t i = 0; i < len * d; ++i) x[i] += attn_out[i];
    lc.x_mid = x;

    lc.ln2_xhat.resize(len * d);
    lc.ln2_rstd.resize(len);
    lc.b.resize(len * d);
    LayerNormForward(x.data(), MustFind(model.base, LayerName(l, "ln2.g")),
                     MustFind(model.base, LayerName(l, "ln2.b")), len, d,
                     lc.ln2_xhat.data(), lc.ln2_rstd.data(), lc.b.data());
    const double* w1 = MustFind(model.base, LayerName(l, "mlp.fc1.w"));
    const double* b1 = MustFind(model.base, LayerName(l, "mlp.fc1.b"));
    const double* w2 = MustFind(model.base, LayerName(l, "mlp.fc2.w"));
    const double* b2 = MustFind(model.base, LayerName(l, "mlp.fc2.b"));
    lc.h1.resize(len * f);
    LinearForward(lc.b.data(), w1, len, d, f, lc.h1.data());
    lc.g.resize(len * f);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < f; ++j) {
        double& h = lc.h1[t * f + j];
        h += b1[j];
        lc.g[t * f + j] = Gelu(h);
      }
    }
    std::vector<double> m(len * d);
    LinearForward(lc.g.data(), w2, len, f, d, m.data());
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += m[t * d + i] + b2[i];
    }
  }

  c.x_final = x;
  c.lnf_xhat.resize(len * d);
  c.lnf_rstd.resize(len);
  c.hidden.resize(len * d);
  LayerNormForward(x.data(), MustFind(model.base, "ln_f.g"),
                   MustFind(model.base, "ln_f.b"), len, d, c.lnf_xhat.data(),
                   c.lnf_rstd.data(), c.hidden.data());
  if (options.compute_logits) {
    const std::size_t vocab = cfg.vocab_size;
    c.logits.resize(len * vocab);
    LinearForward(c.hidden.data(), MustFind(model.base, "lm_head.w"), len, d,
                  vocab, c.logits.data());
  }
  return c;
}

void Backward(const Model& model, const ForwardCache& c,
              std::span<const double> dlogits, std::span<const double> dhidden,
              ParamSet& grads) {
  const ModelConfig& cfg = model.config;
  const std::size_t len = c.length;
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.d_ff;
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = d / heads;
  const std::size_t vocab = cfg.vocab_size;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> dh_final(len * d, 0.0);
  if (!dhidden.empty()) {
    Require(dhidden.size() == len * d, ErrorCode::kShapeMismatch,
            "dhidden has wrong size");
    std::copy(dhidden.begin(), dhidden.end(), dh_final.begin());
  }
  if (!dlogits.empty()) {
    Require(dlogits.size() == len * vocab && c.logits.size() == len * vocab,
            ErrorCode::kShapeMismatch, "dlogits has wrong size");
    const double* w_out = MustFind(model.base, "lm_head.w");
    LinearBackwardInput(dlogits.data(), w_out, len, vocab, d, dh_final.data());
    if (double* dw = grads.Find("lm_head.w")) {
      LinearBackwardWeight(dlogits.data(), c.hidden.data(), len, vocab, d, dw);
    }
  }

  std::vector<double> dx(len * d, 0.0);
  LayerNormBackward(dh_final.data(), c.lnf_xhat.data(), c.lnf_rstd.data(),
                    MustFind(model.base, "ln_f.g"), len, d, dx.data(),
                    grads.Find("ln_f.g"), grads.Find("ln_f.b"));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerCache& lc = c.layers[l];
    // MLP branch.
    const double* w1 = MustFind(model.base, LayerName(l, "mlp.fc1.w"));
    const double* w2 = MustFind(model.base, LayerName(l, "mlp.fc2.w"));
    if (double* db2 = grads.Find(LayerName(l, "mlp.fc2.b"))) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t i = 0; i < d; ++i) db2[i] += dx[t * d + i];
      }
    }
    if (double* dw2 = grads.Find(LayerName(l, "mlp.fc2.w"))) {
      LinearBackwardWeight(dx.data(), lc.g.data(), len, d, f, dw2);
    }
    std::vector<double> dg(len * f, 0.0);
    LinearBackwardInput(dx.data(), w2, len, d, f, dg.data());
    for (std::size_t i = 0; i < len * f; ++i) dg[i] *= GeluGrad(lc.h1[i]);
    if (double* db1 = grads.Find(LayerName(l, "mlp.fc1.b"))) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < f; ++j) db1[j] += dg[t * f + j];
      }
    }
    if (double* dw1 = grads.Find(LayerName(l, "mlp.fc1.w"))) {
      LinearBackwardWeight(dg.data(), lc.b.data(), len, f, d, dw1);
    }
    std::vector<double> db(len * d, 0.0);
    LinearBackwardInput(dg.data(), w1, len, f, d, db.data());
    // dx now holds the gradient w.r.t. x_mid once the norm branch is added.
    LayerNormBackward(db.data(), lc.ln2_xhat.data(), lc.ln2_rstd.data(),
                      MustFind(model.base, LayerName(l, "ln2.g")), len, d,
                      dx.data(), grads.Find(LayerName(l, "ln2.g")),
                      grads.Find(LayerName(l, "ln2.b")));

    // Attention branch.
    Projection proj[4];
    for (int p = 0; p < 4; ++p) {
      proj[p] = ResolveProjection(model, l, kProjections[p], &grads);
    }
    std::vector<double> dctx(len * d, 0.0);
    ProjectionBackward(proj[3], cfg, lc.ctx.data(), dx.data(), len,
                       lc.lora_mask[3], lc.lora_x[3], lc.lora_u[3], dctx.data());

    std::vector<double> dq(len * d, 0.0), dk(len * d, 0.0), dv(len * d, 0.0);
    std::vector<double> dp(len);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        const double* prow = &lc.probs[(h * len + i) * len];
        const double* dci = &dctx[i * d + off];
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = &lc.v[j * d + off];
          double* dvj = &dv[j * d + off];
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) {
            s += dci[e] * vj[e];
            dvj[e] += prow[j] * dci[e];
          }
          dp[j] = s;
          dot += prow[j] * s;
        }
        const double* qi = &lc.q[i * d + off];
        double* dqi = &dq[i * d + off];
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = prow[j] * (dp[j] - dot) * att_scale;
          if (ds == 0.0) continue;
          const double* kj = &lc.k[j * d + off];
          double* dkj = &dk[j * d + off];
          for (std::size_t e = 0; e < dh; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
    std::vector<double> da(len * d, 0.0);
    ProjectionBackward(proj[0], cfg, lc.a.data(), dq.data(), len,
                       lc.lora_mask[0], lc.lora_x[0],
                       lc.lora_u[0], da.data());
    ProjectionBackward(proj[1], cfg, lc.a.data(), dk.data(), len,
                       lc.lora_mask[1], lc.lora_x[1],
                       lc.lora_u[1], da.data());
    ProjectionBackward(proj[2], cfg, lc.a.data(), dv.data(), len,
                       lc.lora_mask[2], lc.lora_x[2],
                       lc.lora_u[2], da.data());
    LayerNormBackward(da.data(), lc.ln1_xhat.data(), lc.ln1_rstd.data(),
                      MustFind(model.base, LayerName(l, "ln1.g")), len, d,
                      dx.data(), grads.Find(LayerName(l, "ln1.g")),
                      grads.Find(LayerName(l, "ln1.b")));
  }

  if (double* dtok = grads.Find("tok_emb")) {
    for (std::size_t t = 0; t < len; ++t) {
      double* row = dtok + static_cast<std::size_t>(c.tokens[t]) * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += dx[t * d + i];
    }
  }
  if (double* dpos = grads.Find("pos_emb")) {
    for (std::size_t i = 0; i < len * d; ++i) dpos[i] += dx[i];
  }
}

namespace {

struct HeadView {
  const double* w;
  double b;
  std::string prefix;
};

HeadView ResolveHead(const Model& model) {
  Require(model.head_kind != HeadKind::kNone, ErrorCode::kInvalidArgument,
          "model has no scalar head");
  HeadView h;
  h.prefix = HeadPrefix(model.head_kind);
  h.w = MustFind(model.head, h.prefix + ".w");
  h.b = MustFind(model.head, h.prefix + ".b")[0];
  return h;
}

}  // namespace

double HeadValue(const Model& model, const ForwardCache& cache,
                 std::size_t position) {
  Require(position < cache.length, ErrorCode::kInvalidArgument,
          "head position out of range");
  const HeadView h = ResolveHead(model);
  const std::size_t d = model.config.d_model;
  const double* row = &cache.hidden[position * d];
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) acc += row[i] * h.w[i];
  return acc + h.b;
}

std::vector<double> HeadValues(const Model& model, const ForwardCache& cache) {
  std::vector<double> out(cache.length);
  for (std::size_t t = 0; t < cache.length; ++t) out[t] = HeadValue(model, cache, t);
  return out;
}

void HeadBackward(const Model& model, const ForwardCache& cache,
                  std::span<const double> dvalues, std::span<double> dhidden,
                  ParamSet& grads) {
  const HeadView h = ResolveHead(model);
  const std::size_t d = model.config.d_model;
  Require(dvalues.size() == cache.length && dhidden.size() == cache.length * d,
          ErrorCode::kShapeMismatch, "head gradient buffers have wrong size");
  double* dw = grads.Find(h.prefix + ".w");
  double* db = grads.Find(h.prefix + ".b");
  for (std::size_t t = 0; t < cache.length; ++t) {
    const double g = dvalues[t];
    if (g == 0.0) continue;
    const double* row = &cache.hidden[t * d];
    for (std::size_t i = 0; i < d; ++i) {
      dhidden[t * d + i] += g * h.w[i];
      if (dw != nullptr) dw[i] += g * row[i];
    }
    if (db != nullptr) db[0] += g;
  }
}

void LogSoftmaxRow(std::span<const double> logits, std::span<double> out) {
  const double lse = LogSumExp(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

double LogSumExp(std::span<const double> values) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

std::vector<double> ForwardLogits(const Model& model, const TokenSeq& seq) {
  return Forward(model, seq.tokens).logits;
}

std::size_t FirstScoredPosition(const TokenSeq& seq, bool response_only) {
  Require(seq.size() >= 2, ErrorCode::kInvalidArgument,
          "need at least two tokens to score");
  Require(seq.prompt_len <= seq.size(), ErrorCode::kInvalidArgument,
          "prompt_len exceeds sequence length");
  if (!response_only) return 1;
  Require(seq.prompt_len < seq.size(), ErrorCode::kEmptyTarget,
          "response region is empty");
  return std::max<std::size_t>(1, seq.prompt_len);
}

std::vector<double> TokenLogProbs(const Model& model, const TokenSeq& seq,
                                  std::size_t begin) {
  Require(begin >= 1 && begin <= seq.size(), ErrorCode::kInvalidArgument,
          "bad scoring range");
  const ForwardCache c = Forward(model, seq.tokens);
  const std::size_t vocab = model.config.vocab_size;
  std::vector<double> out;
  out.reserve(seq.size() - begin);
  for (std::size_t t = begin; t < seq.size(); ++t) {
    std::span<const double> row(&c.logits[(t - 1) * vocab], vocab);
    out.push_back(row[seq.tokens[t]] - LogSumExp(row));
  }
  return out;
}

double NllLoss(const Model& model, const TokenSeq& seq, bool response_only) {
  const std::size_t begin = FirstScoredPosition(seq, response_only);
  const std::vector<double> lp = TokenLogProbs(model, seq, begin);
  double sum = 0.0;
  for (double v : lp) sum -= v;
  return sum / static_cast<double>(lp.size());
}

ExampleGrad NllLossGrad(const Model& model, const TokenSeq& seq,
                        bool response_only, const ForwardOptions& options) {
  const std::size_t begin = FirstScoredPosition(seq, response_only);
  ForwardOptions opts = options;
  opts.compute_logits = true;
  const ForwardCache c = Forward(model, seq.tokens, opts);
  const std::size_t vocab = model.config.vocab_size;
  const std::size_t len = seq.size();
  const double inv = 1.0 / static_cast<double>(len - begin);
  std::vector<double> dlogits(len * vocab, 0.0);
  std::vector<double> logp(vocab);
  double loss = 0.0;
  for (std::size_t t = begin; t < len; ++t) {
    std::span<const double> row(&c.logits[(t - 1) * vocab], vocab);
    LogSoftmaxRow(row, logp);
    const int target = seq.tokens[t];
    loss -= logp[target];
    double* drow = &dlogits[(t - 1) * vocab];
    for (std::size_t j = 0; j < vocab; ++j) drow[j] = std::exp(logp[j]) * inv;
    drow[target] -= inv;
  }
  ExampleGrad out;
  out.grads = TrainableLayout(model);
  out.loss = loss * inv;
  Require(std::isfinite(out.loss), ErrorCode::kNonFinite, "non-finite loss");
  Backward(model, c, dlogits, {}, out.grads);
  return out;
}

std::vector<ExampleGrad> PerExampleGrads(const Model& model,
                                         std::span<const TokenSeq> batch,
                                         LossKind kind, Exec exec,
                                         bool training, uint64_t dropout_seed) {
  Require(!batch.empty(), ErrorCode::kInvalidArgument, "empty batch");
  const bool response_only = kind == LossKind::kNllResponseOnly;
  return IndexedMap<ExampleGrad>(
      batch.size(),
      [&](std::size_t i) {
        ForwardOptions opts;
        opts.training = training;
        opts.dropout_seed = DeriveSeed(dropout_seed, i);
        return NllLossGrad(model, batch[i], response_only, opts);
      },
      exec);
}

}  // namespace dprlhf
