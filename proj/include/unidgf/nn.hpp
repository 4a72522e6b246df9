#pragma once

#include <cmath>
#include <string>

#include "unidgf/tensor.hpp"

namespace unidgf {

// Small transformer building blocks shared by the Q-Former, the generator and
// the detector head. All weights are created through the ParamStore so they
// land in checkpoints in construction order.

struct LinearParams {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

inline LinearParams make_linear(ParamStore& store, const std::string& name, int in,
                                int out, Rng& rng, bool requires_grad = true,
                                Scalar w_stddev = 0.02f) {
  LinearParams p;
  p.w = store.get_or_create(name + ".w", {in, out}, rng, w_stddev, requires_grad);
  p.b = store.get_or_create(name + ".b", {out}, rng, 0.0f, requires_grad);
  return p;
}

inline Tensor linear(const Tensor& x, const LinearParams& p) {
  return add(matmul(x, p.w), p.b);
}

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

inline LayerNormParams make_layer_norm(ParamStore& store, const std::string& name,
                                       int dim, Rng& rng, bool requires_grad = true) {
  LayerNormParams p;
  p.gain = store.get_or_create(name + ".g", {dim}, rng, 0.0f, requires_grad, 1.0f);
  p.bias = store.get_or_create(name + ".b", {dim}, rng, 0.0f, requires_grad);
  return p;
}

inline Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gain, p.bias);
}

struct AttentionParams {
  LinearParams q, k, v, o;
  int heads = 1;
};

inline AttentionParams make_attention(ParamStore& store, const std::string& name,
                                      int dim, int heads, Rng& rng,
                                      bool requires_grad = true) {
  AttentionParams p;
  p.q = make_linear(store, name + ".q", dim, dim, rng, requires_grad);
  p.k = make_linear(store, name + ".k", dim, dim, rng, requires_grad);
  p.v = make_linear(store, name + ".v", dim, dim, rng, requires_grad);
  p.o = make_linear(store, name + ".o", dim, dim, rng, requires_grad);
  p.heads = heads;
  return p;
}

// [B,Tk,D] -> per-head key/value tensors [B,H,Tk,dh]
struct ProjectedKv {
  Tensor k;
  Tensor v;
};

inline ProjectedKv project_kv(const Tensor& x_kv, const AttentionParams& p) {
  int b = x_kv.dim(0), tk = x_kv.dim(1), d = x_kv.dim(2);
  int h = p.heads, dh = d / h;
  ProjectedKv out;
  out.k = transpose(reshape(linear(x_kv, p.k), {b, tk, h, dh}), 1, 2);
  out.v = transpose(reshape(linear(x_kv, p.v), {b, tk, h, dh}), 1, 2);
  return out;
}

// Attention over pre-projected keys/values (kv batch must match x_q batch).
inline Tensor attention_with_kv(const Tensor& x_q, const ProjectedKv& kv,
                                const AttentionParams& p, const Tensor& mask = {}) {
  int b = x_q.dim(0), tq = x_q.dim(1), d = x_q.dim(2);
  int h = p.heads, dh = d / h;
  Tensor q = transpose(reshape(linear(x_q, p.q), {b, tq, h, dh}), 1, 2);
  Tensor scores = scale(matmul(q, transpose(kv.k, 2, 3)),
                        1.0f / std::sqrt(static_cast<Scalar>(dh)));
  if (mask.defined()) scores = add(scores, mask);
  Tensor ctx = matmul(softmax_lastdim(scores), kv.v);
  Tensor merged = reshape(transpose(ctx, 1, 2), {b, tq, d});
  return linear(merged, p.o);
}

// Multi-head attention of x_q over x_kv. mask, when defined, is [Tq, Tk] with
// 0 on allowed and a large negative value on blocked pairs, broadcast over
// batch and heads.
inline Tensor attention(const Tensor& x_q, const Tensor& x_kv,
                        const AttentionParams& p, const Tensor& mask = {}) {
  return attention_with_kv(x_q, project_kv(x_kv, p), p, mask);
}

inline ProjectedKv gather_kv(const ProjectedKv& kv, const std::vector<int>& idx) {
  return ProjectedKv{index_select0(kv.k, idx), index_select0(kv.v, idx)};
}

struct FfnParams {
  LinearParams in;
  LinearParams out;
};

inline FfnParams make_ffn(ParamStore& store, const std::string& name, int dim,
                          int hidden, Rng& rng, bool requires_grad = true) {
  FfnParams p;
  p.in = make_linear(store, name + ".in", dim, hidden, rng, requires_grad);
  p.out = make_linear(store, name + ".out", hidden, dim, rng, requires_grad);
  return p;
}

inline Tensor ffn(const Tensor& x, const FfnParams& p) {
  return linear(gelu(linear(x, p.in)), p.out);
}

// [T, T] additive mask: position i may attend to j <= i.
inline Tensor causal_mask(int t) {
  std::vector<Scalar> m(static_cast<size_t>(t) * t, 0.0f);
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) m[static_cast<size_t>(i) * t + j] = -1e9f;
  }
  return Tensor::from_data({t, t}, std::move(m));
}

// Prefix-LM mask over [P+T, P+T]: the first P positions see each other, token
// positions additionally see earlier tokens.
inline Tensor prefix_causal_mask(int prefix, int t) {
  int n = prefix + t;
  std::vector<Scalar> m(static_cast<size_t>(n) * n, 0.0f);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      bool ok = j < prefix || (i >= prefix && j <= i);
      if (!ok) m[static_cast<size_t>(i) * n + j] = -1e9f;
    }
  }
  return Tensor::from_data({n, n}, std::move(m));
}

}  // namespace unidgf
