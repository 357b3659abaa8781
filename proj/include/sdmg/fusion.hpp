#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sdmg/ops.hpp"
#include "sdmg/params.hpp"

namespace sdmg {

enum class FusionKind { kBlockTerm, kLinearSum, kConcatMlp };

inline const char* fusion_name(FusionKind k) {
  switch (k) {
    case FusionKind::kBlockTerm: return "block_term";
    case FusionKind::kLinearSum: return "linear_sum";
    default: return "concat_mlp";
  }
}

inline FusionKind parse_fusion(const std::string& s) {
  if (s == "block_term") return FusionKind::kBlockTerm;
  if (s == "linear_sum") return FusionKind::kLinearSum;
  if (s == "concat_mlp") return FusionKind::kConcatMlp;
  throw ValidationError("unknown fusion kind '" + s + "' (block_term, linear_sum, concat_mlp)");
}

/// Block-diagonal decomposition of the trilinear fusion tensor. Projections
/// are stored as linear-layer weights: p_t [R·a × D_t] maps t to t′, and so on.
template <class T>
struct BlockTermParams {
  Tensor<T> p_t, p_v, p_n;  // [R·a × D_t], [R·b × D_v], [D_n × R·c]
  Tensor<T> b_t, b_v, b_n;  // optional biases
  Tensor<T> core;           // [R × a × b × c]
};

template <class T>
BlockTermParams<T> make_block_term(ParamStore<T>& store, const std::string& prefix, std::size_t d_t, std::size_t d_v,
                                   std::size_t d_n, std::size_t a, std::size_t b, std::size_t c, std::size_t blocks,
                                   bool use_bias = false) {
  BlockTermParams<T> p;
  p.p_t = store.add(prefix + ".p_t", {blocks * a, d_t}, d_t);
  p.p_v = store.add(prefix + ".p_v", {blocks * b, d_v}, d_v);
  p.core = store.add(prefix + ".core", {blocks, a, b, c}, a * b);
  p.p_n = store.add(prefix + ".p_n", {d_n, blocks * c}, blocks * c);
  if (use_bias) {
    p.b_t = store.add(prefix + ".b_t", {blocks * a}, d_t);
    p.b_v = store.add(prefix + ".b_v", {blocks * b}, d_v);
    p.b_n = store.add(prefix + ".b_n", {d_n}, blocks * c);
  }
  return p;
}

/// Row batch fusion: t [n×D_t], v [n×D_v] → [n×D_n]. Never forms the full tensor.
template <class T>
Tensor<T> fuse_block_term(const Tensor<T>& t, const Tensor<T>& v, const BlockTermParams<T>& p) {
  auto tp = linear(t, p.p_t, p.b_t);
  auto vp = linear(v, p.p_v, p.b_v);
  return linear(block_bilinear(tp, vp, p.core), p.p_n, p.b_n);
}

/// n = P·(t ⊗ v) with the Kronecker entry t_j·v_k at column j·D_v + k.
template <class T>
Tensor<T> fuse_kronecker_explicit(const Tensor<T>& t, const Tensor<T>& v, const Tensor<T>& P) {
  detail::check(t.rank() == 2 && v.rank() == 2 && P.rank() == 2 && P.extent(1) == t.extent(1) * v.extent(1),
                "fuse_kronecker_explicit: map " + shape_str(P.shape()) + " incompatible with " + detail::shapes(t, v));
  return linear(kron_rows(t, v), P);
}

/// Full map P [D_n × D_t·D_v] of the bias-free block-term fusion: the core
/// blocks are placed on the diagonal of an (R·a)×(R·b)×(R·c) tensor, which
/// is then multiplied along each mode by the three projections.
template <class T>
Tensor<T> assemble_kronecker_map(const BlockTermParams<T>& p) {
  const std::size_t R = p.core.extent(0), a = p.core.extent(1), b = p.core.extent(2), c = p.core.extent(3);
  const std::size_t A = R * a, B = R * b, C = R * c;
  const std::size_t d_t = p.p_t.extent(1), d_v = p.p_v.extent(1), d_n = p.p_n.extent(0);
  std::vector<T> full(A * B * C, T(0));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k)
          full[((r * a + i) * B + (r * b + j)) * C + (r * c + k)] = p.core.data()[((r * a + i) * b + j) * c + k];
  // Mode 1: contract the first index with P_t.
  std::vector<T> m1(d_t * B * C, T(0));
  for (std::size_t x = 0; x < d_t; ++x)
    for (std::size_t i = 0; i < A; ++i) {
      const T w = p.p_t.data()[i * d_t + x];
      for (std::size_t q = 0; q < B * C; ++q) m1[x * B * C + q] += w * full[i * B * C + q];
    }
  // Mode 2: contract the second index with P_v.
  std::vector<T> m2(d_t * d_v * C, T(0));
  for (std::size_t x = 0; x < d_t; ++x)
    for (std::size_t y = 0; y < d_v; ++y)
      for (std::size_t j = 0; j < B; ++j) {
        const T w = p.p_v.data()[j * d_v + y];
        for (std::size_t k = 0; k < C; ++k) m2[(x * d_v + y) * C + k] += w * m1[(x * B + j) * C + k];
      }
  // Mode 3: contract the third index with P_n, written out as P[z, x·D_v + y].
  std::vector<T> out(d_n * d_t * d_v, T(0));
  for (std::size_t z = 0; z < d_n; ++z)
    for (std::size_t xy = 0; xy < d_t * d_v; ++xy) {
      T s = 0;
      for (std::size_t k = 0; k < C; ++k) s += p.p_n.data()[z * C + k] * m2[xy * C + k];
      out[z * d_t * d_v + xy] = s;
    }
  return Tensor<T>({d_n, d_t * d_v}, std::move(out));
}

inline std::size_t block_term_param_count(std::size_t d_t, std::size_t d_v, std::size_t d_n, std::size_t a, std::size_t b,
                                          std::size_t c, std::size_t blocks) {
  return blocks * a * b * c + d_t * a * blocks + d_v * b * blocks + d_n * c * blocks;
}

inline std::size_t full_tensor_param_count(std::size_t d_t, std::size_t d_v, std::size_t d_n) { return d_t * d_v * d_n; }

/// Three-layer perceptron with ReLU between layers.
template <class T>
struct MlpParams {
  std::vector<Tensor<T>> w, b;
};

template <class T>
MlpParams<T> make_mlp(ParamStore<T>& store, const std::string& prefix, const std::vector<std::size_t>& dims, bool use_bias) {
  MlpParams<T> p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::string n = prefix + "." + std::to_string(l);
    p.w.push_back(store.add(n + ".w", {dims[l + 1], dims[l]}, dims[l]));
    p.b.push_back(use_bias ? store.add(n + ".b", {dims[l + 1]}, dims[l]) : Tensor<T>());
  }
  return p;
}

template <class T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p) {
  Tensor<T> h = x;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    h = linear(h, p.w[l], p.b[l]);
    if (l + 1 < p.w.size()) h = relu(h);
  }
  return h;
}

template <class T>
struct LinearSumParams {
  MlpParams<T> text, visual;
};

template <class T>
LinearSumParams<T> make_linear_sum(ParamStore<T>& store, const std::string& prefix, std::size_t d_t, std::size_t d_v,
                                   std::size_t hidden, std::size_t d_n, bool use_bias = true) {
  return {make_mlp(store, prefix + ".text", {d_t, hidden, hidden, d_n}, use_bias),
          make_mlp(store, prefix + ".visual", {d_v, hidden, hidden, d_n}, use_bias)};
}

template <class T>
Tensor<T> fuse_linear_sum(const Tensor<T>& t, const Tensor<T>& v, const LinearSumParams<T>& p) {
  return add(mlp_forward(t, p.text), mlp_forward(v, p.visual));
}

template <class T>
MlpParams<T> make_concat_mlp(ParamStore<T>& store, const std::string& prefix, std::size_t d_t, std::size_t d_v,
                             std::size_t hidden, std::size_t d_n, bool use_bias = true) {
  return make_mlp(store, prefix, {d_t + d_v, hidden, hidden, d_n}, use_bias);
}

template <class T>
Tensor<T> fuse_concat_mlp(const Tensor<T>& t, const Tensor<T>& v, const MlpParams<T>& p) {
  return mlp_forward(concat_cols<T>({t, v}), p);
}

}  // namespace sdmg
