#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdmg/errors.hpp"
#include "sdmg/linalg.hpp"
#include "sdmg/tensor.hpp"

namespace sdmg {

namespace detail {

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <class T>
std::string shapes(const Tensor<T>& a, const Tensor<T>& b) {
  return shape_str(a.shape()) + " vs " + shape_str(b.shape());
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
  check(a.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

// True when `b` broadcasts over the last axis of `a`; throws when neither
// equal shapes nor a last-axis broadcast applies.
template <class T>
bool broadcast_last(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  if (b.rank() == 1 && b.extent(0) == a.shape().back()) return true;
  throw DimensionError(std::string(op) + ": shape mismatch " + shapes(a, b));
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd f, Deriv df) {
  auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {&a}, [pa = a.node(), df](Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(pa->value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bc = detail::broadcast_last(a, b, "add");
  const std::size_t m = b.numel();
  auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[bc ? i % m : i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b},
                                [pa = a.node(), pb = b.node(), bc, m](detail::Node<T>& self) {
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[bc ? i % m : i] += self.grad[i];
                                  }
                                });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bc = detail::broadcast_last(a, b, "sub");
  const std::size_t m = b.numel();
  auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[bc ? i % m : i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b},
                                [pa = a.node(), pb = b.node(), bc, m](detail::Node<T>& self) {
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[bc ? i % m : i] -= self.grad[i];
                                  }
                                });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bc = detail::broadcast_last(a, b, "mul");
  const std::size_t m = b.numel();
  auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[bc ? i % m : i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b},
                                [pa = a.node(), pb = b.node(), bc, m](detail::Node<T>& self) {
                                  const std::size_t n = self.grad.size();
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->value[bc ? i % m : i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < n; ++i) g[bc ? i % m : i] += self.grad[i] * pa->value[i];
                                  }
                                });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                          [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary<T>("tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kTanh, kExp };

template <class T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b = {}) {
  const bool binary = kind == Elementwise::kAdd || kind == Elementwise::kSub || kind == Elementwise::kMul;
  if (binary && !b.defined()) throw ValidationError("binary elementwise op needs two operands");
  switch (kind) {
    case Elementwise::kAdd: return add(a, b);
    case Elementwise::kSub: return sub(a, b);
    case Elementwise::kMul: return mul(a, b);
    case Elementwise::kRelu: return relu(a);
    case Elementwise::kSigmoid: return sigmoid(a);
    case Elementwise::kTanh: return tanh(a);
    case Elementwise::kExp: return exp(a);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Reductions and shape plumbing

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  return detail::make_result<T>("sum", {1}, {s}, {&a}, [pa = a.node()](detail::Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

template <class T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "dot: shape mismatch " + detail::shapes(a, b));
  return sum(mul(a, b));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::check(numel_of(shape) == a.numel(), "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return detail::make_result<T>("reshape", std::move(shape), a.to_vector(), {&a}, [pa = a.node()](detail::Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Concatenation along axis 0; trailing extents must agree.
template <class T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
  detail::check(!parts.empty(), "concat0: no operands");
  Shape shape = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::check(p.rank() == shape.size() && std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1),
                  "concat0: trailing extents differ " + detail::shapes(parts[0], p));
    rows += p.extent(0);
  }
  shape[0] = rows;
  std::vector<T> out;
  out.reserve(numel_of(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto node = std::make_shared<detail::Node<T>>();
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  node->shape = std::move(shape);
  node->value = std::move(out);
  node->is_leaf = false;
  node->op = "concat0";
  if (track) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [](detail::Node<T>& self) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        const std::size_t n = p->value.size();
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
        }
        off += n;
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

/// Column-wise concatenation of matrices with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::check(!parts.empty(), "concat_cols: no operands");
  const std::size_t rows = parts[0].extent(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::check(p.rank() == 2 && p.extent(0) == rows, "concat_cols: row mismatch " + detail::shapes(parts[0], p));
    cols += p.extent(1);
  }
  std::vector<T> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.extent(1);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.data().begin() + r * c, c, out.begin() + r * cols + off);
    off += c;
  }
  auto node = std::make_shared<detail::Node<T>>();
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  node->shape = {rows, cols};
  node->value = std::move(out);
  node->is_leaf = false;
  node->op = "concat_cols";
  if (track) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [rows, cols](detail::Node<T>& self) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        const std::size_t c = p->shape[1];
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[r * cols + off + j];
        }
        off += c;
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 2, "slice_cols");
  const std::size_t rows = a.extent(0), cols = a.extent(1);
  detail::check(begin < end && end <= cols, "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                                ") outside " + shape_str(a.shape()));
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.data().begin() + r * cols + begin, w, out.begin() + r * w);
  return detail::make_result<T>("slice_cols", {rows, w}, std::move(out), {&a},
                                [pa = a.node(), rows, cols, begin, w](detail::Node<T>& self) {
                                  auto& g = pa->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += self.grad[r * w + j];
                                });
}

/// Row i of the result is row i of `a` where `take_a[i]`, else row i of `b`.
template <class T>
Tensor<T> select_rows(const std::vector<std::uint8_t>& take_a, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape() && a.rank() == 2 && take_a.size() == a.extent(0),
                "select_rows: shape mismatch " + detail::shapes(a, b));
  const std::size_t cols = a.extent(1);
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < take_a.size(); ++r) {
    const auto& src = take_a[r] ? a.data() : b.data();
    std::copy_n(src.begin() + r * cols, cols, out.begin() + r * cols);
  }
  return detail::make_result<T>("select_rows", a.shape(), std::move(out), {&a, &b},
                                [pa = a.node(), pb = b.node(), take_a, cols](detail::Node<T>& self) {
                                  for (std::size_t r = 0; r < take_a.size(); ++r) {
                                    auto& p = take_a[r] ? pa : pb;
                                    if (!p->requires_grad) continue;
                                    auto& g = p->ensure_grad();
                                    for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += self.grad[r * cols + j];
                                  }
                                });
}

/// Columns of `w` [D×V] picked by index: result [n×D], row i = w[:, idx[i]].
/// Equivalent to multiplying `w` by one-hot vectors.
template <class T>
Tensor<T> gather_cols(const Tensor<T>& w, const std::vector<std::size_t>& idx) {
  detail::require_rank(w, 2, "gather_cols");
  const std::size_t d = w.extent(0), v = w.extent(1);
  detail::check(!idx.empty(), "gather_cols: empty index list");
  std::vector<T> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::check(idx[i] < v, "gather_cols: index " + std::to_string(idx[i]) + " outside " + shape_str(w.shape()));
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = w.data()[k * v + idx[i]];
  }
  return detail::make_result<T>("gather_cols", {idx.size(), d}, std::move(out), {&w},
                                [pw = w.node(), idx, d, v](detail::Node<T>& self) {
                                  auto& g = pw->ensure_grad();
                                  for (std::size_t i = 0; i < idx.size(); ++i)
                                    for (std::size_t k = 0; k < d; ++k) g[k * v + idx[i]] += self.grad[i * d + k];
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.rank() == 2 && b.rank() == 2 && a.extent(1) == b.extent(0),
                "matmul: inner extents differ " + detail::shapes(a, b));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<T> out(m * n, T(0));
  linalg::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {&a, &b},
                                [pa = a.node(), pb = b.node(), m, k, n](detail::Node<T>& self) {
                                  if (pa->requires_grad)  // dA = dC·Bᵀ
                                    linalg::gemm_nt(m, k, n, self.grad.data(), pb->value.data(), pa->ensure_grad().data());
                                  if (pb->requires_grad)  // dB = Aᵀ·dC
                                    linalg::gemm_tn(k, n, m, pa->value.data(), self.grad.data(), pb->ensure_grad().data());
                                });
}

/// y = x·Wᵀ + b with W stored [out×in]. Accepts a single vector or a row batch.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::require_rank(w, 2, "linear");
  const std::size_t out_dim = w.extent(0), in_dim = w.extent(1);
  detail::check((x.rank() == 1 || x.rank() == 2) && x.shape().back() == in_dim,
                "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  if (bias.defined())
    detail::check(bias.rank() == 1 && bias.extent(0) == out_dim,
                  "linear: bias " + shape_str(bias.shape()) + " incompatible with weight " + shape_str(w.shape()));
  const std::size_t rows = x.rank() == 1 ? 1 : x.extent(0);
  std::vector<T> out(rows * out_dim, T(0));
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_dim);
  linalg::gemm_nt(rows, out_dim, in_dim, x.data().data(), w.data().data(), out.data());
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  auto backward = [px = x.node(), pw = w.node(), pb = bias.defined() ? bias.node() : nullptr, rows, in_dim,
                   out_dim](detail::Node<T>& self) {
    if (px->requires_grad) linalg::gemm_nn(rows, in_dim, out_dim, self.grad.data(), pw->value.data(), px->ensure_grad().data());
    if (pw->requires_grad) linalg::gemm_tn(out_dim, in_dim, rows, self.grad.data(), px->value.data(), pw->ensure_grad().data());
    if (pb && pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[r * out_dim + j];
    }
  };
  if (bias.defined()) return detail::make_result<T>("linear", std::move(shape), std::move(out), {&x, &w, &bias}, backward);
  return detail::make_result<T>("linear", std::move(shape), std::move(out), {&x, &w}, backward);
}

// ---------------------------------------------------------------------------
// Normalizations

namespace detail {

// Softmax over one row restricted to unmasked entries; masked entries are 0.
// Returns false when every entry is masked.
template <class T>
bool masked_softmax_row(const T* x, const std::uint8_t* mask, T* y, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && mask[j]) continue;
    mx = std::max(mx, x[j]);
    any = true;
  }
  if (!any) {
    std::fill_n(y, n, T(0));
    return false;
  }
  T z = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = (mask && mask[j]) ? T(0) : std::exp(x[j] - mx);
    z += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  return true;
}

template <class T>
void softmax_row_backward(const T* y, const T* gy, T* gx, std::size_t n) {
  T s = 0;
  for (std::size_t j = 0; j < n; ++j) s += gy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - s);
}

}  // namespace detail

/// Softmax of a vector. `mask[j] != 0` excludes entry j (output exactly 0).
template <class T>
Tensor<T> softmax(const Tensor<T>& v, const std::vector<std::uint8_t>& mask = {}) {
  detail::require_rank(v, 1, "softmax");
  const std::size_t n = v.numel();
  detail::check(mask.empty() || mask.size() == n, "softmax: mask length " + std::to_string(mask.size()) + " vs " +
                                                       shape_str(v.shape()));
  std::vector<T> out(n);
  if (!detail::masked_softmax_row(v.data().data(), mask.empty() ? nullptr : mask.data(), out.data(), n)) {
    throw DegenerateInputError("softmax: every entry is masked");
  }
  return detail::make_result<T>("softmax", v.shape(), std::move(out), {&v}, [pv = v.node(), n](detail::Node<T>& self) {
    detail::softmax_row_backward(self.value.data(), self.grad.data(), pv->ensure_grad().data(), n);
  });
}

/// Row-wise masked softmax of a matrix. Fully masked rows raise unless
/// `allow_empty_rows`, in which case they come out as zeros.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& s, const std::vector<std::uint8_t>& mask = {}, bool allow_empty_rows = false) {
  detail::require_rank(s, 2, "softmax_rows");
  const std::size_t rows = s.extent(0), cols = s.extent(1);
  detail::check(mask.empty() || mask.size() == rows * cols, "softmax_rows: mask size mismatch");
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const bool ok = detail::masked_softmax_row(s.data().data() + r * cols, mask.empty() ? nullptr : mask.data() + r * cols,
                                               out.data() + r * cols, cols);
    if (!ok && !allow_empty_rows) throw DegenerateInputError("softmax_rows: row " + std::to_string(r) + " fully masked");
  }
  return detail::make_result<T>("softmax_rows", s.shape(), std::move(out), {&s},
                                [ps = s.node(), rows, cols](detail::Node<T>& self) {
                                  auto& g = ps->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                    detail::softmax_row_backward(self.value.data() + r * cols, self.grad.data() + r * cols,
                                                                 g.data() + r * cols, cols);
                                });
}

inline constexpr double kL2Epsilon = 1e-12;

/// Unit-norm rescaling along the last axis. Rows with norm below 1e-12 pass
/// through unchanged.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& v) {
  detail::check(v.rank() == 1 || v.rank() == 2, "l2_normalize: expected vector or matrix, got " + shape_str(v.shape()));
  const std::size_t d = v.shape().back(), rows = v.numel() / d;
  std::vector<T> out(v.numel());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = v.data().data() + r * d;
    T nrm = std::sqrt(linalg::dot(x, x, d));
    norms[r] = nrm;
    const T inv = nrm < T(kL2Epsilon) ? T(1) : T(1) / nrm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[j] * inv;
  }
  return detail::make_result<T>("l2_normalize", v.shape(), std::move(out), {&v},
                                [pv = v.node(), norms, d](detail::Node<T>& self) {
                                  auto& g = pv->ensure_grad();
                                  for (std::size_t r = 0; r < norms.size(); ++r) {
                                    const T* y = self.value.data() + r * d;
                                    const T* gy = self.grad.data() + r * d;
                                    if (norms[r] < T(kL2Epsilon)) {
                                      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[j];
                                      continue;
                                    }
                                    const T yg = linalg::dot(y, gy, d);
                                    for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (gy[j] - y[j] * yg) / norms[r];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over rows of -log softmax(logits_i)[labels_i].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (labels.size() != n)
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ValidationError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
  }
  std::vector<T> probs(n * k);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data().data() + i * k;
    const T mx = *std::max_element(z, z + k);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    const T lse = mx + std::log(s);
    loss += lse - z[labels[i]];
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(z[j] - lse);
  }
  loss /= static_cast<T>(n);
  return detail::make_result<T>("cross_entropy", {1}, {loss}, {&logits},
                                [pl = logits.node(), probs = std::move(probs), labels, n, k](detail::Node<T>& self) {
                                  auto& g = pl->ensure_grad();
                                  const T s = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t j = 0; j < k; ++j) g[i * k + j] += s * probs[i * k + j];
                                    g[i * k + labels[i]] -= s;
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Spatial ops on C×H×W maps

/// 2-D cross-correlation. `bias` may be undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride, std::size_t pad) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  detail::check(w.extent(1) == C, "conv2d: channel mismatch " + detail::shapes(x, w));
  detail::check(stride > 0, "conv2d: stride must be positive");
  detail::check(kh <= H + 2 * pad && kw <= W + 2 * pad,
                "conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
  if (bias.defined()) detail::check(bias.rank() == 1 && bias.extent(0) == K, "conv2d: bias shape " + shape_str(bias.shape()));
  const std::size_t OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1, P = OH * OW;
  const std::size_t CK = C * kh * kw;

  std::vector<T> col(CK * P, T(0));
  const T* xv = x.data().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col.data() + ((c * kh + ki) * kw + kj) * P;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          const T* src = xv + (c * H + iy) * W;
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(W)) row[oy * OW + ox] = src[ix];
          }
        }
      }

  std::vector<T> out(K * P, T(0));
  if (bias.defined())
    for (std::size_t k = 0; k < K; ++k) std::fill_n(out.begin() + k * P, P, bias.data()[k]);
  linalg::gemm_nn(K, P, CK, w.data().data(), col.data(), out.data());

  auto backward = [px = x.node(), pw = w.node(), pb = bias.defined() ? bias.node() : nullptr, col = std::move(col), C, H, W,
                   K, kh, kw, OH, OW, P, CK, stride, pad](detail::Node<T>& self) {
    const T* gy = self.grad.data();
    if (pw->requires_grad) linalg::gemm_nt(K, CK, P, gy, col.data(), pw->ensure_grad().data());
    if (pb && pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < P; ++p) g[k] += gy[k * P + p];
    }
    if (px->requires_grad) {
      std::vector<T> dcol(CK * P, T(0));
      linalg::gemm_tn(CK, P, K, pw->value.data(), gy, dcol.data());
      auto& gx = px->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ki = 0; ki < kh; ++ki)
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const T* row = dcol.data() + ((c * kh + ki) * kw + kj) * P;
            for (std::size_t oy = 0; oy < OH; ++oy) {
              const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              T* dst = gx.data() + (c * H + iy) * W;
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                if (ix >= 0 && ix < static_cast<long>(W)) dst[ix] += row[oy * OW + ox];
              }
            }
          }
    }
  };
  if (bias.defined()) return detail::make_result<T>("conv2d", {K, OH, OW}, std::move(out), {&x, &w, &bias}, std::move(backward));
  return detail::make_result<T>("conv2d", {K, OH, OW}, std::move(out), {&x, &w}, std::move(backward));
}

/// 2×2 max pooling with stride 2. Ties resolve to the first element in
/// row-major window order.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  detail::require_rank(x, 3, "maxpool2d");
  const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
  detail::check(H % 2 == 0 && W % 2 == 0, "maxpool2d: odd spatial extents " + shape_str(x.shape()));
  const std::size_t OH = H / 2, OW = W / 2;
  std::vector<T> out(C * OH * OW);
  std::vector<std::size_t> arg(out.size());
  const T* xv = x.data().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = (c * H + 2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (c * OH + oy) * OW + ox;
        out[o] = xv[best];
        arg[o] = best;
      }
  return detail::make_result<T>("maxpool2d", {C, OH, OW}, std::move(out), {&x},
                                [px = x.node(), arg = std::move(arg)](detail::Node<T>& self) {
                                  auto& g = px->ensure_grad();
                                  for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
                                });
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  detail::require_rank(x, 3, "upsample_nearest2x");
  const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t OH = 2 * H, OW = 2 * W;
  std::vector<T> out(C * OH * OW);
  const T* xv = x.data().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) out[(c * OH + oy) * OW + ox] = xv[(c * H + oy / 2) * W + ox / 2];
  return detail::make_result<T>("upsample_nearest2x", {C, OH, OW}, std::move(out), {&x},
                                [px = x.node(), C, H, W, OH, OW](detail::Node<T>& self) {
                                  auto& g = px->ensure_grad();
                                  for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t oy = 0; oy < OH; ++oy)
                                      for (std::size_t ox = 0; ox < OW; ++ox)
                                        g[(c * H + oy / 2) * W + ox / 2] += self.grad[(c * OH + oy) * OW + ox];
                                });
}

/// Integer pixel rectangle [x0,x1)×[y0,y1).
struct PixelRect {
  long x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const PixelRect&) const = default;
};

enum class RoiMode { kMax, kAverage };

/// Half-open range of bin `g` out of `grid` over a span of `len` cells,
/// widened to one cell when it would be empty.
inline std::pair<long, long> roi_bin(long start, long len, std::size_t g, std::size_t grid) {
  long b = start + static_cast<long>(std::floor(static_cast<double>(g) * len / grid));
  long e = start + static_cast<long>(std::ceil(static_cast<double>(g + 1) * len / grid));
  e = std::min(e, start + len);
  if (e <= b) {
    b = std::min(b, start + len - 1);
    e = b + 1;
  }
  return {b, e};
}

/// RoI pooling of a C×H×W map over each rectangle into a G×G grid.
/// Result [n × C·G·G] with per-row layout (channel, bin row, bin column).
template <class T>
Tensor<T> roi_pool(const Tensor<T>& fmap, const std::vector<PixelRect>& rects, std::size_t grid,
                   RoiMode mode = RoiMode::kMax) {
  detail::require_rank(fmap, 3, "roi_pool");
  detail::check(grid > 0 && !rects.empty(), "roi_pool: empty grid or region list");
  const std::size_t C = fmap.extent(0), H = fmap.extent(1), W = fmap.extent(2);
  for (const auto& r : rects) {
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > static_cast<long>(W) || r.y1 > static_cast<long>(H) || r.x1 <= r.x0 ||
        r.y1 <= r.y0)
      throw ValidationError("roi_pool: region [" + std::to_string(r.x0) + "," + std::to_string(r.y0) + "," +
                            std::to_string(r.x1) + "," + std::to_string(r.y1) + ") outside feature map " +
                            shape_str(fmap.shape()));
  }
  const std::size_t per = C * grid * grid;
  std::vector<T> out(rects.size() * per);
  std::vector<std::size_t> arg(mode == RoiMode::kMax ? out.size() : 0);
  const T* fv = fmap.data().data();
  for (std::size_t n = 0; n < rects.size(); ++n) {
    const auto& r = rects[n];
    for (std::size_t gy = 0; gy < grid; ++gy) {
      auto [yb, ye] = roi_bin(r.y0, r.y1 - r.y0, gy, grid);
      for (std::size_t gx = 0; gx < grid; ++gx) {
        auto [xb, xe] = roi_bin(r.x0, r.x1 - r.x0, gx, grid);
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t o = n * per + (c * grid + gy) * grid + gx;
          if (mode == RoiMode::kMax) {
            std::size_t best = (c * H + yb) * W + xb;
            for (long y = yb; y < ye; ++y)
              for (long x = xb; x < xe; ++x) {
                const std::size_t idx = (c * H + y) * W + x;
                if (fv[idx] > fv[best]) best = idx;
              }
            out[o] = fv[best];
            arg[o] = best;
          } else {
            T s = 0;
            for (long y = yb; y < ye; ++y)
              for (long x = xb; x < xe; ++x) s += fv[(c * H + y) * W + x];
            out[o] = s / static_cast<T>((ye - yb) * (xe - xb));
          }
        }
      }
    }
  }
  return detail::make_result<T>(
      "roi_pool", {rects.size(), per}, std::move(out), {&fmap},
      [pf = fmap.node(), rects, grid, mode, arg = std::move(arg), C, H, W, per](detail::Node<T>& self) {
        auto& g = pf->ensure_grad();
        if (mode == RoiMode::kMax) {
          for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
          return;
        }
        for (std::size_t n = 0; n < rects.size(); ++n) {
          const auto& r = rects[n];
          for (std::size_t gy = 0; gy < grid; ++gy) {
            auto [yb, ye] = roi_bin(r.y0, r.y1 - r.y0, gy, grid);
            for (std::size_t gx = 0; gx < grid; ++gx) {
              auto [xb, xe] = roi_bin(r.x0, r.x1 - r.x0, gx, grid);
              const T inv = T(1) / static_cast<T>((ye - yb) * (xe - xb));
              for (std::size_t c = 0; c < C; ++c) {
                const T gv = self.grad[n * per + (c * grid + gy) * grid + gx] * inv;
                for (long y = yb; y < ye; ++y)
                  for (long x = xb; x < xe; ++x) g[(c * H + y) * W + x] += gv;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pairwise and multilinear ops used by fusion and graph reasoning

/// out[i·m + j] = a[i] + c[j] for a [n×H], c [m×H]; result [n·m × H].
template <class T>
Tensor<T> pair_sum(const Tensor<T>& a, const Tensor<T>& c) {
  detail::check(a.rank() == 2 && c.rank() == 2 && a.extent(1) == c.extent(1), "pair_sum: width mismatch " + detail::shapes(a, c));
  const std::size_t n = a.extent(0), m = c.extent(0), h = a.extent(1);
  std::vector<T> out(n * m * h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < h; ++k) out[(i * m + j) * h + k] = a.data()[i * h + k] + c.data()[j * h + k];
  return detail::make_result<T>("pair_sum", {n * m, h}, std::move(out), {&a, &c},
                                [pa = a.node(), pc = c.node(), n, m, h](detail::Node<T>& self) {
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t j = 0; j < m; ++j)
                                        for (std::size_t k = 0; k < h; ++k) g[i * h + k] += self.grad[(i * m + j) * h + k];
                                  }
                                  if (pc->requires_grad) {
                                    auto& g = pc->ensure_grad();
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t j = 0; j < m; ++j)
                                        for (std::size_t k = 0; k < h; ++k) g[j * h + k] += self.grad[(i * m + j) * h + k];
                                  }
                                });
}

/// out[i] = Σ_j w[i,j] · x[i·m + j] for w [n×m], x [n·m × D]; result [n×D].
template <class T>
Tensor<T> pair_weighted_sum(const Tensor<T>& w, const Tensor<T>& x) {
  detail::check(w.rank() == 2 && x.rank() == 2 && x.extent(0) == w.numel(),
                "pair_weighted_sum: shape mismatch " + detail::shapes(w, x));
  const std::size_t n = w.extent(0), m = w.extent(1), d = x.extent(1);
  std::vector<T> out(n * d, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      linalg::axpy(w.data()[i * m + j], x.data().data() + (i * m + j) * d, out.data() + i * d, d);
  return detail::make_result<T>("pair_weighted_sum", {n, d}, std::move(out), {&w, &x},
                                [pw = w.node(), px = x.node(), n, m, d](detail::Node<T>& self) {
                                  for (std::size_t i = 0; i < n; ++i) {
                                    const T* gy = self.grad.data() + i * d;
                                    for (std::size_t j = 0; j < m; ++j) {
                                      const std::size_t p = i * m + j;
                                      if (pw->requires_grad) pw->ensure_grad()[p] += linalg::dot(gy, px->value.data() + p * d, d);
                                      if (px->requires_grad) linalg::axpy(pw->value[p], gy, px->ensure_grad().data() + p * d, d);
                                    }
                                  }
                                });
}

/// Row-wise Kronecker product: out[i, j·b + k] = t[i,j] · v[i,k].
template <class T>
Tensor<T> kron_rows(const Tensor<T>& t, const Tensor<T>& v) {
  detail::check(t.rank() == 2 && v.rank() == 2 && t.extent(0) == v.extent(0), "kron_rows: row mismatch " + detail::shapes(t, v));
  const std::size_t n = t.extent(0), a = t.extent(1), b = v.extent(1);
  std::vector<T> out(n * a * b);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < a; ++j)
      for (std::size_t k = 0; k < b; ++k) out[(i * a + j) * b + k] = t.data()[i * a + j] * v.data()[i * b + k];
  return detail::make_result<T>("kron_rows", {n, a * b}, std::move(out), {&t, &v},
                                [pt = t.node(), pv = v.node(), n, a, b](detail::Node<T>& self) {
                                  for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < a; ++j)
                                      for (std::size_t k = 0; k < b; ++k) {
                                        const T g = self.grad[(i * a + j) * b + k];
                                        if (pt->requires_grad) pt->ensure_grad()[i * a + j] += g * pv->value[i * b + k];
                                        if (pv->requires_grad) pv->ensure_grad()[i * b + k] += g * pt->value[i * a + j];
                                      }
                                });
}

/// Per-block trilinear contraction. With tp [n × R·a], vp [n × R·b] and
/// core [R×a×b×c]: out[i, r·c + k] = Σ_{p,q} tp[i, r·a+p] · vp[i, r·b+q] · core[r,p,q,k].
template <class T>
Tensor<T> block_bilinear(const Tensor<T>& tp, const Tensor<T>& vp, const Tensor<T>& core) {
  detail::require_rank(core, 4, "block_bilinear");
  const std::size_t R = core.extent(0), a = core.extent(1), b = core.extent(2), c = core.extent(3);
  detail::check(tp.rank() == 2 && vp.rank() == 2 && tp.extent(0) == vp.extent(0) && tp.extent(1) == R * a &&
                    vp.extent(1) == R * b,
                "block_bilinear: operands " + detail::shapes(tp, vp) + " incompatible with core " + shape_str(core.shape()));
  const std::size_t n = tp.extent(0);
  std::vector<T> out(n * R * c, T(0));
  std::vector<T> outer(a * b);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < R; ++r) {
      const T* t = tp.data().data() + i * R * a + r * a;
      const T* v = vp.data().data() + i * R * b + r * b;
      for (std::size_t p = 0; p < a; ++p)
        for (std::size_t q = 0; q < b; ++q) outer[p * b + q] = t[p] * v[q];
      linalg::gemm_nn(1, c, a * b, outer.data(), core.data().data() + r * a * b * c, out.data() + i * R * c + r * c);
    }
  return detail::make_result<T>(
      "block_bilinear", {n, R * c}, std::move(out), {&tp, &vp, &core},
      [pt = tp.node(), pv = vp.node(), pc = core.node(), n, R, a, b, c](detail::Node<T>& self) {
        std::vector<T> outer(a * b), douter(a * b);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t r = 0; r < R; ++r) {
            const T* t = pt->value.data() + i * R * a + r * a;
            const T* v = pv->value.data() + i * R * b + r * b;
            const T* gy = self.grad.data() + i * R * c + r * c;
            const T* blk = pc->value.data() + r * a * b * c;
            for (std::size_t p = 0; p < a; ++p)
              for (std::size_t q = 0; q < b; ++q) outer[p * b + q] = t[p] * v[q];
            if (pc->requires_grad) linalg::gemm_tn(a * b, c, 1, outer.data(), gy, pc->ensure_grad().data() + r * a * b * c);
            std::fill(douter.begin(), douter.end(), T(0));
            linalg::gemm_nt(1, a * b, c, gy, blk, douter.data());
            if (pt->requires_grad) {
              T* g = pt->ensure_grad().data() + i * R * a + r * a;
              for (std::size_t p = 0; p < a; ++p) g[p] += linalg::dot(douter.data() + p * b, v, b);
            }
            if (pv->requires_grad) {
              T* g = pv->ensure_grad().data() + i * R * b + r * b;
              for (std::size_t p = 0; p < a; ++p) linalg::axpy(t[p], douter.data() + p * b, g, b);
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Recurrent cell

template <class T>
struct LstmParams {
  Tensor<T> w_ih;  // [4H × D_in], gate blocks ordered input, forget, cell, output
  Tensor<T> w_hh;  // [4H × H]
  Tensor<T> bias;  // [4H] or undefined

  std::size_t hidden() const { return w_hh.extent(1); }
};

/// One LSTM step on a row batch. Returns (h', c').
template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c, const LstmParams<T>& p) {
  const std::size_t H = p.hidden();
  detail::check(p.w_ih.rank() == 2 && p.w_ih.extent(0) == 4 * H && p.w_hh.extent(0) == 4 * H,
                "lstm_cell: inconsistent parameters " + detail::shapes(p.w_ih, p.w_hh));
  detail::check(h.rank() == 2 && h.shape() == c.shape() && h.extent(1) == H && x.rank() == 2 && x.extent(0) == h.extent(0),
                "lstm_cell: state " + shape_str(h.shape()) + " / input " + shape_str(x.shape()) + " incompatible with hidden " +
                    std::to_string(H));
  auto z = add(linear(x, p.w_ih, p.bias), linear(h, p.w_hh));
  auto i = sigmoid(slice_cols(z, 0, H));
  auto f = sigmoid(slice_cols(z, H, 2 * H));
  auto g = tanh(slice_cols(z, 2 * H, 3 * H));
  auto o = sigmoid(slice_cols(z, 3 * H, 4 * H));
  auto c_next = add(mul(f, c), mul(i, g));
  auto h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

}  // namespace sdmg
