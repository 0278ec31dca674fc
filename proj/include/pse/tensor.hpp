#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pse/error.hpp"

namespace pse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i)
    r += (i ? "," : "") + std::to_string(s[i]);
  return r + ")";
}

/// Splits a shape at `axis` into (outer, extent, inner) products so that the
/// flat index of element [o, a, i] is (o * extent + a) * inner + i.
struct AxisParts {
  std::size_t outer, extent, inner;
};

inline AxisParts axis_parts(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw shape_error("axis out of range for " + shape_str(s));
  AxisParts p{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) p.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) p.inner *= s[d];
  return p;
}

template <class T>
class Graph;

/// Lightweight handle to a value node inside a Graph.
template <class T>
struct Tensor {
  Graph<T>* g = nullptr;
  int id = -1;

  const Shape& shape() const;
  std::size_t numel() const;
  std::span<const T> val() const;
  /// Gradient w.r.t. this node after backward(); zeros if the node never
  /// received gradient.
  std::vector<T> grad() const;
  bool requires_grad() const;
};

/// Eagerly evaluated reverse-mode tape. Node creation order is the
/// topological order; backward() replays it once in reverse. A graph is
/// built, differentiated, read out, and discarded — single-threaded.
template <class T>
class Graph {
 public:
  // Adjoint callback: (graph, own node id) -> accumulates into input grads.
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // sized only when requires_grad
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<int> inputs;
    BackFn back;
  };

  std::vector<Node> nodes;

  Tensor<T> leaf(Shape shape, std::vector<T> data, bool requires_grad) {
    if (data.size() != shape_numel(shape))
      throw shape_error("leaf: data size does not match shape " + shape_str(shape));
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(data);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad.assign(n.val.size(), T(0));
    nodes.push_back(std::move(n));
    return {this, static_cast<int>(nodes.size()) - 1};
  }

  Tensor<T> constant(Shape shape, std::vector<T> data) {
    return leaf(std::move(shape), std::move(data), false);
  }

  Tensor<T> zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> d(shape_numel(shape), T(0));
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  /// Creates an op node. `fwd` fills the zero-initialized output buffer;
  /// `back` accumulates input gradients from this node's gradient. `back`
  /// is dropped when no input requires grad.
  template <class Fwd>
  Tensor<T> make(const char* op, Shape shape, std::vector<int> inputs, Fwd&& fwd,
                 BackFn back) {
    Node n;
    n.shape = std::move(shape);
    n.val.assign(shape_numel(n.shape), T(0));
    n.op = op;
    for (int i : inputs)
      if (nodes[static_cast<std::size_t>(i)].requires_grad) n.requires_grad = true;
    n.inputs = std::move(inputs);
    if (n.requires_grad) {
      n.grad.assign(n.val.size(), T(0));
      n.back = std::move(back);
    }
    fwd(n.val.data());
    nodes.push_back(std::move(n));
    return {this, static_cast<int>(nodes.size()) - 1};
  }

  Node& at(int id) { return nodes[static_cast<std::size_t>(id)]; }
  const Node& at(int id) const { return nodes[static_cast<std::size_t>(id)]; }

  std::span<const T> val(int id) const {
    const Node& n = at(id);
    return {n.val.data(), n.val.size()};
  }

  /// Gradient accumulation buffer; empty when the node does not require grad
  /// (callers must then skip accumulation into it).
  std::span<T> gradbuf(int id) {
    Node& n = at(id);
    return {n.grad.data(), n.grad.size()};
  }

  std::span<const T> gradview(int id) const {
    const Node& n = at(id);
    return {n.grad.data(), n.grad.size()};
  }

  /// Reverse pass from a scalar loss. Each node's adjoint runs at most once,
  /// in reverse creation order; fan-out accumulates additively.
  void backward(Tensor<T> loss) {
    if (loss.g != this) throw invalid_argument_error("backward: foreign tensor");
    Node& ln = at(loss.id);
    if (shape_numel(ln.shape) != 1)
      throw invalid_argument_error("backward: loss must be scalar-shaped, got " +
                                   shape_str(ln.shape));
    if (backward_done_)
      throw invalid_argument_error("backward: graph already differentiated");
    backward_done_ = true;
    if (!ln.requires_grad) return;
    ln.grad[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = at(id);
      if (n.requires_grad && n.back) n.back(*this, id);
    }
  }

 private:
  bool backward_done_ = false;
};

template <class T>
const Shape& Tensor<T>::shape() const { return g->at(id).shape; }
template <class T>
std::size_t Tensor<T>::numel() const { return shape_numel(shape()); }
template <class T>
std::span<const T> Tensor<T>::val() const { return g->val(id); }
template <class T>
std::vector<T> Tensor<T>::grad() const {
  const auto& n = g->at(id);
  if (!n.grad.empty()) return n.grad;
  return std::vector<T>(n.val.size(), T(0));
}
template <class T>
bool Tensor<T>::requires_grad() const { return g->at(id).requires_grad; }

namespace detail {

template <class T>
void check_same_graph(Tensor<T> a, Tensor<T> b, const char* op) {
  if (a.g == nullptr || a.g != b.g)
    throw invalid_argument_error(std::string(op) + ": tensors from different graphs");
}

template <class T>
void check_same_shape(Tensor<T> a, Tensor<T> b, const char* op) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

// C[M x N] += A[M x K] * B[K x N]
template <class T>
void matmul_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K,
                std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// dA[M x K] += dC[M x N] * B^T
template <class T>
void matmul_acc_bt(const T* dC, const T* B, T* dA, std::size_t M, std::size_t K,
                   std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* dc = dC + i * N;
    T* da = dA + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T* b = B + k * N;
      T s = 0;
      for (std::size_t j = 0; j < N; ++j) s += dc[j] * b[j];
      da[k] += s;
    }
  }
}

// dB[K x N] += A^T * dC[M x N]
template <class T>
void matmul_acc_at(const T* A, const T* dC, T* dB, std::size_t M, std::size_t K,
                   std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    const T* dc = dC + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      T* db = dB + k * N;
      for (std::size_t j = 0; j < N; ++j) db[j] += av * dc[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::check_same_graph(a, b, "add");
  detail::check_same_shape(a, b, "add");
  Graph<T>& g = *a.g;
  const int ia = a.id, ib = b.id;
  return g.make(
      "add", a.shape(), {ia, ib},
      [&g, ia, ib](T* out) {
        auto va = g.val(ia); auto vb = g.val(ib);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
      },
      [ia, ib](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia); auto gb = gr.gradbuf(ib);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (!ga.empty()) ga[i] += go[i];
          if (!gb.empty()) gb[i] += go[i];
        }
      });
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  detail::check_same_graph(a, b, "sub");
  detail::check_same_shape(a, b, "sub");
  Graph<T>& g = *a.g;
  const int ia = a.id, ib = b.id;
  return g.make(
      "sub", a.shape(), {ia, ib},
      [&g, ia, ib](T* out) {
        auto va = g.val(ia); auto vb = g.val(ib);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] - vb[i];
      },
      [ia, ib](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia); auto gb = gr.gradbuf(ib);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (!ga.empty()) ga[i] += go[i];
          if (!gb.empty()) gb[i] -= go[i];
        }
      });
}

template <class T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::check_same_graph(a, b, "mul");
  detail::check_same_shape(a, b, "mul");
  Graph<T>& g = *a.g;
  const int ia = a.id, ib = b.id;
  return g.make(
      "mul", a.shape(), {ia, ib},
      [&g, ia, ib](T* out) {
        auto va = g.val(ia); auto vb = g.val(ib);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
      },
      [ia, ib](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto va = gr.val(ia); auto vb = gr.val(ib);
        auto ga = gr.gradbuf(ia); auto gb = gr.gradbuf(ib);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (!ga.empty()) ga[i] += go[i] * vb[i];
          if (!gb.empty()) gb[i] += go[i] * va[i];
        }
      });
}

template <class T>
Tensor<T> div(Tensor<T> a, Tensor<T> b) {
  detail::check_same_graph(a, b, "div");
  detail::check_same_shape(a, b, "div");
  Graph<T>& g = *a.g;
  const int ia = a.id, ib = b.id;
  for (T v : b.val())
    if (v == T(0)) throw invalid_argument_error("div: zero divisor");
  return g.make(
      "div", a.shape(), {ia, ib},
      [&g, ia, ib](T* out) {
        auto va = g.val(ia); auto vb = g.val(ib);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] / vb[i];
      },
      [ia, ib](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto vo = gr.val(self); auto vb = gr.val(ib);
        auto ga = gr.gradbuf(ia); auto gb = gr.gradbuf(ib);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (!ga.empty()) ga[i] += go[i] / vb[i];
          if (!gb.empty()) gb[i] -= go[i] * vo[i] / vb[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Scalar ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> scalar_mul(Tensor<T> a, T c) {
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "scalar_mul", a.shape(), {ia},
      [&g, ia, c](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * c;
      },
      [ia, c](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
      });
}

template <class T>
Tensor<T> scalar_add(Tensor<T> a, T c) {
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "scalar_add", a.shape(), {ia},
      [&g, ia, c](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + c;
      },
      [ia](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      });
}

template <class T>
Tensor<T> scalar_div(Tensor<T> a, T c) {
  if (c == T(0)) throw invalid_argument_error("scalar_div: zero divisor");
  return scalar_mul(a, T(1) / c);
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  detail::check_same_graph(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw shape_error("matmul: incompatible shapes " + shape_str(sa) + " x " +
                      shape_str(sb));
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  Graph<T>& g = *a.g;
  const int ia = a.id, ib = b.id;
  return g.make(
      "matmul", Shape{M, N}, {ia, ib},
      [&g, ia, ib, M, K, N](T* out) {
        detail::matmul_acc(g.val(ia).data(), g.val(ib).data(), out, M, K, N);
      },
      [ia, ib, M, K, N](Graph<T>& gr, int self) {
        const T* go = gr.gradview(self).data();
        auto ga = gr.gradbuf(ia); auto gb = gr.gradbuf(ib);
        if (!ga.empty()) detail::matmul_acc_bt(go, gr.val(ib).data(), ga.data(), M, K, N);
        if (!gb.empty()) detail::matmul_acc_at(gr.val(ia).data(), go, gb.data(), M, K, N);
      });
}

/// Batched matmul over rank-3 tensors: (B, M, K) x (B, K, N) -> (B, M, N).
template <class T>
Tensor<T> bmm(Tensor<T> a, Tensor<T> b) {
  detail::check_same_graph(a, b, "bmm");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw shape_error("bmm: incompatible shapes " + shape_str(sa) + " x " +
                      shape_str(sb));
  const std::size_t B = sa[0], M = sa[1], K = sa[2], N = sb[2];
  Graph<T>& g = *a.g;
  const int ia = a.id, ib = b.id;
  return g.make(
      "bmm", Shape{B, M, N}, {ia, ib},
      [&g, ia, ib, B, M, K, N](T* out) {
        const T* pa = g.val(ia).data();
        const T* pb = g.val(ib).data();
        for (std::size_t q = 0; q < B; ++q)
          detail::matmul_acc(pa + q * M * K, pb + q * K * N, out + q * M * N, M, K, N);
      },
      [ia, ib, B, M, K, N](Graph<T>& gr, int self) {
        const T* go = gr.gradview(self).data();
        const T* pa = gr.val(ia).data();
        const T* pb = gr.val(ib).data();
        auto ga = gr.gradbuf(ia); auto gb = gr.gradbuf(ib);
        for (std::size_t q = 0; q < B; ++q) {
          if (!ga.empty())
            detail::matmul_acc_bt(go + q * M * N, pb + q * K * N, ga.data() + q * M * K,
                                  M, K, N);
          if (!gb.empty())
            detail::matmul_acc_at(pa + q * M * K, go + q * M * N, gb.data() + q * K * N,
                                  M, K, N);
        }
      });
}

template <class T>
Tensor<T> transpose(Tensor<T> a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw shape_error("transpose: expected rank-2, got " + shape_str(s));
  const std::size_t M = s[0], N = s[1];
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "transpose", Shape{N, M}, {ia},
      [&g, ia, M, N](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) out[j * M + i] = va[i * N + j];
      },
      [ia, M, N](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) ga[i * N + j] += go[j * M + i];
      });
}

/// Swaps the last two axes of a rank-3 tensor: (B, M, N) -> (B, N, M).
template <class T>
Tensor<T> transpose_b(Tensor<T> a) {
  const Shape& s = a.shape();
  if (s.size() != 3) throw shape_error("transpose_b: expected rank-3, got " + shape_str(s));
  const std::size_t B = s[0], M = s[1], N = s[2];
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "transpose_b", Shape{B, N, M}, {ia},
      [&g, ia, B, M, N](T* out) {
        auto va = g.val(ia);
        for (std::size_t q = 0; q < B; ++q)
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
              out[(q * N + j) * M + i] = va[(q * M + i) * N + j];
      },
      [ia, B, M, N](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t q = 0; q < B; ++q)
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
              ga[(q * M + i) * N + j] += go[(q * N + j) * M + i];
      });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(Tensor<T> a, Shape target) {
  if (shape_numel(target) != a.numel())
    throw shape_error("reshape: element count mismatch " + shape_str(a.shape()) +
                      " -> " + shape_str(target));
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "reshape", std::move(target), {ia},
      [&g, ia](T* out) {
        auto va = g.val(ia);
        std::copy(va.begin(), va.end(), out);
      },
      [ia](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw invalid_argument_error("concat: no inputs");
  Graph<T>& g = *parts[0].g;
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw shape_error("concat: axis out of range");
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    detail::check_same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != s0.size())
      throw shape_error("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d])
        throw shape_error("concat: shape mismatch on non-concat axis");
    total += s[axis];
    ids.push_back(p.id);
    extents.push_back(s[axis]);
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  const AxisParts ap = axis_parts(out_shape, axis);
  return g.make(
      "concat", out_shape, ids,
      [&g, ids, extents, ap](T* out) {
        for (std::size_t o = 0; o < ap.outer; ++o) {
          std::size_t off = 0;
          for (std::size_t p = 0; p < ids.size(); ++p) {
            auto v = g.val(ids[p]);
            const std::size_t rows = extents[p];
            const T* src = v.data() + o * rows * ap.inner;
            T* dst = out + (o * ap.extent + off) * ap.inner;
            std::copy(src, src + rows * ap.inner, dst);
            off += rows;
          }
        }
      },
      [ids, extents, ap](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        for (std::size_t o = 0; o < ap.outer; ++o) {
          std::size_t off = 0;
          for (std::size_t p = 0; p < ids.size(); ++p) {
            const std::size_t rows = extents[p];
            auto gp = gr.gradbuf(ids[p]);
            if (!gp.empty()) {
              const T* src = go.data() + (o * ap.extent + off) * ap.inner;
              T* dst = gp.data() + o * rows * ap.inner;
              for (std::size_t i = 0; i < rows * ap.inner; ++i) dst[i] += src[i];
            }
            off += rows;
          }
        }
      });
}

/// Selects slices along `axis` by index; indices may repeat. Gradient
/// scatter-adds back through the selection.
template <class T>
Tensor<T> gather(Tensor<T> a, std::size_t axis, std::vector<std::uint32_t> indices) {
  const Shape& s = a.shape();
  const AxisParts ap = axis_parts(s, axis);
  for (std::uint32_t ix : indices)
    if (ix >= ap.extent)
      throw index_error("gather: index " + std::to_string(ix) + " out of range " +
                        std::to_string(ap.extent));
  Shape out_shape = s;
  out_shape[axis] = indices.size();
  Graph<T>& g = *a.g;
  const int ia = a.id;
  auto idx = std::make_shared<std::vector<std::uint32_t>>(std::move(indices));
  return g.make(
      "gather", std::move(out_shape), {ia},
      [&g, ia, ap, idx](T* out) {
        auto va = g.val(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t j = 0; j < idx->size(); ++j) {
            const T* src = va.data() + (o * ap.extent + (*idx)[j]) * ap.inner;
            T* dst = out + (o * idx->size() + j) * ap.inner;
            std::copy(src, src + ap.inner, dst);
          }
      },
      [ia, ap, idx](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t j = 0; j < idx->size(); ++j) {
            const T* src = go.data() + (o * idx->size() + j) * ap.inner;
            T* dst = ga.data() + (o * ap.extent + (*idx)[j]) * ap.inner;
            for (std::size_t i = 0; i < ap.inner; ++i) dst[i] += src[i];
          }
      });
}

/// Repeats a (1, C) row `times` times into (times, C).
template <class T>
Tensor<T> tile_rows(Tensor<T> a, std::size_t times) {
  const Shape& s = a.shape();
  if (s.size() != 2 || s[0] != 1)
    throw shape_error("tile_rows: expected shape (1, C), got " + shape_str(s));
  const std::size_t C = s[1];
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "tile_rows", Shape{times, C}, {ia},
      [&g, ia, times, C](T* out) {
        auto va = g.val(ia);
        for (std::size_t r = 0; r < times; ++r)
          std::copy(va.begin(), va.end(), out + r * C);
      },
      [ia, times, C](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t r = 0; r < times; ++r)
          for (std::size_t c = 0; c < C; ++c) ga[c] += go[r * C + c];
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {
inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (d != axis) out.push_back(s[d]);
  if (out.empty()) out.push_back(1);
  return out;
}
}  // namespace detail

template <class T>
Tensor<T> reduce_sum(Tensor<T> a, std::size_t axis) {
  const AxisParts ap = axis_parts(a.shape(), axis);
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "reduce_sum", detail::drop_axis(a.shape(), axis), {ia},
      [&g, ia, ap](T* out) {
        auto va = g.val(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t k = 0; k < ap.extent; ++k) {
            const T* src = va.data() + (o * ap.extent + k) * ap.inner;
            T* dst = out + o * ap.inner;
            for (std::size_t i = 0; i < ap.inner; ++i) dst[i] += src[i];
          }
      },
      [ia, ap](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t k = 0; k < ap.extent; ++k) {
            const T* src = go.data() + o * ap.inner;
            T* dst = ga.data() + (o * ap.extent + k) * ap.inner;
            for (std::size_t i = 0; i < ap.inner; ++i) dst[i] += src[i];
          }
      });
}

template <class T>
Tensor<T> reduce_mean(Tensor<T> a, std::size_t axis) {
  const std::size_t n = axis_parts(a.shape(), axis).extent;
  if (n == 0) throw shape_error("reduce_mean: empty axis");
  return scalar_mul(reduce_sum(a, axis), T(1) / T(n));
}

/// Sums all elements into shape {1}.
template <class T>
Tensor<T> reduce_sum_all(Tensor<T> a) {
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "reduce_sum_all", Shape{1}, {ia},
      [&g, ia](T* out) {
        auto va = g.val(ia);
        T s = 0;
        for (T v : va) s += v;
        out[0] = s;
      },
      [ia](Graph<T>& gr, int self) {
        const T go = gr.gradview(self)[0];
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
      });
}

template <class T>
Tensor<T> reduce_mean_all(Tensor<T> a) {
  const std::size_t n = a.numel();
  if (n == 0) throw shape_error("reduce_mean_all: empty tensor");
  return scalar_mul(reduce_sum_all(a), T(1) / T(n));
}

/// Max along `axis`; ties route gradient to the lowest index.
template <class T>
Tensor<T> reduce_max(Tensor<T> a, std::size_t axis) {
  const AxisParts ap = axis_parts(a.shape(), axis);
  if (ap.extent == 0) throw shape_error("reduce_max: empty axis");
  Graph<T>& g = *a.g;
  const int ia = a.id;
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(ap.outer * ap.inner);
  return g.make(
      "reduce_max", detail::drop_axis(a.shape(), axis), {ia},
      [&g, ia, ap, argmax](T* out) {
        auto va = g.val(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t i = 0; i < ap.inner; ++i) {
            T best = va[(o * ap.extent) * ap.inner + i];
            std::uint32_t ba = 0;
            for (std::size_t k = 1; k < ap.extent; ++k) {
              const T v = va[(o * ap.extent + k) * ap.inner + i];
              if (v > best) { best = v; ba = static_cast<std::uint32_t>(k); }
            }
            out[o * ap.inner + i] = best;
            (*argmax)[o * ap.inner + i] = ba;
          }
      },
      [ia, ap, argmax](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t i = 0; i < ap.inner; ++i) {
            const std::uint32_t k = (*argmax)[o * ap.inner + i];
            ga[(o * ap.extent + k) * ap.inner + i] += go[o * ap.inner + i];
          }
      });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(Tensor<T> a) {
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "relu", a.shape(), {ia},
      [&g, ia](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] > T(0) ? va[i] : T(0);
      },
      [ia](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto va = gr.val(ia);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i)
          if (va[i] > T(0)) ga[i] += go[i];
      });
}

template <class T>
Tensor<T> tanh_op(Tensor<T> a) {
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "tanh", a.shape(), {ia},
      [&g, ia](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = std::tanh(va[i]);
      },
      [ia](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto vo = gr.val(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i)
          ga[i] += go[i] * (T(1) - vo[i] * vo[i]);
      });
}

template <class T>
Tensor<T> square(Tensor<T> a) {
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "square", a.shape(), {ia},
      [&g, ia](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * va[i];
      },
      [ia](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto va = gr.val(ia);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * T(2) * va[i];
      });
}

template <class T>
Tensor<T> sqrt_op(Tensor<T> a) {
  for (T v : a.val())
    if (v < T(0)) throw invalid_argument_error("sqrt: negative input");
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "sqrt", a.shape(), {ia},
      [&g, ia](T* out) {
        auto va = g.val(ia);
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = std::sqrt(va[i]);
      },
      [ia](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto vo = gr.val(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t i = 0; i < go.size(); ++i)
          ga[i] += go[i] / (T(2) * vo[i]);
      });
}

/// Numerically stable softmax along `axis` (max-subtracted).
template <class T>
Tensor<T> softmax(Tensor<T> a, std::size_t axis) {
  const AxisParts ap = axis_parts(a.shape(), axis);
  if (ap.extent == 0) throw shape_error("softmax: empty axis");
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "softmax", a.shape(), {ia},
      [&g, ia, ap](T* out) {
        auto va = g.val(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t i = 0; i < ap.inner; ++i) {
            T mx = va[(o * ap.extent) * ap.inner + i];
            for (std::size_t k = 1; k < ap.extent; ++k)
              mx = std::max(mx, va[(o * ap.extent + k) * ap.inner + i]);
            T denom = 0;
            for (std::size_t k = 0; k < ap.extent; ++k) {
              const T e = std::exp(va[(o * ap.extent + k) * ap.inner + i] - mx);
              out[(o * ap.extent + k) * ap.inner + i] = e;
              denom += e;
            }
            for (std::size_t k = 0; k < ap.extent; ++k)
              out[(o * ap.extent + k) * ap.inner + i] /= denom;
          }
      },
      [ia, ap](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto vo = gr.val(self);
        auto ga = gr.gradbuf(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t i = 0; i < ap.inner; ++i) {
            T dot = 0;
            for (std::size_t k = 0; k < ap.extent; ++k) {
              const std::size_t ix = (o * ap.extent + k) * ap.inner + i;
              dot += go[ix] * vo[ix];
            }
            for (std::size_t k = 0; k < ap.extent; ++k) {
              const std::size_t ix = (o * ap.extent + k) * ap.inner + i;
              ga[ix] += vo[ix] * (go[ix] - dot);
            }
          }
      });
}

/// Euclidean norm along `axis` (axis removed from shape). Forward is the
/// exact sqrt of the sum of squares; the adjoint divides by max(norm, eps)
/// so zero-norm rows do not produce non-finite gradients.
template <class T>
Tensor<T> l2norm(Tensor<T> a, std::size_t axis, T eps = T(1e-12)) {
  const AxisParts ap = axis_parts(a.shape(), axis);
  if (ap.extent == 0) throw shape_error("l2norm: empty axis");
  Graph<T>& g = *a.g;
  const int ia = a.id;
  return g.make(
      "l2norm", detail::drop_axis(a.shape(), axis), {ia},
      [&g, ia, ap](T* out) {
        auto va = g.val(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t i = 0; i < ap.inner; ++i) {
            T s = 0;
            for (std::size_t k = 0; k < ap.extent; ++k) {
              const T v = va[(o * ap.extent + k) * ap.inner + i];
              s += v * v;
            }
            out[o * ap.inner + i] = std::sqrt(s);
          }
      },
      [ia, ap, eps](Graph<T>& gr, int self) {
        auto go = gr.gradview(self);
        auto vo = gr.val(self);
        auto va = gr.val(ia);
        auto ga = gr.gradbuf(ia);
        for (std::size_t o = 0; o < ap.outer; ++o)
          for (std::size_t i = 0; i < ap.inner; ++i) {
            const std::size_t oi = o * ap.inner + i;
            const T denom = std::max(vo[oi], eps);
            const T scale = go[oi] / denom;
            for (std::size_t k = 0; k < ap.extent; ++k) {
              const std::size_t ix = (o * ap.extent + k) * ap.inner + i;
              ga[ix] += scale * va[ix];
            }
          }
      });
}

}  // namespace pse
