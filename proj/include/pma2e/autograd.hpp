#pragma once

// Minimal reverse-mode differentiation over dense row-major arrays.
//
// A Tensor is a shared handle to a graph node. Ops record their parents and
// a backward rule only when some input requires a gradient, so constant
// subgraphs cost nothing extra. backward() walks the graph in reverse
// topological order and accumulates into every reachable node's grad.
//
// The scalar type is a template parameter: double for gradient
// verification, float for training.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "error.hpp"

namespace pma2e {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& grad_buffer() {
      if (grad.empty()) grad.assign(data.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      fail(ErrorKind::Shape, "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto count = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(count, T(0)), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or an empty span when nothing was accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T> grad_or_zero() const {
    return node_->grad.empty() ? std::vector<T>(node_->data.size(), T(0)) : node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    require(numel() == 1, ErrorKind::Shape, "item() on a tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  bool same_as(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

/// Creates an op result. The backward rule is kept only if a parent needs
/// gradients.
template <typename T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                  std::function<void(typename Tensor<T>::Node&)> backward) {
  auto out = Tensor<T>::from(std::move(shape), std::move(data));
  auto& n = out.node();
  n.op = name;
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Tensor<T>& p) { return p.requires_grad(); });
  if (needs) {
    n.requires_grad = true;
    for (auto& p : parents) n.parents.push_back(p.node_ptr());
    n.backward = std::move(backward);
  }
  return out;
}

// Row-wise kernels: every output row is computed by the same instruction
// sequence whatever its position, so per-row maps are exactly
// permutation-equivariant.

/// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t M, std::size_t K,
             std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    T* __restrict ci = c + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[i * K + k];
      const T* __restrict bk = b + k * N;
      for (std::size_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
    }
  }
}

/// c[M,K] += a[M,N] * b[K,N]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t M, std::size_t N, std::size_t K) {
  std::vector<T> bt(N * K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = b[k * N + j];
  gemm_nn(a, bt.data(), c, M, N, K);
}

/// c[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t M, std::size_t K,
             std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* __restrict bi = b + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[i * K + k];
      T* __restrict ck = c + k * N;
      for (std::size_t j = 0; j < N; ++j) ck[j] += aik * bi[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace detail

/// Runs reverse accumulation from a scalar loss.
template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.numel() == 1, ErrorKind::Shape, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  using Node = typename Tensor<T>::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node().grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra and structure

/// [..., K] x [K, N] -> [..., N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const std::size_t K = b.dim(0), N = b.dim(1), M = a.numel() / K;
  Shape out_shape = a.shape();
  out_shape.back() = N;
  std::vector<T> out(M * N, T(0));
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), M, K, N);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_op<T>("matmul", std::move(out_shape), std::move(out), {a, b}, [an, bn, M, K, N](auto& self) {
    if (an->requires_grad) detail::gemm_nt(self.grad.data(), bn->data.data(), an->grad_buffer().data(), M, N, K);
    if (bn->requires_grad) detail::gemm_tn(an->data.data(), self.grad.data(), bn->grad_buffer().data(), M, K, N);
  });
}

/// Elementwise sum. `b` may match `a` or a trailing suffix of its shape, in
/// which case it is broadcast over the leading dimensions.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) shape_error("add", sa, sb);
  const std::size_t nb = b.numel(), reps = a.numel() / std::max<std::size_t>(nb, 1);
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] += bv[j];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_op<T>("add", sa, std::move(out), {a, b}, [an, bn, reps, nb](auto& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) g[j] += self.grad[r * nb + j];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= s;
  auto an = a.node_ptr();
  return detail::make_op<T>("scale", a.shape(), std::move(out), {a}, [an, s](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

/// Elementwise product of equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b}, [an, bn](auto& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  auto an = a.node_ptr();
  return detail::make_op<T>("reshape", std::move(shape), a.values(), {a}, [an](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// 2-D transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) shape_error("transpose", a.shape(), {});
  const std::size_t R = a.dim(0), C = a.dim(1);
  std::vector<T> out(R * C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = a.values()[r * C + c];
  auto an = a.node_ptr();
  return detail::make_op<T>("transpose", {C, R}, std::move(out), {a}, [an, R, C](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[c * R + r];
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::Shape, "concat: no inputs");
  Shape shape = parts[0].shape();
  require(axis < shape.size(), ErrorKind::Shape, "concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) shape_error("concat", shape, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i]) shape_error("concat", shape, s);
    total += s[axis];
  }
  shape[axis] = total;
  const auto split = detail::split_axis(shape, axis);
  std::vector<T> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    const auto& v = p.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * len * split.inner), len * split.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * split.inner));
    off += len;
  }
  std::vector<std::shared_ptr<typename Tensor<T>::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return detail::make_op<T>("concat", shape, std::move(out), parts, [nodes, offsets, split, total, axis](auto& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto& n = *nodes[i];
      if (!n.requires_grad) continue;
      const std::size_t len = n.shape[axis];
      auto& g = n.grad_buffer();
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t j = 0; j < len * split.inner; ++j)
          g[o * len * split.inner + j] += self.grad[(o * total + offsets[i]) * split.inner + j];
    }
  });
}

/// Columns [begin, begin+len) of the last axis.
template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t begin, std::size_t len) {
  require(a.rank() >= 1 && begin + len <= a.shape().back(), ErrorKind::Shape,
          "slice_last: range exceeds " + shape_str(a.shape()));
  const std::size_t C = a.shape().back(), R = a.numel() / C;
  Shape shape = a.shape();
  shape.back() = len;
  std::vector<T> out(R * len);
  for (std::size_t r = 0; r < R; ++r)
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(r * C + begin), len,
                out.begin() + static_cast<std::ptrdiff_t>(r * len));
  auto an = a.node_ptr();
  return detail::make_op<T>("slice_last", std::move(shape), std::move(out), {a}, [an, R, C, begin, len](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < len; ++j) g[r * C + begin + j] += self.grad[r * len + j];
  });
}

/// Rows of the leading axis at `idx` (indices may repeat).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> idx) {
  require(a.rank() >= 1, ErrorKind::Shape, "gather_rows: scalar input");
  const std::size_t rows = a.dim(0), width = a.numel() / std::max<std::size_t>(rows, 1);
  Shape shape = a.shape();
  shape[0] = idx.size();
  std::vector<T> out(idx.size() * width);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < rows, ErrorKind::Shape, "gather_rows: index out of range");
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(idx[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  auto an = a.node_ptr();
  return detail::make_op<T>("gather_rows", std::move(shape), std::move(out), {a},
                            [an, idx = std::move(idx), width](auto& self) {
                              auto& g = an->grad_buffer();
                              for (std::size_t r = 0; r < idx.size(); ++r)
                                for (std::size_t j = 0; j < width; ++j) g[idx[r] * width + j] += self.grad[r * width + j];
                            });
}

/// Places row r of `a` at row idx[r] of a zero tensor with `rows` rows.
/// Indices must be distinct.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, std::vector<std::size_t> idx, std::size_t rows) {
  require(a.rank() >= 1 && a.dim(0) == idx.size(), ErrorKind::Shape, "scatter_rows: index count must match rows");
  const std::size_t width = idx.empty() ? 0 : a.numel() / idx.size();
  Shape shape = a.shape();
  shape[0] = rows;
  std::vector<T> out(shape_numel(shape), T(0));
  std::vector<char> used(rows, 0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < rows && !used[idx[r]], ErrorKind::Shape, "scatter_rows: indices must be distinct and in range");
    used[idx[r]] = 1;
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(r * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(idx[r] * width));
  }
  auto an = a.node_ptr();
  return detail::make_op<T>("scatter_rows", std::move(shape), std::move(out), {a},
                            [an, idx = std::move(idx), width](auto& self) {
                              auto& g = an->grad_buffer();
                              for (std::size_t r = 0; r < idx.size(); ++r)
                                for (std::size_t j = 0; j < width; ++j) g[r * width + j] += self.grad[idx[r] * width + j];
                            });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto an = a.node_ptr();
  return detail::make_op<T>("relu", a.shape(), std::move(out), {a}, [an](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (an->data[i] > T(0)) g[i] += self.grad[i];
  });
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  auto an = a.node_ptr();
  return detail::make_op<T>("gelu", a.shape(), std::move(out), {a}, [an](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = an->data[i];
      const double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += static_cast<T>(d) * self.grad[i];
    }
  });
}

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  require(a.rank() >= 1, ErrorKind::Shape, "softmax: scalar input");
  const std::size_t C = a.shape().back(), R = a.numel() / C;
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < R; ++r) {
    const T* x = a.values().data() + r * C;
    T* y = out.data() + r * C;
    const T mx = *std::max_element(x, x + C);
    T s = T(0);
    for (std::size_t j = 0; j < C; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < C; ++j) y[j] /= s;
  }
  auto an = a.node_ptr();
  auto keep = std::make_shared<std::vector<T>>(out);
  return detail::make_op<T>("softmax", a.shape(), std::move(out), {a}, [an, keep, R, C](auto& self) {
    auto& g = an->grad_buffer();
    const auto& y = *keep;
    for (std::size_t r = 0; r < R; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < C; ++j) dot += self.grad[r * C + j] * y[r * C + j];
      for (std::size_t j = 0; j < C; ++j) g[r * C + j] += y[r * C + j] * (self.grad[r * C + j] - dot);
    }
  });
}

/// Layer normalization over the last axis with affine gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t D = x.shape().back(), R = x.numel() / D;
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) shape_error("layer_norm", x.shape(), gamma.shape());
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = x.values().data() + r * D;
    T mu = T(0);
    for (std::size_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<T>(D);
    T var = T(0);
    for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(D);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < D; ++j) {
      const T h = (xr[j] - mu) * rs;
      (*xhat)[r * D + j] = h;
      out[r * D + j] = h * gamma.values()[j] + beta.values()[j];
    }
  }
  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  return detail::make_op<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                            [xn, gn, bn, xhat, rstd, R, D](auto& self) {
                              const auto& h = *xhat;
                              if (gn->requires_grad || bn->requires_grad) {
                                auto& gg = gn->grad_buffer();
                                auto& gb = bn->grad_buffer();
                                for (std::size_t r = 0; r < R; ++r)
                                  for (std::size_t j = 0; j < D; ++j) {
                                    gg[j] += self.grad[r * D + j] * h[r * D + j];
                                    gb[j] += self.grad[r * D + j];
                                  }
                              }
                              if (!xn->requires_grad) return;
                              auto& gx = xn->grad_buffer();
                              for (std::size_t r = 0; r < R; ++r) {
                                T s1 = T(0), s2 = T(0);
                                for (std::size_t j = 0; j < D; ++j) {
                                  const T dh = self.grad[r * D + j] * gn->data[j];
                                  s1 += dh;
                                  s2 += dh * h[r * D + j];
                                }
                                const T inv = T(1) / static_cast<T>(D);
                                for (std::size_t j = 0; j < D; ++j) {
                                  const T dh = self.grad[r * D + j] * gn->data[j];
                                  gx[r * D + j] += (*rstd)[r] * (dh - inv * s1 - h[r * D + j] * inv * s2);
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Reductions

/// Max over `axis`; backward routes to the first argmax.
template <typename T>
Tensor<T> max_pool(const Tensor<T>& a, std::size_t axis) {
  require(axis < a.rank(), ErrorKind::Shape, "max_pool: axis out of range for " + shape_str(a.shape()));
  const auto sp = detail::split_axis(a.shape(), axis);
  require(sp.len >= 1, ErrorKind::Shape, "max_pool: empty axis");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  const auto& v = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const std::size_t at = (o * sp.len + l) * sp.inner + i;
        if (v[at] > v[best]) best = at;
      }
      out[o * sp.inner + i] = v[best];
      arg[o * sp.inner + i] = best;
    }
  auto an = a.node_ptr();
  return detail::make_op<T>("max_pool", std::move(shape), std::move(out), {a}, [an, arg = std::move(arg)](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[j];
  });
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& a, std::size_t axis) {
  require(axis < a.rank(), ErrorKind::Shape, "mean_pool: axis out of range for " + shape_str(a.shape()));
  const auto sp = detail::split_axis(a.shape(), axis);
  require(sp.len >= 1, ErrorKind::Shape, "mean_pool: empty axis");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(sp.outer * sp.inner, T(0));
  const auto& v = a.values();
  const T inv = T(1) / static_cast<T>(sp.len);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.len + l) * sp.inner + i];
  for (auto& x : out) x *= inv;
  auto an = a.node_ptr();
  return detail::make_op<T>("mean_pool", std::move(shape), std::move(out), {a}, [an, sp, inv](auto& self) {
    auto& g = an->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] += inv * self.grad[o * sp.inner + i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (auto v : a.values()) s += v;
  auto an = a.node_ptr();
  return detail::make_op<T>("sum", {}, {s}, {a}, [an](auto& self) {
    auto& g = an->grad_buffer();
    for (auto& x : g) x += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Verification

/// Largest elementwise relative error between the analytic gradient of a
/// scalar function and its central finite difference with step `eps`, over
/// every entry of every input. The denominator is max(|analytic|, |numeric|,
/// 1e-8). `max_entries` > 0 restricts the check to that many evenly spaced
/// entries per input.
inline double finite_difference_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                      double eps = 1e-4, std::size_t max_entries = 0) {
  for (auto& x : inputs) x.zero_grad();
  const Tensor<double> loss = f();
  require(loss.numel() == 1, ErrorKind::Shape, "finite_difference_check: function must be scalar-valued");
  backward(loss);
  double worst = 0.0;
  for (auto& x : inputs) {
    const auto analytic = x.grad_or_zero();
    auto& v = x.values();
    const std::size_t n = v.size();
    const std::size_t stride = (max_entries == 0 || max_entries >= n) ? 1 : n / max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = v[i];
      v[i] = saved + eps;
      const double fp = f().item();
      v[i] = saved - eps;
      const double fm = f().item();
      v[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

/// Single-input convenience form: checks d f(x) / dx.
inline double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                                      double eps = 1e-4) {
  x.node().requires_grad = true;
  return finite_difference_check([&] { return f(x); }, {x}, eps);
}

}  // namespace pma2e
