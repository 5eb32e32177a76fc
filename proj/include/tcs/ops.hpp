#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>

#include "tcs/tensor.hpp"

namespace tcs {

namespace detail {

// dst (=|+=) a * b for Eigen operands. Eigen's blocked GEMM packs its
// operands, so its summation order depends only on the shapes; its
// matrix-vector and small-size paths vectorize from the first aligned
// address, which would make results depend on where malloc put the buffers.
// Those shapes run as a fixed-order loop instead.
template <class Dst, class A, class B>
void matmul(Dst&& dst, const A& a, const B& b, bool accumulate) {
  const Index m = a.rows(), k = a.cols(), p = b.cols();
  if (m > 1 && p > 1 && m + k + p >= 24) {
    if (accumulate) {
      dst.noalias() += a * b;
    } else {
      dst.noalias() = a * b;
    }
    return;
  }
  if (!accumulate) dst.setZero();
  for (Index i = 0; i < m; ++i) {
    for (Index l = 0; l < k; ++l) {
      const auto ail = a(i, l);
      for (Index j = 0; j < p; ++j) dst(i, j) += ail * b(l, j);
    }
  }
}

inline int normalize_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(ndim));
  }
  return a;
}

inline std::vector<Index> contiguous_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return strides;
}

// Right-aligned broadcasting: extents must match or one of them must be 1.
struct BroadcastPlan {
  Shape out;
  std::vector<Index> stride_a;
  std::vector<Index> stride_b;
  bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t n = std::max(a.size(), b.size());
  p.out.assign(n, 1);
  p.stride_a.assign(n, 0);
  p.stride_b.assign(n, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < n; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(n - a.size());
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(n - b.size());
    const Index ea = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const Index eb = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    }
    p.out[i] = std::max(ea, eb);
    if (ea != 1) p.stride_a[i] = sa[static_cast<std::size_t>(ia)];
    if (eb != 1) p.stride_b[i] = sb[static_cast<std::size_t>(ib)];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void broadcast_for_each(const BroadcastPlan& p, F&& f) {
  const Index total = numel(p.out);
  if (total == 0) return;
  if (p.same) {
    for (Index i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t n = p.out.size();
  const Index inner = p.out[n - 1];
  const Index ia_step = p.stride_a[n - 1];
  const Index ib_step = p.stride_b[n - 1];
  std::vector<Index> counter(n, 0);
  Index ia = 0, ib = 0;
  for (Index base = 0; base < total; base += inner) {
    for (Index j = 0; j < inner; ++j) f(base + j, ia + j * ia_step, ib + j * ib_step);
    for (int d = static_cast<int>(n) - 2; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++counter[du];
      ia += p.stride_a[du];
      ib += p.stride_b[du];
      if (counter[du] < p.out[du]) break;
      ia -= p.stride_a[du] * p.out[du];
      ib -= p.stride_b[du] * p.out[du];
      counter[du] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

template <class T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  std::vector<T> out(static_cast<std::size_t>(numel(plan->out)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data();
  switch (kind) {
    case BinaryKind::add:
      broadcast_for_each(*plan, [&](Index i, Index ia, Index ib) { po[i] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::sub:
      broadcast_for_each(*plan, [&](Index i, Index ia, Index ib) { po[i] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::mul:
      broadcast_for_each(*plan, [&](Index i, Index ia, Index ib) { po[i] = pa[ia] * pb[ib]; });
      break;
    case BinaryKind::div:
      broadcast_for_each(*plan, [&](Index i, Index ia, Index ib) { po[i] = pa[ia] / pb[ib]; });
      break;
  }
  static constexpr std::array<const char*, 4> names{"add", "sub", "mul", "div"};
  return Tensor<T>::make_result(
      plan->out, std::move(out), {a, b}, names[static_cast<std::size_t>(kind)],
      [kind, plan](detail::TensorImpl<T>& o) {
        T* ga = input_grad(o, 0);
        T* gb = input_grad(o, 1);
        const T* va = input_data(o, 0);
        const T* vb = input_data(o, 1);
        const T* g = o.grad.data();
        broadcast_for_each(*plan, [&](Index i, Index ia, Index ib) {
          const T gi = g[i];
          switch (kind) {
            case BinaryKind::add:
              if (ga) ga[ia] += gi;
              if (gb) gb[ib] += gi;
              break;
            case BinaryKind::sub:
              if (ga) ga[ia] += gi;
              if (gb) gb[ib] -= gi;
              break;
            case BinaryKind::mul:
              if (ga) ga[ia] += gi * vb[ib];
              if (gb) gb[ib] += gi * va[ia];
              break;
            case BinaryKind::div:
              if (ga) ga[ia] += gi / vb[ib];
              if (gb) gb[ib] -= gi * va[ia] / (vb[ib] * vb[ib]);
              break;
          }
        });
      });
}

// Elementwise map with derivative expressed through input x and output y.
template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& a, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<T> out(a.data().size());
  const T* pa = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, name, [deriv](detail::TensorImpl<T>& o) {
    T* ga = input_grad(o, 0);
    if (!ga) return;
    const T* x = input_data(o, 0);
    const T* y = o.data.data();
    const T* g = o.grad.data();
    const std::size_t n = o.data.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::mul, a, b);
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::div, a, b);
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, "sigmoid",
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, "relu", [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary(a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return detail::unary(a, "scale", [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return detail::unary(a, "add_scalar", [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return scale(a, T(-1)); }

// 1 - a, used by the GRU blend.
template <class T>
Tensor<T> one_minus(const Tensor<T>& a) {
  return detail::unary(a, "one_minus", [](T x) { return T(1) - x; }, [](T, T) { return T(-1); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  return Tensor<T>::make_result(Shape{}, {acc}, {a}, "sum", [](detail::TensorImpl<T>& o) {
    T* ga = input_grad(o, 0);
    if (!ga) return;
    const T g = o.grad[0];
    const std::size_t n = o.node->inputs[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Sum along one axis.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis, bool keepdim = false) {
  const int ax = detail::normalize_axis(axis, a.ndim());
  const Shape& s = a.shape();
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < a.ndim(); ++i) inner *= s[static_cast<std::size_t>(i)];
  const Index len = s[static_cast<std::size_t>(ax)];
  Shape out_shape = s;
  if (keepdim) {
    out_shape[static_cast<std::size_t>(ax)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  std::vector<T> out(static_cast<std::size_t>(outer * inner), T(0));
  const T* pa = a.data().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < len; ++k) {
      const T* src = pa + (o * len + k) * inner;
      T* dst = out.data() + o * inner;
      for (Index i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {a}, "sum_axis", [outer, inner, len](detail::TensorImpl<T>& o) {
        T* ga = input_grad(o, 0);
        if (!ga) return;
        const T* g = o.grad.data();
        for (Index oo = 0; oo < outer; ++oo) {
          for (Index k = 0; k < len; ++k) {
            T* dst = ga + (oo * len + k) * inner;
            const T* src = g + oo * inner;
            for (Index i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0) {
      throw ShapeError("reshape: cannot infer extent for " + to_string(a.shape()));
    }
    shape[static_cast<std::size_t>(infer)] = a.numel() / known;
  }
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "reshape", [](detail::TensorImpl<T>& o) {
    T* ga = input_grad(o, 0);
    if (!ga) return;
    const std::size_t n = o.grad.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
  });
}

/// out.shape[i] = a.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
  const int n = a.ndim();
  if (static_cast<int>(perm.size()) != n) throw ShapeError("permute: rank mismatch for " + to_string(a.shape()));
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  Shape out_shape(static_cast<std::size_t>(n));
  const auto in_strides = detail::contiguous_strides(a.shape());
  std::vector<Index> src_strides(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= n || used[static_cast<std::size_t>(p)]) throw ShapeError("permute: invalid permutation");
    used[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = a.shape()[static_cast<std::size_t>(p)];
    src_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(p)];
  }
  // Reuse the broadcast walker: output index -> source index.
  auto plan = std::make_shared<detail::BroadcastPlan>();
  plan->out = out_shape;
  plan->stride_a = src_strides;
  plan->stride_b.assign(static_cast<std::size_t>(n), 0);
  std::vector<T> out(static_cast<std::size_t>(a.numel()));
  const T* pa = a.data().data();
  if (n == 0) {
    out = {pa[0]};
  } else {
    detail::broadcast_for_each(*plan, [&](Index i, Index ia, Index) { out[static_cast<std::size_t>(i)] = pa[ia]; });
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a}, "permute", [plan, n](detail::TensorImpl<T>& o) {
    T* ga = input_grad(o, 0);
    if (!ga) return;
    if (n == 0) {
      ga[0] += o.grad[0];
      return;
    }
    const T* g = o.grad.data();
    detail::broadcast_for_each(*plan, [&](Index i, Index ia, Index) { ga[ia] += g[i]; });
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int ax = detail::normalize_axis(axis, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != parts[0].ndim()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < p.ndim(); ++i) {
      if (i != ax && p.shape()[static_cast<std::size_t>(i)] != out_shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shapes " + to_string(parts[0].shape()) + " and " + to_string(p.shape()) +
                         " differ off the concat axis");
      }
    }
    total += p.shape()[static_cast<std::size_t>(ax)];
  }
  out_shape[static_cast<std::size_t>(ax)] = total;
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < static_cast<int>(out_shape.size()); ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  std::vector<Index> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[static_cast<std::size_t>(ax)] * inner);
  const Index row = total * inner;
  std::vector<T> out(static_cast<std::size_t>(outer * row));
  Index col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    const Index w = widths[k];
    for (Index o = 0; o < outer; ++o) std::copy(src + o * w, src + (o + 1) * w, out.data() + o * row + col);
    col += w;
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), parts, "concat",
                                [widths, outer, row](detail::TensorImpl<T>& o) {
                                  Index c = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    const Index w = widths[k];
                                    if (T* gk = input_grad(o, k)) {
                                      for (Index oo = 0; oo < outer; ++oo) {
                                        const T* src = o.grad.data() + oo * row + c;
                                        T* dst = gk + oo * w;
                                        for (Index i = 0; i < w; ++i) dst[i] += src[i];
                                      }
                                    }
                                    c += w;
                                  }
                                });
}

/// Sub-range [start, start+length) along one axis.
template <class T>
Tensor<T> slice(const Tensor<T>& a, int axis, Index start, Index length) {
  const int ax = detail::normalize_axis(axis, a.ndim());
  const Index extent = a.shape()[static_cast<std::size_t>(ax)];
  if (start < 0 || length < 0 || start + length > extent) {
    throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + length) + ") of axis " +
                     std::to_string(ax) + " in " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.shape()[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < a.ndim(); ++i) inner *= a.shape()[static_cast<std::size_t>(i)];
  const Index src_row = extent * inner, dst_row = length * inner, off = start * inner;
  std::vector<T> out(static_cast<std::size_t>(outer * dst_row));
  const T* pa = a.data().data();
  for (Index o = 0; o < outer; ++o) {
    std::copy(pa + o * src_row + off, pa + o * src_row + off + dst_row, out.data() + o * dst_row);
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a}, "slice",
                                [outer, src_row, dst_row, off](detail::TensorImpl<T>& o) {
                                  T* ga = input_grad(o, 0);
                                  if (!ga) return;
                                  for (Index oo = 0; oo < outer; ++oo) {
                                    const T* src = o.grad.data() + oo * dst_row;
                                    T* dst = ga + oo * src_row + off;
                                    for (Index i = 0; i < dst_row; ++i) dst[i] += src[i];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product of [N,M,K] and [N,K,P] (optionally transposed operands).
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false, bool transpose_b = false) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index batch = a.dim(0);
  const Index m = transpose_a ? a.dim(2) : a.dim(1);
  const Index k = transpose_a ? a.dim(1) : a.dim(2);
  const Index kb = transpose_b ? b.dim(2) : b.dim(1);
  const Index p = transpose_b ? b.dim(1) : b.dim(2);
  if (k != kb) throw ShapeError("bmm: inner extents differ for " + to_string(a.shape()) + " and " + to_string(b.shape()));
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  const Index a_rows = a.dim(1), a_cols = a.dim(2), b_rows = b.dim(1), b_cols = b.dim(2);
  std::vector<T> out(static_cast<std::size_t>(batch * m * p));
  for (Index n = 0; n < batch; ++n) {
    CMap ma(a.data().data() + n * a_rows * a_cols, a_rows, a_cols);
    CMap mb(b.data().data() + n * b_rows * b_cols, b_rows, b_cols);
    Map mo(out.data() + n * m * p, m, p);
    if (!transpose_a && !transpose_b) detail::matmul(mo, ma, mb, false);
    if (transpose_a && !transpose_b) detail::matmul(mo, ma.transpose(), mb, false);
    if (!transpose_a && transpose_b) detail::matmul(mo, ma, mb.transpose(), false);
    if (transpose_a && transpose_b) detail::matmul(mo, ma.transpose(), mb.transpose(), false);
  }
  return Tensor<T>::make_result(
      Shape{batch, m, p}, std::move(out), {a, b}, "bmm",
      [=](detail::TensorImpl<T>& o) {
        T* ga = input_grad(o, 0);
        T* gb = input_grad(o, 1);
        const T* va = input_data(o, 0);
        const T* vb = input_data(o, 1);
        for (Index n = 0; n < batch; ++n) {
          CMap g(o.grad.data() + n * m * p, m, p);
          CMap ma(va + n * a_rows * a_cols, a_rows, a_cols);
          CMap mb(vb + n * b_rows * b_cols, b_rows, b_cols);
          if (ga) {
            Map da(ga + n * a_rows * a_cols, a_rows, a_cols);
            // dA_eff = G * B_eff^T, with A_eff = op(A).
            if (!transpose_a && !transpose_b) detail::matmul(da, g, mb.transpose(), true);
            if (!transpose_a && transpose_b) detail::matmul(da, g, mb, true);
            if (transpose_a && !transpose_b) detail::matmul(da, mb, g.transpose(), true);
            if (transpose_a && transpose_b) detail::matmul(da, mb.transpose(), g.transpose(), true);
          }
          if (gb) {
            Map db(gb + n * b_rows * b_cols, b_rows, b_cols);
            if (!transpose_a && !transpose_b) detail::matmul(db, ma.transpose(), g, true);
            if (transpose_a && !transpose_b) detail::matmul(db, ma, g, true);
            if (!transpose_a && transpose_b) detail::matmul(db, g.transpose(), ma, true);
            if (transpose_a && transpose_b) detail::matmul(db, g.transpose(), ma.transpose(), true);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax

/// Softmax along `axis`, stabilized by subtracting the running maximum.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const int ax = detail::normalize_axis(axis, a.ndim());
  const Shape& s = a.shape();
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < a.ndim(); ++i) inner *= s[static_cast<std::size_t>(i)];
  const Index len = s[static_cast<std::size_t>(ax)];
  std::vector<T> out(a.data().size());
  const T* pa = a.data().data();
  std::vector<T> mx(static_cast<std::size_t>(inner));
  std::vector<T> den(static_cast<std::size_t>(inner));
  for (Index o = 0; o < outer; ++o) {
    const T* src = pa + o * len * inner;
    T* dst = out.data() + o * len * inner;
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
    std::fill(den.begin(), den.end(), T(0));
    for (Index k = 0; k < len; ++k) {
      for (Index i = 0; i < inner; ++i) mx[static_cast<std::size_t>(i)] = std::max(mx[static_cast<std::size_t>(i)], src[k * inner + i]);
    }
    for (Index k = 0; k < len; ++k) {
      for (Index i = 0; i < inner; ++i) {
        const T e = std::exp(src[k * inner + i] - mx[static_cast<std::size_t>(i)]);
        dst[k * inner + i] = e;
        den[static_cast<std::size_t>(i)] += e;
      }
    }
    for (Index k = 0; k < len; ++k) {
      for (Index i = 0; i < inner; ++i) dst[k * inner + i] /= den[static_cast<std::size_t>(i)];
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "softmax", [outer, inner, len](detail::TensorImpl<T>& o) {
    T* ga = input_grad(o, 0);
    if (!ga) return;
    std::vector<T> dot(static_cast<std::size_t>(inner));
    for (Index oo = 0; oo < outer; ++oo) {
      const T* y = o.data.data() + oo * len * inner;
      const T* g = o.grad.data() + oo * len * inner;
      T* dst = ga + oo * len * inner;
      std::fill(dot.begin(), dot.end(), T(0));
      for (Index k = 0; k < len; ++k) {
        for (Index i = 0; i < inner; ++i) dot[static_cast<std::size_t>(i)] += g[k * inner + i] * y[k * inner + i];
      }
      for (Index k = 0; k < len; ++k) {
        for (Index i = 0; i < inner; ++i) {
          dst[k * inner + i] += y[k * inner + i] * (g[k * inner + i] - dot[static_cast<std::size_t>(i)]);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Patch extraction

/// [B,C,T,H,W] -> [B,C,kt*kh*kw,T,H,W]; patch channel (dt*kh + dy)*kw + dx holds the
/// neighbor at offset (dt - kt/2, dy - kh/2, dx - kw/2). Borders replicate the
/// nearest sample on every axis.
template <class T>
Tensor<T> unfold3d(const Tensor<T>& a, std::array<Index, 3> kernel = {3, 3, 3}) {
  if (a.ndim() != 5) throw ShapeError("unfold3d expects [B,C,T,H,W], got " + to_string(a.shape()));
  for (Index k : kernel) {
    if (k < 1 || k % 2 == 0) throw ShapeError("unfold3d kernel extents must be odd and positive");
  }
  const Index bc = a.dim(0) * a.dim(1), nt = a.dim(2), nh = a.dim(3), nw = a.dim(4);
  const Index kt = kernel[0], kh = kernel[1], kw = kernel[2];
  const Index kk = kt * kh * kw;
  const Index plane = nt * nh * nw;
  // Source index for every (patch channel, position); shared by both passes.
  auto gather = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(kk * plane));
  for (Index dt = 0; dt < kt; ++dt) {
    for (Index dy = 0; dy < kh; ++dy) {
      for (Index dx = 0; dx < kw; ++dx) {
        const Index k = (dt * kh + dy) * kw + dx;
        Index* dst = gather->data() + k * plane;
        for (Index t = 0; t < nt; ++t) {
          const Index st = std::clamp(t + dt - kt / 2, Index{0}, nt - 1);
          for (Index y = 0; y < nh; ++y) {
            const Index sy = std::clamp(y + dy - kh / 2, Index{0}, nh - 1);
            for (Index x = 0; x < nw; ++x) {
              const Index sx = std::clamp(x + dx - kw / 2, Index{0}, nw - 1);
              dst[(t * nh + y) * nw + x] = (st * nh + sy) * nw + sx;
            }
          }
        }
      }
    }
  }
  std::vector<T> out(static_cast<std::size_t>(bc * kk * plane));
  const T* pa = a.data().data();
  for (Index c = 0; c < bc; ++c) {
    const T* src = pa + c * plane;
    T* dst = out.data() + c * kk * plane;
    for (Index i = 0; i < kk * plane; ++i) dst[i] = src[(*gather)[static_cast<std::size_t>(i)]];
  }
  Shape out_shape{a.dim(0), a.dim(1), kk, nt, nh, nw};
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a}, "unfold3d",
                                [gather, bc, kk, plane](detail::TensorImpl<T>& o) {
                                  T* ga = input_grad(o, 0);
                                  if (!ga) return;
                                  for (Index c = 0; c < bc; ++c) {
                                    const T* g = o.grad.data() + c * kk * plane;
                                    T* dst = ga + c * plane;
                                    for (Index i = 0; i < kk * plane; ++i) dst[(*gather)[static_cast<std::size_t>(i)]] += g[i];
                                  }
                                });
}

/// Per-(batch, channel, frame) normalization over the spatial axes of a
/// [B,C,T,H,W] tensor: zero mean, unit variance, no affine terms.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  if (x.ndim() != 5) throw ShapeError("instance_norm: expected [B,C,T,H,W], got " + to_string(x.shape()));
  const Index hw = x.dim(3) * x.dim(4);
  const T inv = T(1) / static_cast<T>(hw);
  auto flat = reshape(x, {x.dim(0), x.dim(1), x.dim(2), hw});
  auto centred = sub(flat, scale(sum_axis(flat, 3, true), inv));
  auto var = scale(sum_axis(square(centred), 3, true), inv);
  return reshape(div(centred, sqrt(add_scalar(var, eps))), x.shape());
}

}  // namespace tcs
