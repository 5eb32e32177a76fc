#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <type_traits>

#include "tcs/ops.hpp"

namespace tcs {

using Triple = std::array<Index, 3>;

namespace detail {

struct ConvGeometry {
  Index ci, ti, hi, wi;
  Index kt, kh, kw;
  Triple stride, pad;
  Index to, ho, wo;

  Index rows() const { return ci * kt * kh * kw; }
  Index positions() const { return to * ho * wo; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

template <class T>
void im2col(const ConvGeometry& g, const T* src, T* cols) {
  const Index p = g.positions();
  for (Index c = 0; c < g.ci; ++c) {
    for (Index dt = 0; dt < g.kt; ++dt) {
      for (Index dy = 0; dy < g.kh; ++dy) {
        for (Index dx = 0; dx < g.kw; ++dx) {
          T* row = cols + (((c * g.kt + dt) * g.kh + dy) * g.kw + dx) * p;
          for (Index t = 0; t < g.to; ++t) {
            const Index st = t * g.stride[0] - g.pad[0] + dt;
            for (Index y = 0; y < g.ho; ++y) {
              T* dst = row + (t * g.ho + y) * g.wo;
              const Index sy = y * g.stride[1] - g.pad[1] + dy;
              if (st < 0 || st >= g.ti || sy < 0 || sy >= g.hi) {
                std::fill(dst, dst + g.wo, T(0));
                continue;
              }
              const T* line = src + ((c * g.ti + st) * g.hi + sy) * g.wi;
              for (Index x = 0; x < g.wo; ++x) {
                const Index sx = x * g.stride[2] - g.pad[2] + dx;
                dst[x] = (sx >= 0 && sx < g.wi) ? line[sx] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dst_img) {
  const Index p = g.positions();
  for (Index c = 0; c < g.ci; ++c) {
    for (Index dt = 0; dt < g.kt; ++dt) {
      for (Index dy = 0; dy < g.kh; ++dy) {
        for (Index dx = 0; dx < g.kw; ++dx) {
          const T* row = cols + (((c * g.kt + dt) * g.kh + dy) * g.kw + dx) * p;
          for (Index t = 0; t < g.to; ++t) {
            const Index st = t * g.stride[0] - g.pad[0] + dt;
            if (st < 0 || st >= g.ti) continue;
            for (Index y = 0; y < g.ho; ++y) {
              const Index sy = y * g.stride[1] - g.pad[1] + dy;
              if (sy < 0 || sy >= g.hi) continue;
              const T* src = row + (t * g.ho + y) * g.wo;
              T* line = dst_img + ((c * g.ti + st) * g.hi + sy) * g.wi;
              for (Index x = 0; x < g.wo; ++x) {
                const Index sx = x * g.stride[2] - g.pad[2] + dx;
                if (sx >= 0 && sx < g.wi) line[sx] += src[x];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3D cross-correlation over (T,H,W) with zero padding.
///
/// input [B,Ci,T,H,W], kernel [Co,Ci,kt,kh,kw], optional bias [Co].
/// Output extent per axis is floor((in + 2*pad - k) / stride) + 1.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt,
                 Triple stride = {1, 1, 1}, Triple pad = {0, 0, 0}) {
  if (input.ndim() != 5 || kernel.ndim() != 5) {
    throw ShapeError("conv3d: input " + to_string(input.shape()) + " and kernel " + to_string(kernel.shape()) +
                     " must both be rank 5");
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv3d: kernel " + to_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                     " channels, input " + to_string(input.shape()) + " has " + std::to_string(input.dim(1)));
  }
  if (bias && (bias->ndim() != 1 || bias->dim(0) != kernel.dim(0))) {
    throw ShapeError("conv3d: bias " + to_string(bias->shape()) + " does not match kernel " + to_string(kernel.shape()));
  }
  detail::ConvGeometry g{};
  g.ci = input.dim(1);
  g.ti = input.dim(2);
  g.hi = input.dim(3);
  g.wi = input.dim(4);
  g.kt = kernel.dim(2);
  g.kh = kernel.dim(3);
  g.kw = kernel.dim(4);
  g.stride = stride;
  g.pad = pad;
  const std::array<Index, 3> in_ext{g.ti, g.hi, g.wi};
  const std::array<Index, 3> k_ext{g.kt, g.kh, g.kw};
  std::array<Index, 3> out_ext{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (stride[i] < 1 || pad[i] < 0) throw ShapeError("conv3d: stride must be >= 1 and padding >= 0");
    if (k_ext[i] > in_ext[i] + 2 * pad[i]) {
      throw ShapeError("conv3d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
                       to_string(input.shape()));
    }
    out_ext[i] = (in_ext[i] + 2 * pad[i] - k_ext[i]) / stride[i] + 1;
  }
  g.to = out_ext[0];
  g.ho = out_ext[1];
  g.wo = out_ext[2];

  const Index batch = input.dim(0);
  const Index co = kernel.dim(0);
  const Index rows = g.rows();
  const Index pos = g.positions();
  const Index in_stride = g.ci * g.ti * g.hi * g.wi;

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  const bool recording = grad_enabled() && (input.requires_grad() || kernel.requires_grad() ||
                                            (bias && bias->requires_grad()));
  const bool keep_cols = recording && kernel.requires_grad() && !g.pointwise();
  auto saved = std::make_shared<std::vector<T>>();
  if (keep_cols) saved->resize(static_cast<std::size_t>(batch * rows * pos));
  std::vector<T> scratch;
  if (!g.pointwise() && !keep_cols) scratch.resize(static_cast<std::size_t>(rows * pos));

  std::vector<T> out(static_cast<std::size_t>(batch * co * pos));
  CMap wmat(kernel.data().data(), co, rows);
  for (Index b = 0; b < batch; ++b) {
    const T* src = input.data().data() + b * in_stride;
    const T* cols = src;
    if (!g.pointwise()) {
      T* buf = keep_cols ? saved->data() + b * rows * pos : scratch.data();
      detail::im2col(g, src, buf);
      cols = buf;
    }
    Map o(out.data() + b * co * pos, co, pos);
    detail::matmul(o, wmat, CMap(cols, rows, pos), false);
    if (bias) {
      Eigen::Map<const Vec> bv(bias->data().data(), co);
      o.colwise() += bv;
    }
  }

  std::vector<Tensor<T>> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return Tensor<T>::make_result(
      Shape{batch, co, g.to, g.ho, g.wo}, std::move(out), std::move(inputs), "conv3d",
      [g, saved, batch, co, rows, pos, in_stride, has_bias](detail::TensorImpl<T>& o) {
        T* gx = input_grad(o, 0);
        T* gw = input_grad(o, 1);
        T* gb = has_bias ? input_grad(o, 2) : nullptr;
        const T* x = input_data(o, 0);
        CMap wmat(input_data(o, 1), co, rows);
        std::vector<T> dcols;
        if (gx && !g.pointwise()) dcols.resize(static_cast<std::size_t>(rows * pos));
        for (Index b = 0; b < batch; ++b) {
          CMap go(o.grad.data() + b * co * pos, co, pos);
          if (gw) {
            const T* cols = g.pointwise() ? x + b * in_stride : saved->data() + b * rows * pos;
            detail::matmul(Map(gw, co, rows), go, CMap(cols, rows, pos).transpose(), true);
          }
          if (gb) {
            // Fixed-order sum; Eigen's vectorized reduction depends on alignment.
            for (Index c = 0; c < co; ++c) {
              T acc = T(0);
              for (Index j = 0; j < pos; ++j) acc += go(c, j);
              gb[c] += acc;
            }
          }
          if (gx) {
            if (g.pointwise()) {
              detail::matmul(Map(gx + b * in_stride, rows, pos), wmat.transpose(), go, true);
            } else {
              detail::matmul(Map(dcols.data(), rows, pos), wmat.transpose(), go, false);
              detail::col2im(g, dcols.data(), gx + b * in_stride);
            }
          }
        }
      });
}

/// 2D cross-correlation: input [B,Ci,H,W], kernel [Co,Ci,kh,kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt,
                 std::array<Index, 2> stride = {1, 1}, std::array<Index, 2> pad = {0, 0}) {
  if (input.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " and kernel " + to_string(kernel.shape()) +
                     " must both be rank 4");
  }
  auto x5 = reshape(input, {input.dim(0), input.dim(1), 1, input.dim(2), input.dim(3)});
  auto k5 = reshape(kernel, {kernel.dim(0), kernel.dim(1), 1, kernel.dim(2), kernel.dim(3)});
  auto y = conv3d(x5, k5, bias, {1, stride[0], stride[1]}, {0, pad[0], pad[1]});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
}

}  // namespace tcs
