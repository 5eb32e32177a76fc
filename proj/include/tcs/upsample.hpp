#pragma once

#include <stdexcept>
#include <string>

#include "tcs/ops.hpp"

namespace tcs {

enum class UpsampleMode { bilinear, convex, temporal_convex };

inline const char* to_string(UpsampleMode m) {
  switch (m) {
    case UpsampleMode::bilinear: return "bilinear";
    case UpsampleMode::convex: return "convex";
    case UpsampleMode::temporal_convex: return "temporal_convex";
  }
  return "?";
}

inline UpsampleMode parse_upsample_mode(const std::string& s) {
  if (s == "bilinear") return UpsampleMode::bilinear;
  if (s == "convex") return UpsampleMode::convex;
  if (s == "temporal_convex" || s == "temporal-convex") return UpsampleMode::temporal_convex;
  throw std::invalid_argument("unknown upsample mode '" + s + "'");
}

/// Number of neighbors mixed per output subpixel (0 for bilinear).
inline Index upsample_taps(UpsampleMode m) {
  switch (m) {
    case UpsampleMode::bilinear: return 0;
    case UpsampleMode::convex: return 9;
    case UpsampleMode::temporal_convex: return 27;
  }
  return 0;
}

inline constexpr Index kMaxUpsampledExtent = 1 << 14;

namespace detail {

inline void check_upsample_input(const char* op, const Shape& d, Index alpha) {
  if (d.size() != 5 || d[1] != 1) throw ShapeError(std::string(op) + ": disparity must be [B,1,T,H,W], got " + to_string(d));
  if (alpha < 1) throw std::invalid_argument(std::string(op) + ": upsampling rate must be >= 1");
  if (d[3] * alpha > kMaxUpsampledExtent || d[4] * alpha > kMaxUpsampledExtent) {
    throw std::invalid_argument(std::string(op) + ": upsampled extent exceeds " + std::to_string(kMaxUpsampledExtent));
  }
}

// Learned convex combination over a (kt,kh,kw) neighborhood, kt*kh*kw = taps.
// logits [B, taps*alpha^2, T, H, W] with channel (tap*alpha + sy)*alpha + sx.
template <class T>
Tensor<T> convex_combine(const char* op, const Tensor<T>& d, const Tensor<T>& logits, Index alpha,
                         std::array<Index, 3> kernel) {
  check_upsample_input(op, d.shape(), alpha);
  const Index taps = kernel[0] * kernel[1] * kernel[2];
  const Index nb = d.dim(0), nt = d.dim(2), nh = d.dim(3), nw = d.dim(4);
  if (logits.shape() != Shape{nb, taps * alpha * alpha, nt, nh, nw}) {
    throw ShapeError(std::string(op) + ": logits " + to_string(logits.shape()) + " do not match disparity " +
                     to_string(d.shape()) + " at rate " + std::to_string(alpha));
  }
  // [B,1,taps,a,a,T,H,W], normalized over the taps axis.
  auto weights = softmax(reshape(logits, {nb, 1, taps, alpha, alpha, nt, nh, nw}), 2);
  // [B,1,taps,1,1,T,H,W] neighbors of the rate-scaled disparity.
  auto patches = reshape(unfold3d(scale(d, static_cast<T>(alpha)), kernel), {nb, 1, taps, 1, 1, nt, nh, nw});
  auto mixed = sum_axis(mul(weights, patches), 2);  // [B,1,a,a,T,H,W]
  auto ordered = permute(mixed, {0, 1, 4, 5, 2, 6, 3});  // [B,1,T,H,a,W,a]
  return reshape(ordered, {nb, 1, nt, nh * alpha, nw * alpha});
}

}  // namespace detail

/// Each output subpixel is a softmax-weighted combination of its 27 neighbors
/// across (t-1, t, t+1) x 3 x 3 in the rate-scaled low-resolution disparity.
/// Borders replicate on all three axes.
template <class T>
Tensor<T> temporal_convex_upsample(const Tensor<T>& d, const Tensor<T>& logits, Index alpha) {
  return detail::convex_combine("temporal_convex_upsample", d, logits, alpha, {3, 3, 3});
}

/// Per-frame variant with 9 spatial neighbors.
template <class T>
Tensor<T> convex_upsample_2d(const Tensor<T>& d, const Tensor<T>& logits, Index alpha) {
  return detail::convex_combine("convex_upsample_2d", d, logits, alpha, {1, 3, 3});
}

/// Per-frame bilinear interpolation (corner-aligned) with values scaled by alpha.
template <class T>
Tensor<T> bilinear_upsample(const Tensor<T>& d, Index alpha) {
  detail::check_upsample_input("bilinear_upsample", d.shape(), alpha);
  const Index nb = d.dim(0), nt = d.dim(2), nh = d.dim(3), nw = d.dim(4);
  const Index oh = nh * alpha, ow = nw * alpha;
  struct Tap {
    Index i0, i1;
    T f;
  };
  auto taps = [](Index n_in, Index n_out) {
    std::vector<Tap> v(static_cast<std::size_t>(n_out));
    for (Index o = 0; o < n_out; ++o) {
      if (n_in == 1 || n_out == 1) {
        v[static_cast<std::size_t>(o)] = {0, 0, T(0)};
        continue;
      }
      const double pos = static_cast<double>(o) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
      Index i0 = static_cast<Index>(pos);
      if (i0 >= n_in - 1) i0 = n_in - 2;
      v[static_cast<std::size_t>(o)] = {i0, i0 + 1, static_cast<T>(pos - static_cast<double>(i0))};
    }
    return v;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(nh, oh));
  auto tx = std::make_shared<std::vector<Tap>>(taps(nw, ow));
  const T a = static_cast<T>(alpha);
  const Index frames = nb * nt;
  std::vector<T> out(static_cast<std::size_t>(frames * oh * ow));
  const T* src = d.data().data();
  for (Index f = 0; f < frames; ++f) {
    const T* in = src + f * nh * nw;
    T* dst = out.data() + f * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      const Tap& vy = (*ty)[static_cast<std::size_t>(y)];
      for (Index x = 0; x < ow; ++x) {
        const Tap& vx = (*tx)[static_cast<std::size_t>(x)];
        const T top = (T(1) - vx.f) * in[vy.i0 * nw + vx.i0] + vx.f * in[vy.i0 * nw + vx.i1];
        const T bot = (T(1) - vx.f) * in[vy.i1 * nw + vx.i0] + vx.f * in[vy.i1 * nw + vx.i1];
        dst[y * ow + x] = a * ((T(1) - vy.f) * top + vy.f * bot);
      }
    }
  }
  return Tensor<T>::make_result(Shape{nb, 1, nt, oh, ow}, std::move(out), {d}, "bilinear_upsample",
                                [ty, tx, frames, nh, nw, oh, ow, a](detail::TensorImpl<T>& o) {
                                  T* gd = input_grad(o, 0);
                                  if (!gd) return;
                                  for (Index f = 0; f < frames; ++f) {
                                    T* gin = gd + f * nh * nw;
                                    const T* g = o.grad.data() + f * oh * ow;
                                    for (Index y = 0; y < oh; ++y) {
                                      const Tap& vy = (*ty)[static_cast<std::size_t>(y)];
                                      for (Index x = 0; x < ow; ++x) {
                                        const Tap& vx = (*tx)[static_cast<std::size_t>(x)];
                                        const T gv = a * g[y * ow + x];
                                        gin[vy.i0 * nw + vx.i0] += gv * (T(1) - vy.f) * (T(1) - vx.f);
                                        gin[vy.i0 * nw + vx.i1] += gv * (T(1) - vy.f) * vx.f;
                                        gin[vy.i1 * nw + vx.i0] += gv * vy.f * (T(1) - vx.f);
                                        gin[vy.i1 * nw + vx.i1] += gv * vy.f * vx.f;
                                      }
                                    }
                                  }
                                });
}

/// Dispatches on the configured mode. `logits` is ignored for bilinear.
template <class T>
Tensor<T> upsample_disparity(UpsampleMode mode, const Tensor<T>& d, const Tensor<T>& logits, Index alpha) {
  switch (mode) {
    case UpsampleMode::bilinear: return bilinear_upsample(d, alpha);
    case UpsampleMode::convex: return convex_upsample_2d(d, logits, alpha);
    case UpsampleMode::temporal_convex: return temporal_convex_upsample(d, logits, alpha);
  }
  throw std::logic_error("unreachable upsample mode");
}

}  // namespace tcs
