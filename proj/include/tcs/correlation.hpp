#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "tcs/ops.hpp"

namespace tcs {

/// Search radii (r_x, r_y); offsets span [-r, r] on each axis.
struct SearchWindow {
  int rx = 0;
  int ry = 0;

  Index offsets() const { return static_cast<Index>((2 * rx + 1) * (2 * ry + 1)); }
  bool operator==(const SearchWindow&) const = default;
};

enum class CorrMode { local, all_pairs };

inline const char* to_string(CorrMode m) { return m == CorrMode::local ? "local" : "all_pairs"; }

inline CorrMode parse_corr_mode(const std::string& s) {
  if (s == "local") return CorrMode::local;
  if (s == "all_pairs" || s == "all-pairs") return CorrMode::all_pairs;
  throw std::invalid_argument("unknown correlation mode '" + s + "'");
}

template <class T>
struct CostVolume {
  Tensor<T> values;  // [B,K,T,H,W]
  CorrMode mode = CorrMode::all_pairs;
  SearchWindow window;
};

/// Alternating 1D / 2D search: odd iterations (4,0), even iterations (1,1).
inline SearchWindow corr_schedule(int iter_index) {
  if (iter_index < 1) throw std::invalid_argument("corr_schedule: iteration index starts at 1");
  return iter_index % 2 == 1 ? SearchWindow{4, 0} : SearchWindow{1, 1};
}

template <class T>
struct Warped {
  Tensor<T> features;                 // [B,C,T,H,W]
  std::vector<std::uint8_t> outside;  // [B,T,H,W]; 1 where x - d leaves [0, W-1]
};

/// Samples the right features at (x - d(x,y), y) with linear interpolation along x.
/// Taps outside the row contribute zero. Differentiable in both inputs.
template <class T>
Warped<T> warp_right(const Tensor<T>& f_right, const Tensor<T>& disparity) {
  if (f_right.ndim() != 5 || disparity.ndim() != 5 || disparity.dim(1) != 1 || f_right.dim(0) != disparity.dim(0) ||
      f_right.dim(2) != disparity.dim(2) || f_right.dim(3) != disparity.dim(3) || f_right.dim(4) != disparity.dim(4)) {
    throw ShapeError("warp_right: features " + to_string(f_right.shape()) + " vs disparity " +
                     to_string(disparity.shape()));
  }
  const Index nb = f_right.dim(0), nc = f_right.dim(1), nt = f_right.dim(2), nh = f_right.dim(3), nw = f_right.dim(4);
  const Index plane = nt * nh * nw;
  Warped<T> result;
  result.outside.assign(static_cast<std::size_t>(nb * plane), 0);
  std::vector<T> out(static_cast<std::size_t>(f_right.numel()), T(0));
  const T* f = f_right.data().data();
  const T* d = disparity.data().data();
  for (Index b = 0; b < nb; ++b) {
    for (Index p = 0; p < plane; ++p) {
      const Index x = p % nw;
      const Index row = p - x;
      const T xs = static_cast<T>(x) - d[b * plane + p];
      const T fl = std::floor(xs);
      const Index x0 = static_cast<Index>(fl);
      const T a = xs - fl;
      if (xs < T(0) || xs > static_cast<T>(nw - 1)) result.outside[static_cast<std::size_t>(b * plane + p)] = 1;
      const bool in0 = x0 >= 0 && x0 < nw;
      const bool in1 = x0 + 1 >= 0 && x0 + 1 < nw;
      for (Index c = 0; c < nc; ++c) {
        const T* src = f + (b * nc + c) * plane + row;
        T v = 0;
        if (in0) v += (T(1) - a) * src[x0];
        if (in1) v += a * src[x0 + 1];
        out[static_cast<std::size_t>((b * nc + c) * plane + p)] = v;
      }
    }
  }
  result.features = Tensor<T>::make_result(
      f_right.shape(), std::move(out), {f_right, disparity}, "warp_right",
      [nb, nc, nw, plane](detail::TensorImpl<T>& o) {
        T* gf = input_grad(o, 0);
        T* gd = input_grad(o, 1);
        const T* fv = input_data(o, 0);
        const T* dv = input_data(o, 1);
        const T* g = o.grad.data();
        for (Index b = 0; b < nb; ++b) {
          for (Index p = 0; p < plane; ++p) {
            const Index x = p % nw;
            const Index row = p - x;
            const T xs = static_cast<T>(x) - dv[b * plane + p];
            const T fl = std::floor(xs);
            const Index x0 = static_cast<Index>(fl);
            const T a = xs - fl;
            const bool in0 = x0 >= 0 && x0 < nw;
            const bool in1 = x0 + 1 >= 0 && x0 + 1 < nw;
            T dsum = 0;
            for (Index c = 0; c < nc; ++c) {
              const Index base = (b * nc + c) * plane;
              const T gi = g[base + p];
              const T v0 = in0 ? fv[base + row + x0] : T(0);
              const T v1 = in1 ? fv[base + row + x0 + 1] : T(0);
              if (gf) {
                if (in0) gf[base + row + x0] += gi * (T(1) - a);
                if (in1) gf[base + row + x0 + 1] += gi * a;
              }
              dsum += gi * (v1 - v0);
            }
            // d(xs)/d(d) = -1
            if (gd) gd[b * plane + p] -= dsum;
          }
        }
      });
  return result;
}

namespace detail {

inline void check_pair(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != 5 || a != b) throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b));
}

// Visits every (offset-left, offset-right) channel and the x range where both
// shifted positions stay inside the row, for one (y) line.
struct OffsetPair {
  Index k;
  Index lx, ly, rx, ry;
};

inline std::vector<OffsetPair> window_offsets(SearchWindow w) {
  std::vector<OffsetPair> v;
  Index k = 0;
  for (int oy = -w.ry; oy <= w.ry; ++oy) {
    for (int ox = -w.rx; ox <= w.rx; ++ox) v.push_back({k++, 0, 0, ox, oy});
  }
  return v;
}

inline std::vector<OffsetPair> pair_offsets(SearchWindow w) {
  std::vector<OffsetPair> v;
  const auto single = window_offsets(w);
  Index k = 0;
  for (const auto& a : single) {
    for (const auto& b : single) v.push_back({k++, a.rx, a.ry, b.rx, b.ry});
  }
  return v;
}

// C[k](x,y) = <L(x+lx, y+ly), R(x+rx, y+ry)> / sqrt(C); zero if either side is outside.
template <class T>
Tensor<T> correlate(const char* name, const Tensor<T>& fl, const Tensor<T>& fr, std::vector<OffsetPair> offsets) {
  const Index nb = fl.dim(0), nc = fl.dim(1), nt = fl.dim(2), nh = fl.dim(3), nw = fl.dim(4);
  const Index nk = static_cast<Index>(offsets.size());
  const Index hw = nh * nw, plane = nt * hw;
  const T norm = T(1) / std::sqrt(static_cast<T>(nc));
  auto offs = std::make_shared<std::vector<OffsetPair>>(std::move(offsets));

  // Runs body(k, out_index, left_index, right_index, count) over contiguous x runs.
  auto walk = [=](auto&& body) {
    for (Index b = 0; b < nb; ++b) {
      for (const auto& o : *offs) {
        const Index x_lo = std::max<Index>({0, -o.lx, -o.rx});
        const Index x_hi = std::min<Index>({nw, nw - o.lx, nw - o.rx});
        if (x_hi <= x_lo) continue;
        for (Index t = 0; t < nt; ++t) {
          for (Index y = 0; y < nh; ++y) {
            const Index yl = y + o.ly, yr = y + o.ry;
            if (yl < 0 || yl >= nh || yr < 0 || yr >= nh) continue;
            const Index out_i = ((b * nk + o.k) * nt + t) * hw + y * nw + x_lo;
            const Index l_i = b * nc * plane + t * hw + yl * nw + x_lo + o.lx;
            const Index r_i = b * nc * plane + t * hw + yr * nw + x_lo + o.rx;
            body(out_i, l_i, r_i, x_hi - x_lo);
          }
        }
      }
    }
  };

  std::vector<T> out(static_cast<std::size_t>(nb * nk * plane), T(0));
  const T* pl = fl.data().data();
  const T* pr = fr.data().data();
  walk([&](Index oi, Index li, Index ri, Index n) {
    T* dst = out.data() + oi;
    for (Index c = 0; c < nc; ++c) {
      const T* a = pl + li + c * plane;
      const T* b = pr + ri + c * plane;
      for (Index x = 0; x < n; ++x) dst[x] += a[x] * b[x];
    }
    for (Index x = 0; x < n; ++x) dst[x] *= norm;
  });
  return Tensor<T>::make_result(Shape{nb, nk, nt, nh, nw}, std::move(out), {fl, fr}, name,
                                [walk, nc, plane, norm](detail::TensorImpl<T>& o) {
                                  T* gl = input_grad(o, 0);
                                  T* gr = input_grad(o, 1);
                                  const T* vl = input_data(o, 0);
                                  const T* vr = input_data(o, 1);
                                  const T* g = o.grad.data();
                                  walk([&](Index oi, Index li, Index ri, Index n) {
                                    const T* go = g + oi;
                                    for (Index c = 0; c < nc; ++c) {
                                      const Index lc = li + c * plane, rc = ri + c * plane;
                                      if (gl) {
                                        for (Index x = 0; x < n; ++x) gl[lc + x] += norm * go[x] * vr[rc + x];
                                      }
                                      if (gr) {
                                        for (Index x = 0; x < n; ++x) gr[rc + x] += norm * go[x] * vl[lc + x];
                                      }
                                    }
                                  });
                                });
}

}  // namespace detail

/// One-directional local correlation: channel (oy+ry)*(2rx+1) + (ox+rx) holds
/// <F_L(x,y), F_R(x+ox, y+oy)> / sqrt(C).
template <class T>
Tensor<T> corr_local(const Tensor<T>& f_left, const Tensor<T>& f_right_warped, SearchWindow window) {
  detail::check_pair("corr_local", f_left.shape(), f_right_warped.shape());
  return detail::correlate("corr_local", f_left, f_right_warped, detail::window_offsets(window));
}

/// Local all-to-all-pairs correlation between two windows: channel k1*K + k2 holds
/// <F_L(p + o_k1), F_R(p + o_k2)> / sqrt(C), with K offsets per window.
template <class T>
Tensor<T> corr_all_pairs(const Tensor<T>& f_left, const Tensor<T>& f_right_warped, SearchWindow window) {
  detail::check_pair("corr_all_pairs", f_left.shape(), f_right_warped.shape());
  return detail::correlate("corr_all_pairs", f_left, f_right_warped, detail::pair_offsets(window));
}

template <class T>
CostVolume<T> build_cost_volume(const Tensor<T>& f_left, const Tensor<T>& f_right_warped, SearchWindow window,
                                CorrMode mode) {
  CostVolume<T> cv;
  cv.mode = mode;
  cv.window = window;
  cv.values = mode == CorrMode::local ? corr_local(f_left, f_right_warped, window)
                                      : corr_all_pairs(f_left, f_right_warped, window);
  return cv;
}

inline Index cost_channels(CorrMode mode, SearchWindow w) {
  return mode == CorrMode::local ? w.offsets() : w.offsets() * w.offsets();
}

}  // namespace tcs
