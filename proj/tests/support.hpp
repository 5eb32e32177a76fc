#pragma once

// Brute-force oracles and gradient-check fixtures shared by the unit tests and
// the acceptance binary. Oracles are plain loops over raw indices and use no
// tensor ops beyond element access.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tcs/aggregation.hpp"
#include "tcs/conv.hpp"
#include "tcs/correlation.hpp"
#include "tcs/gradcheck.hpp"
#include "tcs/ops.hpp"
#include "tcs/rng.hpp"
#include "tcs/upsample.hpp"

namespace tcs::support {

using TD = Tensor<double>;

// ---- correlation oracles ----

inline double brute_local(const TD& fl, const TD& fr, SearchWindow w, Index b, Index k, Index t, Index y, Index x) {
  const Index c = fl.dim(1), h = fl.dim(3), wd = fl.dim(4);
  const int ox = static_cast<int>(k % (2 * w.rx + 1)) - w.rx;
  const int oy = static_cast<int>(k / (2 * w.rx + 1)) - w.ry;
  const Index ty = y + oy, tx = x + ox;
  if (ty < 0 || ty >= h || tx < 0 || tx >= wd) return 0.0;
  double acc = 0;
  for (Index ch = 0; ch < c; ++ch) acc += fl.at({b, ch, t, y, x}) * fr.at({b, ch, t, ty, tx});
  return acc / std::sqrt(static_cast<double>(c));
}

inline double brute_pairs(const TD& fl, const TD& fr, SearchWindow w, Index b, Index k, Index t, Index y, Index x) {
  const Index c = fl.dim(1), h = fl.dim(3), wd = fl.dim(4);
  const Index per = w.offsets();
  const Index k1 = k / per, k2 = k % per;
  const int ox1 = static_cast<int>(k1 % (2 * w.rx + 1)) - w.rx, oy1 = static_cast<int>(k1 / (2 * w.rx + 1)) - w.ry;
  const int ox2 = static_cast<int>(k2 % (2 * w.rx + 1)) - w.rx, oy2 = static_cast<int>(k2 / (2 * w.rx + 1)) - w.ry;
  const Index ly = y + oy1, lx = x + ox1, ry = y + oy2, rx = x + ox2;
  if (ly < 0 || ly >= h || lx < 0 || lx >= wd || ry < 0 || ry >= h || rx < 0 || rx >= wd) return 0.0;
  double acc = 0;
  for (Index ch = 0; ch < c; ++ch) acc += fl.at({b, ch, t, ly, lx}) * fr.at({b, ch, t, ry, rx});
  return acc / std::sqrt(static_cast<double>(c));
}

// Max |kernel - oracle| over every output coordinate.
inline double corr_oracle_error(const TD& fl, const TD& fr, SearchWindow w, bool all_pairs) {
  const TD c = all_pairs ? corr_all_pairs(fl, fr, w) : corr_local(fl, fr, w);
  double worst = 0;
  for (Index b = 0; b < c.dim(0); ++b)
    for (Index k = 0; k < c.dim(1); ++k)
      for (Index t = 0; t < c.dim(2); ++t)
        for (Index y = 0; y < c.dim(3); ++y)
          for (Index x = 0; x < c.dim(4); ++x) {
            const double ref = all_pairs ? brute_pairs(fl, fr, w, b, k, t, y, x) : brute_local(fl, fr, w, b, k, t, y, x);
            worst = std::max(worst, std::abs(c.at({b, k, t, y, x}) - ref));
          }
  return worst;
}

// ---- upsampling oracle ----

inline Index clampi(Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); }

// For each output subpixel, softmax its taps and mix the alpha-scaled
// replicate-padded neighbors.
inline TD nested_loop_upsample(const TD& d, const TD& logits, Index alpha, Index kt) {
  const Index nb = d.dim(0), nt = d.dim(2), nh = d.dim(3), nw = d.dim(4);
  const Index taps = kt * 9;
  TD out({nb, 1, nt, nh * alpha, nw * alpha});
  auto o = out.mutable_data();
  for (Index b = 0; b < nb; ++b)
    for (Index t = 0; t < nt; ++t)
      for (Index y = 0; y < nh; ++y)
        for (Index x = 0; x < nw; ++x)
          for (Index sy = 0; sy < alpha; ++sy)
            for (Index sx = 0; sx < alpha; ++sx) {
              std::vector<double> w(static_cast<std::size_t>(taps));
              double mx = -1e300;
              for (Index k = 0; k < taps; ++k) {
                w[static_cast<std::size_t>(k)] = logits.at({b, (k * alpha + sy) * alpha + sx, t, y, x});
                mx = std::max(mx, w[static_cast<std::size_t>(k)]);
              }
              double den = 0;
              for (auto& v : w) den += (v = std::exp(v - mx));
              double acc = 0;
              for (Index dt = 0; dt < kt; ++dt)
                for (Index dy = 0; dy < 3; ++dy)
                  for (Index dx = 0; dx < 3; ++dx) {
                    const Index k = (dt * 3 + dy) * 3 + dx;
                    const Index st = kt == 1 ? t : clampi(t + dt - 1, nt);
                    acc += w[static_cast<std::size_t>(k)] / den * static_cast<double>(alpha) *
                           d.at({b, 0, st, clampi(y + dy - 1, nh), clampi(x + dx - 1, nw)});
                  }
              o[static_cast<std::size_t>(out.offset({b, 0, t, y * alpha + sy, x * alpha + sx}))] = acc;
            }
  return out;
}

// Min and max of the 27 replicate-padded neighbors of a coarse cell.
inline std::pair<double, double> neighborhood_range(const TD& d, Index t, Index y, Index x) {
  double lo = 1e300, hi = -1e300;
  for (Index dt = -1; dt <= 1; ++dt)
    for (Index dy = -1; dy <= 1; ++dy)
      for (Index dx = -1; dx <= 1; ++dx) {
        const double v = d.at({0, 0, clampi(t + dt, d.dim(2)), clampi(y + dy, d.dim(3)), clampi(x + dx, d.dim(4))});
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  return {lo, hi};
}

inline double neighborhood_mean(const TD& d, Index t, Index y, Index x) {
  double mean = 0;
  for (Index dt = -1; dt <= 1; ++dt)
    for (Index dy = -1; dy <= 1; ++dy)
      for (Index dx = -1; dx <= 1; ++dx)
        mean += d.at({0, 0, clampi(t + dt, d.dim(2)), clampi(y + dy, d.dim(3)), clampi(x + dx, d.dim(4))});
  return mean / 27.0;
}

// ---- gradient fixtures ----

// Values bounded away from zero so relu/abs are differentiable at every sample.
inline TD away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return TD(std::move(shape), std::move(v));
}

// Scalarizes an op output with fixed random weights so every output coordinate matters.
inline TD weighted_sum(const TD& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, uniform_tensor<double>(y.shape(), rng, 0.5, 1.5)));
}

inline UpdateDims tiny_dims(AttentionMode mode = AttentionMode::temporal_spatial) {
  UpdateDims d;
  d.cost_channels_1d = 9;
  d.cost_channels_2d = 9;
  d.latent = 4;
  d.cost_feat = 3;
  d.disp_feat = 2;
  d.context = 3;
  d.hidden = 4;
  d.head_hidden = 4;
  d.attention = mode;
  return d;
}

// Zero-initialized layers make some paths inert; randomize everything so the
// checks see every branch.
inline void randomize(ParamStore<double>& ps, Rng& rng, double amp = 0.4) {
  for (auto& [_, t] : ps.items()) {
    for (auto& v : t.mutable_data()) v = rng.uniform(-amp, amp);
  }
}

inline ParamStore<double> rebind(const ParamStore<double>& ps, const std::vector<std::string>& names,
                                 const std::vector<TD>& values) {
  ParamStore<double> out;
  for (const auto& [name, t] : ps.items()) {
    auto it = std::find(names.begin(), names.end(), name);
    out.add(name, it == names.end() ? t : values[static_cast<std::size_t>(it - names.begin())]);
  }
  return out;
}

struct GruFixture {
  UpdateDims dims = tiny_dims();
  ParamStore<double> ps;
  TD cost, ctx, h, d;

  explicit GruFixture(std::uint64_t seed, Index nt = 2, Index nh = 4, Index nw = 4) {
    Rng rng(seed);
    init_update_block(ps, dims, rng);
    randomize(ps, rng);
    cost = uniform_tensor<double>({1, dims.latent, nt, nh, nw}, rng);
    ctx = uniform_tensor<double>({1, dims.context, nt, nh, nw}, rng);
    h = uniform_tensor<double>({1, dims.hidden, nt, nh, nw}, rng);
    // Zero-centred so the disparity encoder's ReLUs see both signs; with
    // d >= 0 some coordinates get gradients near 1e-7 where central
    // differences lose the relative-error budget to rounding.
    d = uniform_tensor<double>({1, 1, nt, nh, nw}, rng, -3, 3);
  }
};

// ---- gradient cases ----

using GradCase = std::pair<std::string, GradCheckResult>;

// Every differentiable primitive, one seed.
inline std::vector<GradCase> primitive_gradient_cases(std::uint64_t seed) {
  Rng rng(seed * 7919 + 1);
  std::vector<GradCase> out;
  using V = std::vector<TD>;
  auto check = [&](const char* what, auto f, V in) { out.emplace_back(what, grad_check(f, std::move(in))); };
  check("add", [&](const V& v) { return weighted_sum(v[0] + v[1], seed); },
        {uniform_tensor<double>({2, 3}, rng), uniform_tensor<double>({3}, rng)});
  check("sub", [&](const V& v) { return weighted_sum(v[0] - v[1], seed); },
        {uniform_tensor<double>({2, 1, 3}, rng), uniform_tensor<double>({4, 1}, rng)});
  check("mul", [&](const V& v) { return weighted_sum(v[0] * v[1], seed); },
        {uniform_tensor<double>({2, 3}, rng), uniform_tensor<double>({2, 3}, rng)});
  check("div", [&](const V& v) { return weighted_sum(v[0] / v[1], seed); },
        {uniform_tensor<double>({2, 3}, rng), uniform_tensor<double>({3}, rng, 0.5, 2.0)});
  check("sigmoid", [&](const V& v) { return weighted_sum(sigmoid(v[0]), seed); },
        {uniform_tensor<double>({4, 3}, rng, -3, 3)});
  check("tanh", [&](const V& v) { return weighted_sum(tcs::tanh(v[0]), seed); },
        {uniform_tensor<double>({4, 3}, rng, -3, 3)});
  check("relu", [&](const V& v) { return weighted_sum(relu(v[0]), seed); }, {away_from_zero({4, 3}, rng)});
  check("abs", [&](const V& v) { return weighted_sum(tcs::abs(v[0]), seed); }, {away_from_zero({4, 3}, rng)});
  check("exp", [&](const V& v) { return weighted_sum(tcs::exp(v[0]), seed); }, {uniform_tensor<double>({5}, rng)});
  check("square", [&](const V& v) { return weighted_sum(square(v[0]), seed); }, {uniform_tensor<double>({5}, rng)});
  check("sqrt", [&](const V& v) { return weighted_sum(tcs::sqrt(v[0]), seed); },
        {uniform_tensor<double>({5}, rng, 0.5, 2.0)});
  check("instance_norm", [&](const V& v) { return weighted_sum(instance_norm(v[0]), seed); },
        {uniform_tensor<double>({2, 2, 2, 2, 3}, rng)});
  check("sum_axis", [&](const V& v) { return weighted_sum(sum_axis(v[0], 1), seed); },
        {uniform_tensor<double>({2, 3, 4}, rng)});
  check("permute", [&](const V& v) { return weighted_sum(permute(v[0], {2, 0, 1}), seed); },
        {uniform_tensor<double>({2, 3, 4}, rng)});
  check("concat", [&](const V& v) { return weighted_sum(concat<double>({v[0], v[1]}, 1), seed); },
        {uniform_tensor<double>({2, 3, 2}, rng), uniform_tensor<double>({2, 1, 2}, rng)});
  check("slice", [&](const V& v) { return weighted_sum(slice(v[0], 2, 1, 2), seed); },
        {uniform_tensor<double>({2, 3, 4}, rng)});
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      Shape sa = ta ? Shape{2, 4, 3} : Shape{2, 3, 4};
      Shape sb = tb ? Shape{2, 5, 4} : Shape{2, 4, 5};
      check("bmm", [&](const V& v) { return weighted_sum(bmm(v[0], v[1], ta == 1, tb == 1), seed); },
            {uniform_tensor<double>(sa, rng), uniform_tensor<double>(sb, rng)});
    }
  }
  check("softmax", [&](const V& v) { return weighted_sum(softmax(v[0], 1), seed); },
        {uniform_tensor<double>({3, 4, 2}, rng, -2, 2)});
  check("unfold3d", [&](const V& v) { return weighted_sum(unfold3d(v[0]), seed); },
        {uniform_tensor<double>({1, 2, 2, 3, 3}, rng)});
  check("conv2d", [&](const V& v) { return weighted_sum(conv2d(v[0], v[1], v[2], {1, 1}, {1, 1}), seed); },
        {uniform_tensor<double>({2, 3, 5, 5}, rng), uniform_tensor<double>({2, 3, 3, 3}, rng),
         uniform_tensor<double>({2}, rng)});
  check("conv3d strided",
        [&](const V& v) { return weighted_sum(conv3d(v[0], v[1], v[2], {1, 2, 2}, {1, 1, 1}), seed); },
        {uniform_tensor<double>({1, 2, 3, 5, 6}, rng), uniform_tensor<double>({3, 2, 3, 3, 3}, rng),
         uniform_tensor<double>({3}, rng)});
  check("conv3d pointwise", [&](const V& v) { return weighted_sum(conv3d(v[0], v[1], v[2]), seed); },
        {uniform_tensor<double>({2, 3, 2, 2, 3}, rng), uniform_tensor<double>({4, 3, 1, 1, 1}, rng),
         uniform_tensor<double>({4}, rng)});
  return out;
}

inline GradCheckResult encode_cost_gradient(std::uint64_t seed) {
  Rng rng(seed + 500);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  auto vol = uniform_tensor<double>({1, 9, 2, 2, 2}, rng);
  auto w = uniform_tensor<double>({1, 4, 2, 2, 2}, rng, -1, 1);
  const std::vector<std::string> names{"update.enc_r40.fc1.weight", "update.enc_r40.fc1.bias",
                                       "update.enc_r40.fc2.weight"};
  std::vector<TD> inputs{vol};
  for (const auto& n : names) inputs.push_back(ps.get(n));
  return grad_check(
      [&](const std::vector<TD>& v) {
        auto local = rebind(ps, names, {v.begin() + 1, v.end()});
        return sum(mul(encode_cost(CostVolume<double>{v[0], CorrMode::local, {4, 0}}, local), w));
      },
      inputs);
}

// Whole update step with respect to its state, inputs and a weight from every sub-block.
inline GradCheckResult gru_step_gradient(std::uint64_t seed) {
  GruFixture f(seed + 600, 2, 4, 4);
  Rng rng(seed + 700);
  auto wh = uniform_tensor<double>(f.h.shape(), rng, -1, 1);
  auto wd = uniform_tensor<double>(f.d.shape(), rng, -1, 1);
  const std::vector<std::string> names{"update.zr.spatial.weight", "update.q.temporal.weight",
                                       "update.head.out.weight", "update.attn_temporal.q.weight",
                                       "update.attn_spatial.k.weight"};
  std::vector<TD> inputs{f.h, f.d, f.cost, f.ctx};
  for (const auto& n : names) inputs.push_back(f.ps.get(n));
  return grad_check(
      [&](const std::vector<TD>& v) {
        auto local = rebind(f.ps, names, {v.begin() + 4, v.end()});
        auto next = gru_step(GruState<double>{v[0], v[1], 1}, v[2], v[3], local, f.dims);
        return add(sum(mul(next.h, wh)), sum(mul(next.d, wd)));
      },
      inputs);
}

// Disparities stay off integer sample positions, where the interpolation kinks.
inline GradCheckResult warp_gradient(std::uint64_t seed) {
  Rng rng(seed + 100);
  auto fr = uniform_tensor<double>({1, 2, 2, 3, 6}, rng);
  TD d({1, 1, 2, 3, 6});
  for (auto& v : d.mutable_data()) v = static_cast<double>(rng.below(3)) + rng.uniform(0.1, 0.9);
  auto w = uniform_tensor<double>({1, 2, 2, 3, 6}, rng, 0.5, 1.5);
  return grad_check([&](const std::vector<TD>& v) { return sum(mul(warp_right(v[0], v[1]).features, w)); }, {fr, d});
}

inline GradCheckResult all_pairs_gradient(std::uint64_t seed) {
  Rng rng(seed + 150);
  auto fl = uniform_tensor<double>({1, 2, 2, 3, 4}, rng);
  auto fr = uniform_tensor<double>({1, 2, 2, 3, 4}, rng);
  auto w = uniform_tensor<double>({1, 81, 2, 3, 4}, rng, 0.5, 1.5);
  return grad_check([&](const std::vector<TD>& v) { return sum(mul(corr_all_pairs(v[0], v[1], {1, 1}), w)); },
                    {fl, fr});
}

// Zero-centred inputs on a 2x2x2 grid. The relative metric is noisy on
// coordinates whose true gradient is near zero (softmax weights times a small
// neighbor spread), and the chance of hitting one grows with the coordinate count.
inline GradCheckResult temporal_convex_gradient(std::uint64_t seed) {
  Rng rng(seed + 200);
  auto d = uniform_tensor<double>({1, 1, 2, 2, 2}, rng, -2, 2);
  auto logits = uniform_tensor<double>({1, 27 * 4, 2, 2, 2}, rng, -1, 1);
  auto w_out = uniform_tensor<double>({1, 1, 2, 4, 4}, rng, -1, 1);
  return grad_check(
      [&](const std::vector<TD>& v) { return sum(mul(temporal_convex_upsample(v[0], v[1], 2), w_out)); },
      {d, logits});
}

}  // namespace tcs::support
