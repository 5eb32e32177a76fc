#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "tcs/correlation.hpp"
#include "tcs/params.hpp"

namespace tcs {

enum class AttentionMode { none, temporal, temporal_spatial };

inline const char* to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::none: return "none";
    case AttentionMode::temporal: return "temporal";
    case AttentionMode::temporal_spatial: return "temporal+spatial";
  }
  return "?";
}

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "none") return AttentionMode::none;
  if (s == "temporal") return AttentionMode::temporal;
  if (s == "temporal+spatial" || s == "temporal_spatial" || s == "temporal-spatial") {
    return AttentionMode::temporal_spatial;
  }
  throw std::invalid_argument("unknown attention mode '" + s + "'");
}

/// Channel widths of the recurrent update block.
struct UpdateDims {
  Index cost_channels_1d = 81;  // K for the (4,0) window
  Index cost_channels_2d = 81;  // K for the (1,1) window
  Index latent = 32;            // L, encoded cost width
  Index cost_feat = 32;         // Conv2d(E_n) output
  Index disp_feat = 15;         // Conv2d(d) output
  Index context = 16;           // F_c channels
  Index hidden = 64;            // C_h
  Index head_hidden = 32;
  bool super_kernel = true;
  AttentionMode attention = AttentionMode::temporal_spatial;

  Index input_channels() const { return cost_feat + disp_feat + 1 + context; }
};

inline std::string cost_encoder_name(SearchWindow w) {
  return "update.enc_r" + std::to_string(w.rx) + std::to_string(w.ry);
}

/// Registers every parameter of the update block under "update.".
template <class T>
void init_update_block(ParamStore<T>& ps, const UpdateDims& dims, Rng& rng) {
  const Index latent = dims.latent;
  const Index cx = dims.input_channels();
  const Index ch = dims.hidden;
  add_conv(ps, cost_encoder_name({4, 0}) + ".fc1", 2 * latent, dims.cost_channels_1d, {1, 1, 1}, rng, Init::he);
  add_conv(ps, cost_encoder_name({4, 0}) + ".fc2", latent, 2 * latent, {1, 1, 1}, rng);
  add_conv(ps, cost_encoder_name({1, 1}) + ".fc1", 2 * latent, dims.cost_channels_2d, {1, 1, 1}, rng, Init::he);
  add_conv(ps, cost_encoder_name({1, 1}) + ".fc2", latent, 2 * latent, {1, 1, 1}, rng);
  add_conv(ps, "update.cost_conv", dims.cost_feat, latent, {1, 3, 3}, rng, Init::he);
  add_conv(ps, "update.disp_conv", dims.disp_feat, 1, {1, 3, 3}, rng, Init::he);
  for (const char* kind : {"temporal", "spatial"}) {
    const std::string p = std::string("update.attn_") + kind;
    add_conv(ps, p + ".q", cx, cx, {1, 1, 1}, rng);
    add_conv(ps, p + ".k", cx, cx, {1, 1, 1}, rng);
    add_conv(ps, p + ".v", cx, cx, {1, 1, 1}, rng);
    add_conv(ps, p + ".o", cx, cx, {1, 1, 1}, rng, Init::zero);
  }
  add_conv(ps, "update.super.row", cx, cx, {1, 1, 7}, rng);
  add_conv(ps, "update.super.col", cx, cx, {1, 7, 1}, rng, Init::zero);
  add_conv(ps, "update.zr.spatial", 2 * ch, ch + cx, {1, 3, 3}, rng);
  add_conv(ps, "update.z.temporal", ch, ch, {3, 1, 1}, rng);
  add_conv(ps, "update.r.temporal", ch, ch, {3, 1, 1}, rng);
  add_conv(ps, "update.q.spatial", ch, ch + cx, {1, 3, 3}, rng);
  add_conv(ps, "update.q.temporal", ch, ch, {3, 1, 1}, rng);
  add_conv(ps, "update.head.hidden", dims.head_hidden, ch, {1, 3, 3}, rng, Init::he);
  add_conv(ps, "update.head.out", 1, dims.head_hidden, {3, 3, 3}, rng, Init::zero);
  add_conv(ps, "update.hidden_init", ch, dims.context, {1, 1, 1}, rng);
}

/// Per-pixel two-layer MLP over the K cost channels: K -> 2L -> L.
template <class T>
Tensor<T> encode_cost(const CostVolume<T>& volume, const ParamStore<T>& ps) {
  const std::string name = cost_encoder_name(volume.window);
  const auto& w1 = ps.get(name + ".fc1.weight");
  if (w1.dim(1) != volume.values.dim(1)) {
    throw ShapeError("encode_cost: volume has " + std::to_string(volume.values.dim(1)) + " channels, encoder '" + name +
                     "' expects " + std::to_string(w1.dim(1)));
  }
  auto hidden = relu(apply_conv(ps, name + ".fc1", volume.values));
  return apply_conv(ps, name + ".fc2", hidden);
}

namespace detail {

// Single-head scaled dot-product attention; tokens along the time axis
// (temporal) or over all H*W positions of a frame (spatial). Residual output.
template <class T>
Tensor<T> attend(const Tensor<T>& x, const ParamStore<T>& ps, bool temporal) {
  const std::string p = temporal ? "update.attn_temporal" : "update.attn_spatial";
  const Index nb = x.dim(0), nc = x.dim(1), nt = x.dim(2), nh = x.dim(3), nw = x.dim(4);
  // [B,C,T,H,W] -> tokens [groups, length, C]
  const std::vector<int> to_tokens = temporal ? std::vector<int>{0, 3, 4, 2, 1} : std::vector<int>{0, 2, 3, 4, 1};
  const Index groups = temporal ? nb * nh * nw : nb * nt;
  const Index length = temporal ? nt : nh * nw;
  auto tokens = [&](const std::string& proj) {
    return reshape(permute(apply_conv(ps, p + "." + proj, x), to_tokens), {groups, length, nc});
  };
  auto q = tokens("q"), k = tokens("k"), v = tokens("v");
  auto scores = scale(bmm(q, k, false, true), T(1) / std::sqrt(static_cast<T>(nc)));
  auto mixed = bmm(softmax(scores, 2), v);
  Tensor<T> back;
  if (temporal) {
    back = permute(reshape(mixed, {nb, nh, nw, nt, nc}), {0, 4, 3, 1, 2});
  } else {
    back = permute(reshape(mixed, {nb, nt, nh, nw, nc}), {0, 4, 1, 2, 3});
  }
  return add(x, apply_conv(ps, p + ".o", back));
}

}  // namespace detail

/// Attention over the GRU input. `none` returns the input tensor itself.
template <class T>
Tensor<T> attention(const Tensor<T>& x, AttentionMode mode, const ParamStore<T>& ps) {
  if (x.ndim() != 5) throw ShapeError("attention expects [B,C,T,H,W], got " + to_string(x.shape()));
  switch (mode) {
    case AttentionMode::none: return x;
    case AttentionMode::temporal: return detail::attend(x, ps, true);
    case AttentionMode::temporal_spatial: return detail::attend(detail::attend(x, ps, true), ps, false);
  }
  return x;
}

template <class T>
struct GruState {
  Tensor<T> h;  // [B,C_h,T,H,W]
  Tensor<T> d;  // [B,1,T,H,W], feature-grid pixels
  int iter_index = 1;
};

template <class T>
Tensor<T> initial_hidden(const Tensor<T>& f_ctx, const ParamStore<T>& ps) {
  return tcs::tanh(apply_conv(ps, "update.hidden_init", f_ctx));
}

namespace detail {

template <class T>
Tensor<T> separable(const ParamStore<T>& ps, const std::string& spatial, const std::string& temporal,
                    const Tensor<T>& x) {
  return apply_conv(ps, temporal, apply_conv(ps, spatial, x));
}

template <class T>
void require_finite(const Tensor<T>& t, const char* what, int iter) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("gru_step: non-finite ") + what + " at iteration " + std::to_string(iter));
    }
  }
}

}  // namespace detail

/// One recurrent refinement step:
///   x = [Conv2d(E), Conv2d(d), d, F_c] -> attention (-> large-kernel mix)
///   z, r = sigmoid(sep3d([h, x])), q = tanh(sep3d([r*h, x]))
///   h' = (1-z) h + z q,   d' = d + head(h')
template <class T>
GruState<T> gru_step(const GruState<T>& state, const Tensor<T>& encoded_cost, const Tensor<T>& f_ctx,
                     const ParamStore<T>& ps, const UpdateDims& dims) {
  if (state.iter_index < 1) throw std::invalid_argument("gru_step: iteration index starts at 1");
  const auto& h = state.h;
  const auto& d = state.d;
  const Index ch = h.dim(1);
  auto cost_feat = relu(apply_conv(ps, "update.cost_conv", encoded_cost));
  auto disp_feat = relu(apply_conv(ps, "update.disp_conv", d));
  auto x = concat<T>({cost_feat, disp_feat, d, f_ctx}, 1);
  x = attention(x, dims.attention, ps);
  if (dims.super_kernel) {
    x = add(x, apply_conv(ps, "update.super.col", apply_conv(ps, "update.super.row", x)));
  }
  auto zr = apply_conv(ps, "update.zr.spatial", concat<T>({h, x}, 1));
  auto z = sigmoid(apply_conv(ps, "update.z.temporal", slice(zr, 1, 0, ch)));
  auto r = sigmoid(apply_conv(ps, "update.r.temporal", slice(zr, 1, ch, ch)));
  auto q = tcs::tanh(detail::separable(ps, "update.q.spatial", "update.q.temporal", concat<T>({mul(r, h), x}, 1)));
  GruState<T> next;
  next.h = add(mul(one_minus(z), h), mul(z, q));
  auto delta = apply_conv(ps, "update.head.out", relu(apply_conv(ps, "update.head.hidden", next.h)));
  next.d = add(d, delta);
  next.iter_index = state.iter_index + 1;
  detail::require_finite(next.h, "hidden state", state.iter_index);
  detail::require_finite(next.d, "disparity", state.iter_index);
  return next;
}

/// Registers a weight predictor for convex upsampling at `alpha` with `taps` neighbors.
template <class T>
void init_mask_head(ParamStore<T>& ps, const std::string& name, Index hidden, Index taps, Index alpha, Rng& rng) {
  add_conv(ps, name + ".spatial", hidden, hidden, {1, 3, 3}, rng, Init::he);
  add_conv(ps, name + ".temporal", hidden, hidden, {3, 1, 1}, rng, Init::he);
  add_conv(ps, name + ".out", taps * alpha * alpha, hidden, {1, 1, 1}, rng);
}

/// Upsampling logits from the hidden state (scaled down to keep the initial
/// softmax close to uniform).
template <class T>
Tensor<T> predict_mask(const ParamStore<T>& ps, const std::string& name, const Tensor<T>& h) {
  auto hidden = relu(detail::separable(ps, name + ".spatial", name + ".temporal", h));
  return scale(apply_conv(ps, name + ".out", hidden), T(0.25));
}

}  // namespace tcs
