#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tcs/aggregation.hpp"
#include "tcs/features.hpp"
#include "tcs/upsample.hpp"

namespace tcs {

/// Architecture of one model. Everything needed to rebuild the parameter set.
struct ModelConfig {
  Index c_cnn = 16;
  Index c_prior = 0;
  Index latent = 32;
  Index hidden = 64;
  Index cost_feat = 32;
  Index disp_feat = 15;
  Index head_hidden = 32;
  std::vector<int> stages{16, 8, 4};
  int iters = 10;
  CorrMode correlation = CorrMode::all_pairs;
  AttentionMode attention = AttentionMode::temporal_spatial;
  UpsampleMode upsample = UpsampleMode::temporal_convex;
  bool super_kernel = true;
  Normalization norm;

  Index c_f() const { return c_cnn + c_prior; }

  UpdateDims update_dims() const {
    UpdateDims d;
    d.cost_channels_1d = cost_channels(correlation, {4, 0});
    d.cost_channels_2d = cost_channels(correlation, {1, 1});
    d.latent = latent;
    d.cost_feat = cost_feat;
    d.disp_feat = disp_feat;
    d.context = c_f();
    d.hidden = hidden;
    d.head_hidden = head_hidden;
    d.super_kernel = super_kernel;
    d.attention = attention;
    return d;
  }

  void validate() const {
    auto bad = [](const std::string& m) { return ConfigError("model: " + m); };
    if (c_cnn < 1 || c_prior < 0 || latent < 1 || hidden < 1 || cost_feat < 1 || disp_feat < 1 || head_hidden < 1) {
      throw bad("channel counts must be positive");
    }
    if (stages.empty()) throw bad("at least one cascade stage is required");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      scale_level(stages[i]);
      if (i > 0 && (stages[i] >= stages[i - 1] || stages[i - 1] % stages[i] != 0)) {
        throw bad("stages must be strictly decreasing and each must divide the previous, got " + join_ints(stages));
      }
    }
    if (iters < 1) throw bad("iters must be >= 1");
  }

  /// Canonical text form; also the checkpoint header and config snapshot section.
  std::string to_text() const {
    std::ostringstream o;
    o << "c_cnn = " << c_cnn << "\nc_prior = " << c_prior << "\nlatent = " << latent << "\nhidden = " << hidden
      << "\ncost_feat = " << cost_feat << "\ndisp_feat = " << disp_feat << "\nhead_hidden = " << head_hidden
      << "\nstages = " << join_ints(stages) << "\niters = " << iters << "\ncorrelation = " << to_string(correlation)
      << "\nattention = " << to_string(attention) << "\nupsample = " << to_string(upsample)
      << "\nsuper_kernel = " << (super_kernel ? "true" : "false") << "\n";
    return o.str();
  }

  /// Reads the keys of one section; unknown keys are left to the caller's reader.
  void read(KvReader& r) {
    r.get("c_cnn", c_cnn);
    r.get("c_prior", c_prior);
    r.get("latent", latent);
    r.get("hidden", hidden);
    r.get("cost_feat", cost_feat);
    r.get("disp_feat", disp_feat);
    r.get("head_hidden", head_hidden);
    std::string s;
    if (r.has("stages")) {
      r.get("stages", s);
      stages = parse_int_list(s);
    }
    r.get("iters", iters);
    if (r.has("correlation")) {
      r.get("correlation", s);
      correlation = parse_corr_mode(s);
    }
    if (r.has("attention")) {
      r.get("attention", s);
      attention = parse_attention_mode(s);
    }
    if (r.has("upsample")) {
      r.get("upsample", s);
      upsample = parse_upsample_mode(s);
    }
    r.get("super_kernel", super_kernel);
  }

  static ModelConfig from_text(const std::string& text, const std::string& origin = "<model config>") {
    const auto sections = parse_kv(text, origin);
    ModelConfig c;
    KvReader r(sections.front(), origin);
    c.read(r);
    r.finish();
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig& o) const { return to_text() == o.to_text(); }
};

inline std::string full_mask_name(int scale) { return "mask.full" + std::to_string(scale); }
inline std::string promote_mask_name(int from, int to) {
  return "mask.promote" + std::to_string(from) + "_" + std::to_string(to);
}

template <class T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

/// Fresh parameters; deterministic in `seed`.
template <class T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.config = cfg;
  Rng rng(seed);
  const int coarsest = cfg.stages.front();
  init_encoder(m.params, "fnet", cfg.c_cnn, coarsest, rng);
  init_encoder(m.params, "cnet", cfg.c_cnn, coarsest, rng);
  if (cfg.c_prior > 0) init_prior_adapter(m.params, cfg.c_prior, rng);
  init_update_block(m.params, cfg.update_dims(), rng);
  if (cfg.upsample != UpsampleMode::bilinear) {
    const Index taps = upsample_taps(cfg.upsample);
    for (std::size_t k = 0; k < cfg.stages.size(); ++k) {
      init_mask_head(m.params, full_mask_name(cfg.stages[k]), cfg.hidden, taps, cfg.stages[k], rng);
      if (k > 0) {
        init_mask_head(m.params, promote_mask_name(cfg.stages[k - 1], cfg.stages[k]), cfg.hidden, taps,
                       cfg.stages[k - 1] / cfg.stages[k], rng);
      }
    }
  }
  return m;
}

/// Splits N iterations over stages with weights 1,...,1,2 (finest doubled);
/// floors, remainder to the finest stage.
inline std::vector<int> iteration_split(const std::vector<int>& stages, int n) {
  if (n < 1) throw std::invalid_argument("iteration count must be >= 1");
  const int k = static_cast<int>(stages.size());
  const int weight_sum = k + 1;
  std::vector<int> out(static_cast<std::size_t>(k));
  int used = 0;
  for (int i = 0; i < k; ++i) {
    const int w = i == k - 1 ? 2 : 1;
    out[static_cast<std::size_t>(i)] = n * w / weight_sum;
    used += out[static_cast<std::size_t>(i)];
  }
  out.back() += n - used;
  return out;
}

template <class T>
struct ForwardResult {
  Tensor<T> disparity;              // [B,1,T,H,W], final full-res prediction (input size)
  std::vector<Tensor<T>> iterates;  // one full-res prediction per gru_step, in order
};

/// Raw inputs for one batch: [0,1]-range frames, normalized inside.
template <class T>
struct Batch {
  Tensor<T> left, right;              // [B,3,T,H,W], normalized
  Tensor<T> prior_left, prior_right;  // [B,C_prior,T,h,w] or undefined
};

template <class T>
Tensor<T> upsample_from_hidden(const Model<T>& m, const std::string& mask, const Tensor<T>& d, const Tensor<T>& h,
                               Index alpha) {
  if (m.config.upsample == UpsampleMode::bilinear) return bilinear_upsample(d, alpha);
  return upsample_disparity(m.config.upsample, d, predict_mask(m.params, mask, h), alpha);
}

/// Cascaded coarse-to-fine matching. `iters` overrides config.iters when > 0.
///
/// Per stage: h0 from the context features, disparity zero (coarsest) or
/// promoted from the previous stage, then gru_steps with the correlation
/// schedule restarting at iteration 1. Each step re-warps the right features
/// at the current (detached) disparity.
template <class T>
ForwardResult<T> forward(const Model<T>& m, const Batch<T>& batch, int iters = 0) {
  const ModelConfig& cfg = m.config;
  const auto& stages = cfg.stages;
  const Index nh = batch.left.dim(3), nw = batch.left.dim(4);
  const Index prior_channels = batch.prior_left.defined() ? batch.prior_left.dim(1) : 0;
  if (prior_channels != cfg.c_prior) {
    throw ShapeError("forward: model expects " + std::to_string(cfg.c_prior) + " prior channels, batch has " +
                     std::to_string(prior_channels));
  }
  const int coarsest = stages.front();
  const auto left = pad_replicate(batch.left, coarsest);
  const auto right = pad_replicate(batch.right, coarsest);
  const auto feats = extract(m.params, left, right, stages, batch.prior_left, batch.prior_right);
  const auto split = iteration_split(stages, iters > 0 ? iters : cfg.iters);
  const UpdateDims dims = cfg.update_dims();

  auto to_output = [&](const Tensor<T>& full) { return slice(slice(full, 3, 0, nh), 4, 0, nw); };

  ForwardResult<T> out;
  Tensor<T> d, h;
  Tensor<T> last_full;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const int s = stages[k];
    const auto& f = feats.at(s);
    const Index fh = f.f_left.dim(3), fw = f.f_left.dim(4);
    if (k == 0) {
      d = Tensor<T>::zeros({left.dim(0), 1, left.dim(2), fh, fw});
    } else {
      const Index alpha = stages[k - 1] / s;
      d = upsample_from_hidden(m, promote_mask_name(stages[k - 1], s), d.detach(), h.detach(), alpha);
    }
    GruState<T> state{initial_hidden(f.f_ctx, m.params), d, 1};
    for (int i = 0; i < split[k]; ++i) {
      if (i > 0) state.d = state.d.detach();
      const SearchWindow window = corr_schedule(state.iter_index);
      const auto warped = warp_right(f.f_right, state.d.detach());
      const auto volume = build_cost_volume(f.f_left, warped.features, window, cfg.correlation);
      try {
        state = gru_step(state, encode_cost(volume, m.params), f.f_ctx, m.params, dims);
      } catch (const NumericError& e) {
        throw NumericError("stage 1/" + std::to_string(s) + ", iteration " + std::to_string(i + 1) + ": " + e.what());
      }
      last_full = to_output(upsample_from_hidden(m, full_mask_name(s), state.d, state.h, s));
      out.iterates.push_back(last_full);
    }
    d = state.d;
    h = state.h;
  }
  // Zero iterations in the finest stage: upsample whatever the cascade holds.
  if (out.iterates.empty() || split.back() == 0) {
    last_full = to_output(upsample_from_hidden(m, full_mask_name(stages.back()), d, h, stages.back()));
  }
  out.disparity = last_full;
  return out;
}

/// Dense gt and a per-pixel weight map (1/valid_count of its frame, or 0).
template <class T>
struct Target {
  Tensor<T> disparity;  // [B,1,T,H,W]
  Tensor<T> weight;     // [B,1,T,H,W]
};

template <class T>
Target<T> make_target(const std::vector<const DisparityVideo*>& gts) {
  const Index nb = static_cast<Index>(gts.size());
  const DisparityVideo& g0 = *gts.front();
  const Index nt = g0.frames, plane = static_cast<Index>(g0.plane());
  std::vector<T> disp(static_cast<std::size_t>(nb * nt * plane)), weight(disp.size(), T(0));
  bool any = false;
  for (Index b = 0; b < nb; ++b) {
    const DisparityVideo& g = *gts[static_cast<std::size_t>(b)];
    if (g.frames != g0.frames || g.height != g0.height || g.width != g0.width) {
      throw ShapeError("make_target: ground-truth videos differ in shape");
    }
    for (Index t = 0; t < nt; ++t) {
      Index count = 0;
      for (Index p = 0; p < plane; ++p) count += g.valid[static_cast<std::size_t>(t * plane + p)];
      if (count > 0) any = true;
      for (Index p = 0; p < plane; ++p) {
        const auto src = static_cast<std::size_t>(t * plane + p);
        const auto dst = static_cast<std::size_t>((b * nt + t) * plane + p);
        disp[dst] = static_cast<T>(g.values[src]);
        if (g.valid[src]) weight[dst] = T(1) / static_cast<T>(count);
      }
    }
  }
  if (!any) throw std::invalid_argument("loss: no valid ground-truth pixels in any frame");
  const Shape shape{nb, 1, nt, g0.height, g0.width};
  return {Tensor<T>(shape, std::move(disp)), Tensor<T>(shape, std::move(weight))};
}

/// Sum over frames and iterations of gamma^(N-n) * masked mean |gt - D_n|,
/// averaged over the batch.
template <class T>
Tensor<T> sequence_loss(const std::vector<Tensor<T>>& iterates, const Target<T>& target, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("loss: gamma must lie in (0, 1]");
  if (iterates.empty()) throw std::invalid_argument("loss: no iterates");
  const std::size_t n = iterates.size();
  Tensor<T> total;
  for (std::size_t i = 0; i < n; ++i) {
    const T w = static_cast<T>(std::pow(gamma, static_cast<double>(n - 1 - i)));
    auto term = scale(sum(mul(tcs::abs(sub(iterates[i], target.disparity)), target.weight)), w);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, T(1) / static_cast<T>(target.disparity.dim(0)));
}

}  // namespace tcs
