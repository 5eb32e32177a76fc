#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tcs/checkpoint.hpp"
#include "tcs/metrics.hpp"
#include "tcs/scene.hpp"

namespace tcs {

struct TrainConfig {
  int steps = 3000;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double pct_start = 0.05;  // fraction of steps spent warming up
  double clip = 1.0;
  double gamma = 0.9;
  int crop_h = 32;  // 0 = full frame
  int crop_w = 64;
  int batch = 1;
  int iters = 6;    // N during training
  std::uint64_t seed = 0;
  int checkpoint_every = 500;  // 0 = only at the end
  int log_every = 100;

  void validate() const {
    auto bad = [](const std::string& m) { return ConfigError("train: " + m); };
    if (steps < 0) throw bad("steps must be >= 0");
    if (!(lr >= 0)) throw bad("lr must be >= 0");
    if (!(gamma > 0 && gamma <= 1)) throw bad("gamma must lie in (0, 1]");
    if (!(clip > 0)) throw bad("clip must be > 0");
    if (batch < 1 || iters < 1) throw bad("batch and iters must be >= 1");
    if (crop_h < 0 || crop_w < 0) throw bad("crop must be >= 0");
    if (!(pct_start >= 0 && pct_start < 1)) throw bad("pct_start must lie in [0, 1)");
  }
};

/// One-cycle schedule: linear warm-up from lr/25 to lr over pct_start of the
/// run, then linear decay to lr/1e4 (the final factor used by the common
/// one-cycle implementation).
inline double one_cycle_lr(const TrainConfig& c, int step) {
  if (c.lr == 0.0) return 0.0;
  const double total = std::max(1, c.steps);
  const double warm = std::max(1.0, c.pct_start * total);
  const double lo = c.lr / 25.0, end = lo / 1e4;
  if (step < warm) return lo + (c.lr - lo) * step / warm;
  const double frac = std::min(1.0, (step - warm) / std::max(1.0, total - warm));
  return c.lr + (end - c.lr) * frac;
}

/// Decoupled-weight-decay Adam over a ParamStore.
template <class T>
class AdamW {
 public:
  AdamW(const ParamStore<T>& ps, const TrainConfig& c) : cfg_(c) {
    for (const auto& [name, t] : ps.items()) {
      m_[name].assign(static_cast<std::size_t>(t.numel()), 0.0);
      v_[name].assign(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }

  /// Applies one update with `lr`, given already clipped gradients.
  void step(ParamStore<T>& ps, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_), bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, p] : ps.items()) {
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      const auto g = p.grad();
      auto x = p.mutable_data();
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
        if (lr == 0.0) continue;
        const double upd = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * x[i];
        x[i] = static_cast<T>(x[i] - lr * upd);
      }
    }
  }

 private:
  TrainConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : ps.items()) {
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& [_, p] : ps.items()) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Data

/// Deterministic stream of training sequences, indexed by sample number.
using SampleSource = std::function<StereoSequence(std::uint64_t index)>;

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E5F5ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Fresh random scene per sample. Held-out sets draw from a disjoint stream.
inline SampleSource synthetic_source(std::uint64_t seed, SceneRanges ranges = {}) {
  return [seed, ranges](std::uint64_t index) { return generate_scene(random_scene(mix_seed(seed, index), ranges)); };
}

inline std::vector<StereoSequence> heldout_scenes(std::uint64_t seed, int count, SceneRanges ranges = {}) {
  auto src = synthetic_source(mix_seed(seed, 0xE7A1ULL) ^ 0xFFFF0000ULL, ranges);
  std::vector<StereoSequence> out;
  for (int i = 0; i < count; ++i) out.push_back(src(static_cast<std::uint64_t>(i)));
  return out;
}

/// Crops every frame (and gt) to the window at (y0, x0). Gt pixels whose
/// match x - d falls left of the window become invalid.
inline StereoSequence crop_sequence(const StereoSequence& s, int y0, int x0, int h, int w) {
  auto crop = [&](const Image& im) {
    Image c;
    c.height = h;
    c.width = w;
    c.data.resize(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < 3; ++k) c.data[(static_cast<std::size_t>(y) * w + x) * 3 + k] = im.at(y0 + y, x0 + x, k);
      }
    }
    return c;
  };
  StereoSequence out;
  out.focal_px = s.focal_px;
  out.baseline_m = s.baseline_m;
  for (const auto& im : s.left) out.left.push_back(crop(im));
  for (const auto& im : s.right) out.right.push_back(crop(im));
  if (s.gt) {
    DisparityVideo g(s.frames(), h, w);
    for (int t = 0; t < s.frames(); ++t) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float d = s.gt->at(t, y0 + y, x0 + x);
          g.at(t, y, x) = d;
          g.valid[g.index(t, y, x)] = s.gt->is_valid(t, y0 + y, x0 + x) && x - d >= 0.0f;
        }
      }
    }
    out.gt = std::move(g);
  }
  return out;
}

template <class T>
Batch<T> make_batch(const std::vector<const StereoSequence*>& seqs, const Normalization& norm) {
  std::vector<const std::vector<Image>*> l, r;
  for (const auto* s : seqs) {
    l.push_back(&s->left);
    r.push_back(&s->right);
  }
  Batch<T> b;
  b.left = frames_to_tensor<T>(l, norm);
  b.right = frames_to_tensor<T>(r, norm);
  return b;
}

inline DisparityVideo to_video(std::span<const float> values, int frames, int h, int w) {
  DisparityVideo v(frames, h, w);
  std::copy(values.begin(), values.end(), v.values.begin());
  return v;
}

/// Inference on a whole sequence in non-overlapping chunks of `chunk` frames.
/// `prior` optionally supplies [1,C_prior,t,h,w] videos for a frame range.
template <class T>
DisparityVideo predict(const Model<T>& m, const StereoSequence& seq, int iters, int chunk = 20,
                       const std::function<std::pair<Tensor<T>, Tensor<T>>(int, int)>& prior = nullptr) {
  NoGradGuard no_grad;
  if (chunk < 1) throw std::invalid_argument("predict: chunk length must be >= 1");
  seq.validate();
  const int nt = seq.frames(), nh = seq.height(), nw = seq.width();
  DisparityVideo out(nt, nh, nw);
  for (int t0 = 0; t0 < nt; t0 += chunk) {
    const int len = std::min(chunk, nt - t0);
    std::vector<Image> l(seq.left.begin() + t0, seq.left.begin() + t0 + len);
    std::vector<Image> r(seq.right.begin() + t0, seq.right.begin() + t0 + len);
    Batch<T> b;
    b.left = frames_to_tensor<T>({&l}, m.config.norm);
    b.right = frames_to_tensor<T>({&r}, m.config.norm);
    if (prior) std::tie(b.prior_left, b.prior_right) = prior(t0, len);
    const auto res = forward(m, b, iters);
    const auto d = res.disparity.data();
    for (std::size_t i = 0; i < d.size(); ++i) out.values[static_cast<std::size_t>(t0) * out.plane() + i] = static_cast<float>(d[i]);
  }
  return out;
}

template <class T>
EvalReport evaluate_model(const Model<T>& m, const std::vector<StereoSequence>& seqs, int iters,
                          std::vector<double> thresholds = {1.0, 3.0}) {
  EvalAccumulator acc(std::move(thresholds));
  for (const auto& s : seqs) {
    if (!s.gt) throw std::invalid_argument("evaluate_model: sequence without ground truth");
    acc.add(predict(m, s, iters), *s.gt);
  }
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainHooks {
  std::string checkpoint_path;  // written every K steps and at the end ("" = never)
  std::string csv_path;         // step,loss,lr ("" = none)
  std::function<void(const LossRecord&)> on_log;  // every log_every steps
};

/// Trains in place. Deterministic for a fixed (model init, cfg.seed, source).
/// On a non-finite loss or gradient the pre-step parameters are written to
/// the checkpoint path and TrainingAborted is thrown.
template <class T>
std::vector<LossRecord> train(Model<T>& m, const TrainConfig& cfg, const SampleSource& source,
                              const TrainHooks& hooks = {}) {
  cfg.validate();
  AdamW<T> opt(m.params, cfg);
  std::vector<LossRecord> curve;
  std::ofstream csv;
  if (!hooks.csv_path.empty()) {
    csv.open(hooks.csv_path);
    if (!csv) throw std::runtime_error("cannot write '" + hooks.csv_path + "'");
    csv << "step,loss,lr\n";
    csv.precision(9);
  }
  auto save = [&]() {
    if (!hooks.checkpoint_path.empty()) save_checkpoint(m, hooks.checkpoint_path);
  };
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, 0xC0FFEEULL + static_cast<std::uint64_t>(step)));
    std::vector<StereoSequence> samples;
    for (int b = 0; b < cfg.batch; ++b) {
      StereoSequence s = source(static_cast<std::uint64_t>(step) * cfg.batch + b);
      if (!s.gt) throw std::invalid_argument("train: sample without ground truth");
      const int ch = cfg.crop_h ? std::min(cfg.crop_h, s.height()) : s.height();
      const int cw = cfg.crop_w ? std::min(cfg.crop_w, s.width()) : s.width();
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.height() - ch + 1)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.width() - cw + 1)));
      samples.push_back(crop_sequence(s, y0, x0, ch, cw));
    }
    std::vector<const StereoSequence*> ptrs;
    std::vector<const DisparityVideo*> gts;
    for (const auto& s : samples) {
      ptrs.push_back(&s);
      gts.push_back(&*s.gt);
    }
    const double lr = one_cycle_lr(cfg, step);
    m.params.zero_grad();
    double value = 0.0;
    try {
      const auto res = forward(m, make_batch<T>(ptrs, m.config.norm), cfg.iters);
      auto loss = sequence_loss(res.iterates, make_target<T>(gts), cfg.gamma);
      value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) throw NumericError("non-finite loss " + std::to_string(value));
      loss.backward();
      const double norm = clip_grad_norm(m.params, cfg.clip);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    } catch (const NumericError& e) {
      save();
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + e.what() +
                            (hooks.checkpoint_path.empty() ? "" : "; last good parameters in " + hooks.checkpoint_path));
    }
    opt.step(m.params, lr);
    const LossRecord rec{step, value, lr};
    curve.push_back(rec);
    if (csv) csv << rec.step << ',' << rec.loss << ',' << rec.lr << '\n';
    if (hooks.on_log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) hooks.on_log(rec);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) save();
  }
  m.params.zero_grad();
  save();
  return curve;
}

}  // namespace tcs
