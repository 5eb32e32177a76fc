#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcs/keyvalue.hpp"
#include "tcs/params.hpp"
#include "tcs/pfm.hpp"
#include "tcs/sequence.hpp"

namespace tcs {

/// Per-channel normalization applied to [0,1] frames before the encoders.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

/// Frames [0,1] of several sequences -> normalized [B,3,T,H,W]. All
/// sequences must share T, H, W.
template <class T>
Tensor<T> frames_to_tensor(const std::vector<const std::vector<Image>*>& batch, const Normalization& norm) {
  const Index nb = static_cast<Index>(batch.size());
  const Index nt = static_cast<Index>(batch.front()->size());
  const Index nh = batch.front()->front().height, nw = batch.front()->front().width;
  std::vector<T> data(static_cast<std::size_t>(nb * 3 * nt * nh * nw));
  for (Index b = 0; b < nb; ++b) {
    const auto& frames = *batch[static_cast<std::size_t>(b)];
    if (static_cast<Index>(frames.size()) != nt) throw ShapeError("frames_to_tensor: sequences differ in length");
    for (Index t = 0; t < nt; ++t) {
      const Image& img = frames[static_cast<std::size_t>(t)];
      if (img.height != nh || img.width != nw) throw ShapeError("frames_to_tensor: frame sizes differ");
      for (Index c = 0; c < 3; ++c) {
        T* dst = data.data() + (((b * 3 + c) * nt + t) * nh) * nw;
        const T m = static_cast<T>(norm.mean[static_cast<std::size_t>(c)]);
        const T s = static_cast<T>(norm.std[static_cast<std::size_t>(c)]);
        for (Index p = 0; p < nh * nw; ++p) dst[p] = (static_cast<T>(img.data[static_cast<std::size_t>(p * 3 + c)]) - m) / s;
      }
    }
  }
  return Tensor<T>(Shape{nb, 3, nt, nh, nw}, std::move(data));
}

/// Replicate-pads H and W at the bottom/right up to multiples of `multiple`.
/// Runs outside the graph (inputs are never trained).
template <class T>
Tensor<T> pad_replicate(const Tensor<T>& x, Index multiple) {
  const Index nh = x.dim(3), nw = x.dim(4);
  const Index ph = (nh + multiple - 1) / multiple * multiple, pw = (nw + multiple - 1) / multiple * multiple;
  if (ph == nh && pw == nw) return x;
  const Index planes = x.dim(0) * x.dim(1) * x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(planes * ph * pw));
  const T* src = x.data().data();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < ph; ++y)
      for (Index xx = 0; xx < pw; ++xx) {
        out[static_cast<std::size_t>((p * ph + y) * pw + xx)] =
            src[(p * nh + std::min(y, nh - 1)) * nw + std::min(xx, nw - 1)];
      }
  return Tensor<T>(Shape{x.dim(0), x.dim(1), x.dim(2), ph, pw}, std::move(out));
}

// ---------------------------------------------------------------------------
// Convolutional encoder: 3x3 stride-2 stem, then per level two residual
// blocks (the first strided). Level k outputs at 1/2^(k+2).

inline constexpr std::array<Index, 5> kEncoderWidths{16, 24, 32, 48, 64};  // stem, 1/4, 1/8, 1/16, 1/32

inline int scale_level(int scale) {
  switch (scale) {
    case 4: return 0;
    case 8: return 1;
    case 16: return 2;
    case 32: return 3;
  }
  throw std::invalid_argument("feature scale must be 4, 8, 16 or 32, got " + std::to_string(scale));
}

template <class T>
void init_encoder(ParamStore<T>& ps, const std::string& p, Index c_out, int max_scale, Rng& rng) {
  add_conv(ps, p + ".stem", kEncoderWidths[0], 3, {1, 3, 3}, rng, Init::he);
  Index in = kEncoderWidths[0];
  for (int level = 0; level <= scale_level(max_scale); ++level) {
    const Index w = kEncoderWidths[static_cast<std::size_t>(level + 1)];
    const std::string l = p + ".l" + std::to_string(level);
    add_conv(ps, l + ".b0.c1", w, in, {1, 3, 3}, rng, Init::he);
    add_conv(ps, l + ".b0.c2", w, w, {1, 3, 3}, rng, Init::he);
    add_conv(ps, l + ".b0.proj", w, in, {1, 1, 1}, rng);
    add_conv(ps, l + ".b1.c1", w, w, {1, 3, 3}, rng, Init::he);
    add_conv(ps, l + ".b1.c2", w, w, {1, 3, 3}, rng, Init::he);
    add_conv(ps, l + ".out", c_out, w, {1, 1, 1}, rng);
    in = w;
  }
}

/// Returns the tap at each requested scale, [B, c_out, T, H/s, W/s].
/// Matching features (`normalize`) are instance-normalized so correlation
/// magnitudes start near unit scale.
template <class T>
std::map<int, Tensor<T>> run_encoder(const ParamStore<T>& ps, const std::string& p, const Tensor<T>& x,
                                     const std::vector<int>& scales, bool normalize = false) {
  for (int s : scales) {
    if (x.dim(3) % s != 0 || x.dim(4) % s != 0) {
      throw ShapeError("encoder: frame " + std::to_string(x.dim(3)) + "x" + std::to_string(x.dim(4)) +
                       " is not divisible by scale " + std::to_string(s));
    }
  }
  const int deepest = scale_level(*std::max_element(scales.begin(), scales.end()));
  const Triple s2{1, 2, 2};
  auto y = relu(apply_conv(ps, p + ".stem", x, s2));
  std::map<int, Tensor<T>> taps;
  for (int level = 0; level <= deepest; ++level) {
    const std::string l = p + ".l" + std::to_string(level);
    auto r = apply_conv(ps, l + ".b0.c2", relu(apply_conv(ps, l + ".b0.c1", y, s2)));
    y = relu(add(apply_conv(ps, l + ".b0.proj", y, s2), r));
    r = apply_conv(ps, l + ".b1.c2", relu(apply_conv(ps, l + ".b1.c1", y)));
    y = relu(add(y, r));
    const int scale = 4 << level;
    if (std::find(scales.begin(), scales.end(), scale) != scales.end()) {
      auto tap = apply_conv(ps, l + ".out", y);
      taps[scale] = normalize ? instance_norm(tap) : tap;
    }
  }
  return taps;
}

// ---------------------------------------------------------------------------
// Frozen prior features read from disk.

/// Directory layout:
///   manifest.txt                   channels = C, frames = T
///   left/NNNNNN_cKK.pfm            one PFM per frame per channel (same for right/)
struct PriorProvider {
  enum class Kind { none, file } kind = Kind::none;
  std::string dir;
  Index channels = 0;
  int frames = 0;

  static PriorProvider none() { return {}; }

  static PriorProvider open(const std::string& dir) {
    const std::string origin = (std::filesystem::path(dir) / "manifest.txt").string();
    const auto sections = parse_kv(read_file(origin), origin);
    PriorProvider p;
    p.kind = Kind::file;
    p.dir = dir;
    KvReader r(sections.front(), origin);
    r.get("channels", p.channels);
    r.get("frames", p.frames);
    r.finish();
    if (p.channels < 1) throw ConfigError(origin + ": channels must be >= 1");
    return p;
  }

  static std::string file_name(int t, Index channel) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d_c%02d.pfm", t, static_cast<int>(channel));
    return buf;
  }
};

inline void write_prior_manifest(const std::string& dir, Index channels, int frames) {
  write_file((std::filesystem::path(dir) / "manifest.txt").string(),
             "channels = " + std::to_string(channels) + "\nframes = " + std::to_string(frames) + "\n");
}

/// Bilinear resize with half-pixel centres and edge clamping, per channel.
inline std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w, int oh, int ow) {
  std::vector<float> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    const double sy = std::clamp((y + 0.5) * h / oh - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      const double sx = std::clamp((x + 0.5) * w / ow - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      auto v = [&](int yy, int xx) { return static_cast<double>(src[static_cast<std::size_t>(yy) * w + xx]); };
      out[static_cast<std::size_t>(y) * ow + x] = static_cast<float>(
          (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1)));
    }
  }
  return out;
}

/// One frame of prior features for `view` ("left"/"right"), resized to h x w:
/// [1, C_prior, 1, h, w]. Never requires grad. kind=none gives zero channels.
template <class T>
Tensor<T> load_prior_features(const PriorProvider& p, const std::string& view, int t, Index h, Index w) {
  if (p.kind == PriorProvider::Kind::none) return Tensor<T>(Shape{1, 0, 1, h, w});
  if (p.frames > 0 && t >= p.frames) {
    throw std::out_of_range("prior: frame " + std::to_string(t) + " beyond the " + std::to_string(p.frames) +
                            " frames listed in " + p.dir);
  }
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(p.channels * h * w));
  for (Index c = 0; c < p.channels; ++c) {
    const auto path = std::filesystem::path(p.dir) / view / PriorProvider::file_name(t, c);
    if (!std::filesystem::exists(path)) throw std::runtime_error("prior: missing file " + path.string());
    const FloatMap m = load_pfm(path.string());
    const auto resized = resize_bilinear(m.data, m.height, m.width, static_cast<int>(h), static_cast<int>(w));
    for (float v : resized) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>(Shape{1, p.channels, 1, h, w}, std::move(data));
}

/// Prior video for a whole sequence: [1, C_prior, T, h, w].
template <class T>
Tensor<T> load_prior_video(const PriorProvider& p, const std::string& view, int frames, Index h, Index w) {
  std::vector<Tensor<T>> per_frame;
  for (int t = 0; t < frames; ++t) per_frame.push_back(load_prior_features<T>(p, view, t, h, w));
  if (p.kind == PriorProvider::Kind::none) return Tensor<T>(Shape{1, 0, frames, h, w});
  return concat<T>(per_frame, 2);
}

/// Resizes a raw prior video [B,C,T,h,w] to (oh, ow) outside the graph.
template <class T>
Tensor<T> resize_prior(const Tensor<T>& prior, Index oh, Index ow) {
  const Index planes = prior.dim(0) * prior.dim(1) * prior.dim(2);
  const Index h = prior.dim(3), w = prior.dim(4);
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(planes * oh * ow));
  for (Index p = 0; p < planes; ++p) {
    std::vector<float> plane(prior.data().begin() + p * h * w, prior.data().begin() + (p + 1) * h * w);
    for (float v : resize_bilinear(plane, static_cast<int>(h), static_cast<int>(w), static_cast<int>(oh),
                                   static_cast<int>(ow))) {
      out.push_back(static_cast<T>(v));
    }
  }
  return Tensor<T>(Shape{prior.dim(0), prior.dim(1), prior.dim(2), oh, ow}, std::move(out));
}

template <class T>
void init_prior_adapter(ParamStore<T>& ps, Index channels, Rng& rng) {
  add_conv(ps, "prior.adapter.c1", channels, channels, {1, 3, 3}, rng, Init::he);
  add_conv(ps, "prior.adapter.c2", channels, channels, {1, 3, 3}, rng);
}

template <class T>
Tensor<T> adapt_prior(const ParamStore<T>& ps, const Tensor<T>& resized) {
  return apply_conv(ps, "prior.adapter.c2", relu(apply_conv(ps, "prior.adapter.c1", resized)));
}

/// Matching and context features at one scale.
template <class T>
struct FeatureMaps {
  Tensor<T> f_left, f_right, f_ctx;
  int scale = 0;
};

/// Runs both encoders once and assembles features for every scale.
/// `left`, `right`: normalized [B,3,T,H,W]. `prior_left/right`: raw prior
/// videos [B,C_prior,T,h,w] (or undefined when C_prior = 0).
template <class T>
std::map<int, FeatureMaps<T>> extract(const ParamStore<T>& ps, const Tensor<T>& left, const Tensor<T>& right,
                                      const std::vector<int>& scales, const Tensor<T>& prior_left = {},
                                      const Tensor<T>& prior_right = {}) {
  if (left.shape() != right.shape()) {
    throw ShapeError("extract: left " + to_string(left.shape()) + " vs right " + to_string(right.shape()));
  }
  const Index nb = left.dim(0);
  // Shared weights: one pass over the left/right batch concatenation.
  auto both = run_encoder(ps, "fnet", concat<T>({left, right}, 0), scales, true);
  auto ctx = run_encoder(ps, "cnet", left, scales);
  const bool use_prior = prior_left.defined() && prior_left.dim(1) > 0;
  std::map<int, FeatureMaps<T>> out;
  for (int s : scales) {
    FeatureMaps<T> f;
    f.scale = s;
    auto& tap = both.at(s);
    f.f_left = slice(tap, 0, 0, nb);
    f.f_right = slice(tap, 0, nb, nb);
    f.f_ctx = ctx.at(s);
    if (use_prior) {
      const Index h = tap.dim(3), w = tap.dim(4);
      auto pl = adapt_prior(ps, resize_prior(prior_left, h, w));
      auto pr = adapt_prior(ps, resize_prior(prior_right, h, w));
      f.f_left = concat<T>({f.f_left, pl}, 1);
      f.f_right = concat<T>({f.f_right, pr}, 1);
      f.f_ctx = concat<T>({f.f_ctx, pl}, 1);
    }
    out[s] = std::move(f);
  }
  return out;
}

}  // namespace tcs
