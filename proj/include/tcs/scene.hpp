#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcs/keyvalue.hpp"
#include "tcs/rng.hpp"
#include "tcs/sequence.hpp"

namespace tcs {

struct TextureParams {
  double smooth = 1.0;    // box-blur radius in pixels (two passes)
  double contrast = 1.0;  // output std is 0.25 * contrast around 0.5
};

/// Fronto-parallel textured rectangle. Position is given in the left image
/// at t=0 and moves by (motion_x, motion_y) pixels per frame; depth follows
/// Z(t) = depth + depth_rate * t.
struct LayerSpec {
  double x = 0, y = 0;
  int w = 16, h = 16;
  double depth = 1.0;
  double depth_rate = 0.0;
  double motion_x = 0.0;
  double motion_y = 0.0;
  TextureParams texture;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int frames = 5;
  int height = 64;
  int width = 128;
  double focal_px = 100.0;
  double baseline_m = 0.1;
  // Integer mode rounds disparity and per-frame positions to whole pixels so
  // both views sample the texture lattice exactly; subpixel mode does not.
  bool subpixel = false;
  double background_depth = 5.0;
  double background_motion_x = 0.0;
  TextureParams background_texture{2.0, 1.0};
  std::vector<LayerSpec> layers;  // near to far
};

class SceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// RGB texture on an integer lattice: uniform noise, two box-blur passes,
// standardized per channel.
struct Texture {
  int h = 0, w = 0;
  int ox = 0, oy = 0;  // lattice coordinate of element (0,0)
  std::vector<float> rgb;

  static Texture make(int h, int w, int ox, int oy, const TextureParams& p, Rng& rng) {
    Texture t{h, w, ox, oy, std::vector<float>(static_cast<std::size_t>(h) * w * 3)};
    const int r = std::max(0, static_cast<int>(std::lround(p.smooth)));
    std::vector<double> a(static_cast<std::size_t>(h) * w), b(a.size());
    for (int c = 0; c < 3; ++c) {
      for (auto& v : a) v = rng.uniform();
      for (int pass = 0; pass < 2 && r > 0; ++pass) {
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int k = -r; k <= r; ++k) s += a[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
            b[static_cast<std::size_t>(y) * w + x] = s / (2 * r + 1);
          }
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int k = -r; k <= r; ++k) s += b[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
            a[static_cast<std::size_t>(y) * w + x] = s / (2 * r + 1);
          }
      }
      double mean = 0, var = 0;
      for (double v : a) mean += v;
      mean /= static_cast<double>(a.size());
      for (double v : a) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(a.size())) + 1e-12;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = 0.5 + 0.25 * p.contrast * (a[i] - mean) / sd;
        t.rgb[i * 3 + static_cast<std::size_t>(c)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    return t;
  }

  float texel(int u, int v, int c) const {
    const int x = std::clamp(u - ox, 0, w - 1), y = std::clamp(v - oy, 0, h - 1);
    return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)];
  }

  // Bilinear lookup at lattice coordinates (u, v).
  float sample(double u, double v, int c) const {
    const double fu = std::floor(u), fv = std::floor(v);
    const int iu = static_cast<int>(fu), iv = static_cast<int>(fv);
    const double au = u - fu, av = v - fv;
    if (au == 0.0 && av == 0.0) return texel(iu, iv, c);
    const double top = (1 - au) * texel(iu, iv, c) + au * texel(iu + 1, iv, c);
    const double bot = (1 - au) * texel(iu, iv + 1, c) + au * texel(iu + 1, iv + 1, c);
    return static_cast<float>((1 - av) * top + av * bot);
  }
};

}  // namespace detail

/// Per-frame placement of every surface. Surface 0..L-1 are layers, L is the background.
struct ScenePose {
  std::vector<double> disparity;  // per surface
  std::vector<double> left_x;     // layer left edge in the left image
  std::vector<double> top_y;
  double background_x = 0.0;
};

inline double depth_at(const LayerSpec& l, int t) { return l.depth + l.depth_rate * t; }

inline void validate_scene(const SceneSpec& s) {
  if (s.frames < 1 || s.height < 1 || s.width < 1) throw SceneError("scene: frames, height and width must be positive");
  if (!(s.focal_px > 0) || !(s.baseline_m > 0)) throw SceneError("scene: focal_px and baseline_m must be positive");
  if (!(s.background_depth > 0)) throw SceneError("scene: background depth must be positive");
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    if (l.w < 1 || l.h < 1) throw SceneError("scene: layer " + std::to_string(i) + " has empty extent");
    for (int t = 0; t < s.frames; ++t) {
      const double z = depth_at(l, t);
      if (!(z > 0)) {
        throw SceneError("scene: layer " + std::to_string(i) + " depth " + std::to_string(z) + " at frame " +
                         std::to_string(t) + " is not positive");
      }
      const double next = i + 1 < s.layers.size() ? depth_at(s.layers[i + 1], t) : s.background_depth;
      if (!(z < next)) {
        throw SceneError("scene: layer " + std::to_string(i) + " is not nearer than the surface behind it at frame " +
                         std::to_string(t) + " (layers must be listed near to far)");
      }
    }
  }
}

inline ScenePose scene_pose(const SceneSpec& s, int t) {
  const double fb = s.focal_px * s.baseline_m;
  auto snap = [&](double v) { return s.subpixel ? v : std::round(v); };
  ScenePose p;
  for (const auto& l : s.layers) {
    p.disparity.push_back(snap(fb / depth_at(l, t)));
    p.left_x.push_back(snap(l.x + l.motion_x * t));
    p.top_y.push_back(snap(l.y + l.motion_y * t));
  }
  p.disparity.push_back(snap(fb / s.background_depth));
  p.background_x = snap(s.background_motion_x * t);
  return p;
}

/// Index of the surface seen at pixel (x, y) of view `view` (0 left, 1 right),
/// plus its texture coordinates.
struct Hit {
  int surface;
  double u, v;
};

inline Hit cast_ray(const SceneSpec& s, const ScenePose& p, int view, int x, int y) {
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const double u = x - (p.left_x[i] - view * p.disparity[i]);
    const double v = y - p.top_y[i];
    if (u >= 0 && u < s.layers[i].w && v >= 0 && v < s.layers[i].h) return {static_cast<int>(i), u, v};
  }
  const std::size_t bg = s.layers.size();
  return {static_cast<int>(bg), x - (p.background_x - view * p.disparity[bg]), static_cast<double>(y)};
}

/// Renders both views and exact ground truth. Pixels whose match in the right
/// view is occluded or outside the image are invalid.
inline StereoSequence generate_scene(const SceneSpec& s) {
  validate_scene(s);
  Rng rng(s.seed);
  std::vector<detail::Texture> tex;
  for (const auto& l : s.layers) tex.push_back(detail::Texture::make(l.h + 1, l.w + 1, 0, 0, l.texture, rng));
  {
    // Background lattice covers every coordinate either view can reach.
    double max_shift = 0;
    for (int t = 0; t < s.frames; ++t) {
      const auto p = scene_pose(s, t);
      max_shift = std::max(max_shift, std::abs(p.background_x) + p.disparity.back());
    }
    const int pad = static_cast<int>(std::ceil(max_shift)) + 2;
    tex.push_back(detail::Texture::make(s.height + 2, s.width + 2 * pad, -pad, 0, s.background_texture, rng));
  }

  StereoSequence seq;
  seq.focal_px = s.focal_px;
  seq.baseline_m = s.baseline_m;
  DisparityVideo gt(s.frames, s.height, s.width);
  for (int t = 0; t < s.frames; ++t) {
    const auto pose = scene_pose(s, t);
    Image views[2] = {Image(s.height, s.width), Image(s.height, s.width)};
    std::vector<int> right_ids(static_cast<std::size_t>(s.height) * s.width);
    for (int view = 0; view < 2; ++view) {
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const Hit hit = cast_ray(s, pose, view, x, y);
          const auto& tx = tex[static_cast<std::size_t>(hit.surface)];
          // Stored on the 8-bit grid so PNG round trips are exact.
          for (int c = 0; c < 3; ++c) views[view].at(y, x, c) = static_cast<float>(quantize8(tx.sample(hit.u, hit.v, c))) / 255.0f;
          if (view == 1) right_ids[static_cast<std::size_t>(y) * s.width + x] = hit.surface;
        }
    }
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const Hit hit = cast_ray(s, pose, 0, x, y);
        const double d = pose.disparity[static_cast<std::size_t>(hit.surface)];
        const double xr = x - d;
        bool ok = xr >= 0 && xr <= s.width - 1;
        if (ok) {
          const int x0 = static_cast<int>(std::floor(xr)), x1 = static_cast<int>(std::ceil(xr));
          ok = right_ids[static_cast<std::size_t>(y) * s.width + x0] == hit.surface &&
               right_ids[static_cast<std::size_t>(y) * s.width + x1] == hit.surface;
        }
        gt.at(t, y, x) = static_cast<float>(d);
        gt.valid[gt.index(t, y, x)] = ok ? 1 : 0;
      }
    seq.left.push_back(std::move(views[0]));
    seq.right.push_back(std::move(views[1]));
  }
  seq.gt = std::move(gt);
  return seq;
}

/// Ranges for random_scene: disparities drawn in [min_disparity, max_disparity].
struct SceneRanges {
  int frames = 5;
  int height = 64;
  int width = 128;
  double min_disparity = 1.0;
  double max_disparity = 16.0;
  int min_layers = 1;
  int max_layers = 3;
  double max_motion = 2.0;         // px per frame, each axis
  double max_disparity_rate = 1.0; // px per frame
  bool subpixel = false;
};

/// Draws a valid layered scene. Background sits near the low end of the range,
/// layers are sorted near to far and kept strictly ordered over time.
inline SceneSpec random_scene(std::uint64_t seed, const SceneRanges& r = {}) {
  Rng rng(seed ^ 0x5CE7E5EEDULL);
  SceneSpec s;
  s.seed = seed;
  s.frames = r.frames;
  s.height = r.height;
  s.width = r.width;
  s.subpixel = r.subpixel;
  const double fb = s.focal_px * s.baseline_m;
  const double span = r.max_disparity - r.min_disparity;
  const double bg_d = rng.uniform(r.min_disparity, r.min_disparity + 0.25 * span);
  s.background_depth = fb / bg_d;
  s.background_motion_x = std::round(rng.uniform(-1.0, 1.0));
  s.background_texture = {rng.uniform(1.0, 2.5), rng.uniform(0.8, 1.2)};
  const int n = r.min_layers + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.max_layers - r.min_layers + 1)));
  const double last = static_cast<double>(std::max(0, r.frames - 1));
  // Disparities at t=0 and t=last; keep every layer at least 1.5 px above the
  // one behind it throughout so ordering holds after rounding.
  std::vector<std::pair<double, double>> ends;
  for (int i = 0; i < n; ++i) {
    const double lo = bg_d + 1.5, hi = r.max_disparity;
    const double d0 = rng.uniform(lo, hi);
    const double rate = rng.uniform(-r.max_disparity_rate, r.max_disparity_rate);
    ends.emplace_back(d0, std::clamp(d0 + rate * last, lo, hi));
  }
  std::sort(ends.begin(), ends.end(), [](auto a, auto b) { return a.first + a.second > b.first + b.second; });
  for (std::size_t i = 1; i < ends.size(); ++i) {
    ends[i].first = std::min(ends[i].first, ends[i - 1].first - 1.5);
    ends[i].second = std::min(ends[i].second, ends[i - 1].second - 1.5);
  }
  for (const auto& [d0, d1] : ends) {
    if (std::min(d0, d1) < bg_d + 1.5) continue;
    LayerSpec l;
    l.w = 16 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, r.width / 3))));
    l.h = 12 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, r.height / 2))));
    l.x = std::round(rng.uniform(0.0, std::max(1.0, r.width - 0.5 * l.w)));
    l.y = std::round(rng.uniform(-0.25 * l.h, std::max(1.0, r.height - 0.75 * l.h)));
    // Depth linear in time: Z(t) = fb/d0 + rate*t reaches fb/d1 at the last frame.
    l.depth = fb / d0;
    l.depth_rate = last > 0 ? (fb / d1 - fb / d0) / last : 0.0;
    l.motion_x = std::round(rng.uniform(-r.max_motion, r.max_motion));
    l.motion_y = std::round(rng.uniform(-0.5 * r.max_motion, 0.5 * r.max_motion));
    l.texture = {rng.uniform(0.5, 1.5), rng.uniform(0.8, 1.2)};
    s.layers.push_back(l);
  }
  validate_scene(s);
  return s;
}

/// Line-oriented scene file:
///   seed = 7            # top-level keys: seed frames height width focal_px baseline_m subpixel
///   [background]        # depth motion_x smooth contrast
///   [layer]             # x y w h depth depth_rate motion_x motion_y smooth contrast (repeatable, near to far)
inline SceneSpec parse_scene_spec(const std::string& text, const std::string& origin = "<scene>") {
  SceneSpec s;
  const auto sections = parse_kv(text, origin);
  for (const auto& sec : sections) {
    KvReader r(sec, origin);
    if (sec.name.empty()) {
      r.get("seed", s.seed);
      r.get("frames", s.frames);
      r.get("height", s.height);
      r.get("width", s.width);
      r.get("focal_px", s.focal_px);
      r.get("baseline_m", s.baseline_m);
      r.get("subpixel", s.subpixel);
    } else if (sec.name == "background") {
      r.get("depth", s.background_depth);
      r.get("motion_x", s.background_motion_x);
      r.get("smooth", s.background_texture.smooth);
      r.get("contrast", s.background_texture.contrast);
    } else if (sec.name == "layer") {
      LayerSpec l;
      r.get("x", l.x);
      r.get("y", l.y);
      r.get("w", l.w);
      r.get("h", l.h);
      r.get("depth", l.depth);
      r.get("depth_rate", l.depth_rate);
      r.get("motion_x", l.motion_x);
      r.get("motion_y", l.motion_y);
      r.get("smooth", l.texture.smooth);
      r.get("contrast", l.texture.contrast);
      s.layers.push_back(l);
    } else {
      throw ConfigError(origin + ":" + std::to_string(sec.line) + ": unknown section [" + sec.name + "]");
    }
    r.finish();
  }
  validate_scene(s);
  return s;
}

inline std::string format_scene_spec(const SceneSpec& s) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "seed = " << s.seed << "\nframes = " << s.frames << "\nheight = " << s.height << "\nwidth = " << s.width
    << "\nfocal_px = " << s.focal_px << "\nbaseline_m = " << s.baseline_m
    << "\nsubpixel = " << (s.subpixel ? "true" : "false") << "\n\n[background]\ndepth = " << s.background_depth
    << "\nmotion_x = " << s.background_motion_x << "\nsmooth = " << s.background_texture.smooth
    << "\ncontrast = " << s.background_texture.contrast << "\n";
  for (const auto& l : s.layers) {
    o << "\n[layer]\nx = " << l.x << "\ny = " << l.y << "\nw = " << l.w << "\nh = " << l.h << "\ndepth = " << l.depth
      << "\ndepth_rate = " << l.depth_rate << "\nmotion_x = " << l.motion_x << "\nmotion_y = " << l.motion_y
      << "\nsmooth = " << l.texture.smooth << "\ncontrast = " << l.texture.contrast << "\n";
  }
  return o.str();
}

}  // namespace tcs
