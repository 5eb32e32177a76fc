#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "tcs/train.hpp"

namespace tcs {

struct EvalConfig {
  int iters = 20;   // N at evaluation
  int chunk = 20;   // frames per forward pass
  int heldout = 8;  // synthetic held-out sequences scored by train/ablate
  std::vector<double> thresholds{1.0, 3.0};
};

/// Everything a run needs. Text form: top-level `seed` and `out`, then one
/// section per module:
///
///   seed = 0
///   out = runs/toy
///   [model]   c_cnn, c_prior, latent, hidden, ..., stages, iters, correlation, attention, upsample
///   [train]   steps, lr, weight_decay, pct_start, clip, gamma, crop_h, crop_w, batch, iters, checkpoint_every, log_every
///   [data]    frames, height, width, min_disparity, max_disparity, min_layers, max_layers, max_motion,
///             max_disparity_rate, subpixel
///   [eval]    iters, chunk, heldout, thresholds
///   [prior]   kind (none | file), dir
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  ModelConfig model;
  TrainConfig train;
  SceneRanges data;
  EvalConfig eval;
  std::string prior_kind = "none";
  std::string prior_dir;

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>") {
    RunConfig c;
    for (const auto& s : parse_kv(text, origin)) {
      KvReader r(s, origin);
      if (s.name.empty()) {
        r.get("seed", c.seed);
        r.get("out", c.out);
      } else if (s.name == "model") {
        c.model.read(r);
      } else if (s.name == "train") {
        auto& t = c.train;
        r.get("steps", t.steps);
        r.get("lr", t.lr);
        r.get("weight_decay", t.weight_decay);
        r.get("pct_start", t.pct_start);
        r.get("clip", t.clip);
        r.get("gamma", t.gamma);
        r.get("crop_h", t.crop_h);
        r.get("crop_w", t.crop_w);
        r.get("batch", t.batch);
        r.get("iters", t.iters);
        r.get("checkpoint_every", t.checkpoint_every);
        r.get("log_every", t.log_every);
      } else if (s.name == "data") {
        auto& d = c.data;
        r.get("frames", d.frames);
        r.get("height", d.height);
        r.get("width", d.width);
        r.get("min_disparity", d.min_disparity);
        r.get("max_disparity", d.max_disparity);
        r.get("min_layers", d.min_layers);
        r.get("max_layers", d.max_layers);
        r.get("max_motion", d.max_motion);
        r.get("max_disparity_rate", d.max_disparity_rate);
        r.get("subpixel", d.subpixel);
      } else if (s.name == "eval") {
        r.get("iters", c.eval.iters);
        r.get("chunk", c.eval.chunk);
        r.get("heldout", c.eval.heldout);
        if (r.has("thresholds")) {
          std::string v;
          r.get("thresholds", v);
          c.eval.thresholds = parse_double_list(v);
        }
      } else if (s.name == "prior") {
        r.get("kind", c.prior_kind);
        r.get("dir", c.prior_dir);
      } else {
        throw ConfigError(origin + ":" + std::to_string(s.line) + ": unknown section [" + s.name + "]");
      }
      r.finish();
    }
    return c;
  }

  void validate() const {
    model.validate();
    train.validate();
    if (eval.iters < 1 || eval.chunk < 1 || eval.heldout < 0) throw ConfigError("eval: iters, chunk must be >= 1");
    if (data.frames < 1 || data.height < 1 || data.width < 1) throw ConfigError("data: frames, height, width must be >= 1");
    if (prior_kind != "none" && prior_kind != "file") throw ConfigError("prior: kind must be none or file");
    if (prior_kind == "file" && prior_dir.empty()) throw ConfigError("prior: kind = file needs dir");
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "seed = " << seed << "\nout = " << out << "\n\n[model]\n" << model.to_text();
    const auto& t = train;
    o << "\n[train]\nsteps = " << t.steps << "\nlr = " << t.lr << "\nweight_decay = " << t.weight_decay
      << "\npct_start = " << t.pct_start << "\nclip = " << t.clip << "\ngamma = " << t.gamma << "\ncrop_h = " << t.crop_h
      << "\ncrop_w = " << t.crop_w << "\nbatch = " << t.batch << "\niters = " << t.iters
      << "\ncheckpoint_every = " << t.checkpoint_every << "\nlog_every = " << t.log_every << "\n";
    const auto& d = data;
    o << "\n[data]\nframes = " << d.frames << "\nheight = " << d.height << "\nwidth = " << d.width
      << "\nmin_disparity = " << d.min_disparity << "\nmax_disparity = " << d.max_disparity
      << "\nmin_layers = " << d.min_layers << "\nmax_layers = " << d.max_layers << "\nmax_motion = " << d.max_motion
      << "\nmax_disparity_rate = " << d.max_disparity_rate << "\nsubpixel = " << (d.subpixel ? "true" : "false") << "\n";
    o << "\n[eval]\niters = " << eval.iters << "\nchunk = " << eval.chunk << "\nheldout = " << eval.heldout
      << "\nthresholds = ";
    for (std::size_t i = 0; i < eval.thresholds.size(); ++i) o << (i ? "," : "") << eval.thresholds[i];
    o << "\n\n[prior]\nkind = " << prior_kind << "\n";
    if (!prior_dir.empty()) o << "dir = " << prior_dir << "\n";
    return o.str();
  }

  static std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(item, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (item.empty() || used != item.size()) throw ConfigError("bad number list '" + text + "'");
      out.push_back(v);
    }
    return out;
  }
};

}  // namespace tcs
