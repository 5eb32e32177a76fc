// Command-line front end: generate | train | infer | eval | ablate.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include <Eigen/Core>

#include "tcs/tcs.hpp"

namespace fs = std::filesystem;
using namespace tcs;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> steps;
  std::optional<double> lr;
  std::optional<int> iters;
  std::optional<int> frames;
  std::optional<std::string> stages, attention, upsample, correlation, prior;
  bool export_ply = false;
};

void add_common(CLI::App* c, Flags& f) {
  c->add_option("--config", f.config, "key=value run configuration file");
  c->add_option("--seed", f.seed, "random seed");
  c->add_option("--out", f.out, "output directory");
  c->add_option("--steps", f.steps, "training steps");
  c->add_option("--lr", f.lr, "peak learning rate");
  c->add_option("--iters", f.iters, "refinement iterations N (train and eval)");
  c->add_option("--frames", f.frames, "frames per sequence / inference chunk");
  c->add_option("--stages", f.stages, "cascade scales, e.g. 16,8,4");
  c->add_option("--attention", f.attention, "none | temporal | temporal+spatial");
  c->add_option("--upsample", f.upsample, "bilinear | convex | temporal_convex");
  c->add_option("--correlation", f.correlation, "local | all_pairs");
  c->add_option("--prior", f.prior, "none, or a prior feature directory");
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) c = RunConfig::parse(read_file(f.config), f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.steps) c.train.steps = *f.steps;
  if (f.lr) c.train.lr = *f.lr;
  if (f.iters) {
    c.train.iters = *f.iters;
    c.eval.iters = *f.iters;
    c.model.iters = *f.iters;
  }
  if (f.frames) {
    c.data.frames = *f.frames;
    c.eval.chunk = *f.frames;
  }
  if (f.stages) c.model.stages = parse_int_list(*f.stages);
  if (f.attention) c.model.attention = parse_attention_mode(*f.attention);
  if (f.upsample) c.model.upsample = parse_upsample_mode(*f.upsample);
  if (f.correlation) c.model.correlation = parse_corr_mode(*f.correlation);
  if (f.prior) {
    if (*f.prior == "none") {
      c.prior_kind = "none";
      c.prior_dir.clear();
    } else {
      c.prior_kind = "file";
      c.prior_dir = *f.prior;
    }
  }
  c.validate();
  return c;
}

void prepare_out(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + c.out + "': " + ec.message());
  write_file((fs::path(c.out) / "config.resolved.txt").string(), c.to_text());
}

PriorProvider open_prior(const RunConfig& c) {
  return c.prior_kind == "file" ? PriorProvider::open(c.prior_dir) : PriorProvider::none();
}

void print_report(const std::string& label, const EvalReport& r) {
  std::cout << label << ": EPE " << r.epe << " px, TEPE " << r.tepe << " px";
  for (const auto& [n, v] : r.delta_t) std::cout << ", delta_" << EvalReport::format_threshold(n) << "px " << v;
  std::cout << std::endl;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Flags& f, const std::string& spec_file, int count) {
  RunConfig c = resolve(f);
  prepare_out(c);
  if (count < 1) throw std::invalid_argument("--count must be >= 1");
  for (int i = 0; i < count; ++i) {
    SceneSpec spec;
    if (!spec_file.empty()) {
      spec = parse_scene_spec(read_file(spec_file), spec_file);
      if (f.seed) spec.seed = c.seed + static_cast<std::uint64_t>(i);
      if (f.frames) spec.frames = c.data.frames;
    } else {
      spec = random_scene(mix_seed(c.seed, static_cast<std::uint64_t>(i)), c.data);
    }
    const fs::path dir = count == 1 ? fs::path(c.out) : fs::path(c.out) / ("seq_" + detail::frame_name(i, ""));
    save_sequence(dir.string(), generate_scene(spec));
    write_file((dir / "scene.txt").string(), format_scene_spec(spec));
    std::cout << "wrote " << spec.frames << " frames to " << dir.string() << std::endl;
  }
  return 0;
}

EvalReport train_and_score(Model<float>& m, const RunConfig& c, const fs::path& dir, bool verbose) {
  const auto heldout = heldout_scenes(c.seed, std::max(1, c.eval.heldout), c.data);
  TrainHooks hooks;
  hooks.checkpoint_path = (dir / "model.ckpt").string();
  hooks.csv_path = (dir / "loss.csv").string();
  const auto start = std::chrono::steady_clock::now();
  if (verbose) {
    hooks.on_log = [&](const LossRecord& r) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "step " << r.step << "  loss " << r.loss << "  lr " << r.lr << "  (" << s << " s)" << std::endl;
    };
  }
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  train(m, tc, synthetic_source(c.seed, c.data), hooks);
  const auto report = evaluate_model(m, heldout, c.eval.iters, c.eval.thresholds);
  write_file((dir / "heldout_report.csv").string(), report.to_csv());
  return report;
}

int cmd_train(const Flags& f) {
  RunConfig c = resolve(f);
  if (c.prior_kind != "none") {
    throw std::invalid_argument("train draws synthetic scenes, which carry no prior features; use --prior none");
  }
  prepare_out(c);
  Model<float> m = init_model<float>(c.model, c.seed);
  std::cout << "model: " << m.params.total_elements() << " parameters, stages " << join_ints(c.model.stages)
            << ", " << c.train.steps << " steps" << std::endl;
  const auto report = train_and_score(m, c, c.out, true);
  print_report("held-out", report);
  return 0;
}

int cmd_infer(const Flags& f, const std::string& checkpoint, const std::string& seq_dir) {
  if (f.stages || f.attention || f.upsample || f.correlation) {
    throw std::invalid_argument("infer takes the architecture from the checkpoint; drop the model flags");
  }
  RunConfig c = resolve(f);
  Model<float> m = load_checkpoint<float>(checkpoint);
  c.model = m.config;
  prepare_out(c);
  const StereoSequence seq = load_sequence(seq_dir);
  if (f.export_ply && !(seq.focal_px > 0 && seq.baseline_m > 0)) {
    throw std::invalid_argument("--export-ply needs focal_px and baseline_m in " + seq_dir + "/manifest.txt");
  }
  const PriorProvider prior = open_prior(c);
  if (prior.channels != m.config.c_prior) {
    throw std::invalid_argument("checkpoint expects " + std::to_string(m.config.c_prior) + " prior channels, provider has " +
                                std::to_string(prior.channels));
  }
  std::function<std::pair<Tensor<float>, Tensor<float>>(int, int)> prior_fn;
  if (prior.kind == PriorProvider::Kind::file) {
    prior_fn = [&](int t0, int len) {
      std::vector<Tensor<float>> l, r;
      for (int t = t0; t < t0 + len; ++t) {
        l.push_back(load_prior_features<float>(prior, "left", t, seq.height(), seq.width()));
        r.push_back(load_prior_features<float>(prior, "right", t, seq.height(), seq.width()));
      }
      return std::make_pair(concat<float>(l, 2), concat<float>(r, 2));
    };
  }
  const DisparityVideo d = predict(m, seq, c.eval.iters, c.eval.chunk, prior_fn);
  const fs::path out(c.out);
  fs::create_directories(out / "disp");
  if (f.export_ply) fs::create_directories(out / "ply");
  for (int t = 0; t < d.frames; ++t) {
    FloatMap map{d.height, d.width, std::vector<float>(d.values.begin() + t * d.plane(), d.values.begin() + (t + 1) * d.plane())};
    save_pfm((out / "disp" / detail::frame_name(t, ".pfm")).string(), map);
    if (f.export_ply) {
      // Only positive disparities back-project to finite depth.
      std::vector<std::uint8_t> valid(d.plane());
      for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = map.data[i] > 0.0f;
      write_file((out / "ply" / detail::frame_name(t, ".ply")).string(),
                 export_pointcloud(seq.left[static_cast<std::size_t>(t)], map.data.data(), valid.data(), seq.focal_px,
                                   seq.baseline_m, (d.width - 1) / 2.0, (d.height - 1) / 2.0));
    }
  }
  std::cout << "wrote " << d.frames << " disparity maps to " << (out / "disp").string() << std::endl;
  if (seq.gt) print_report("vs ground truth", evaluate(d, *seq.gt, c.eval.thresholds));
  return 0;
}

// Numbered PFMs from `dir`, or from `dir`/disp when present. Ground truth
// marks non-finite or negative pixels invalid; predictions are taken as is.
DisparityVideo load_pfm_video(const std::string& dir, bool ground_truth) {
  fs::path root(dir);
  if (fs::is_directory(root / "disp")) root /= "disp";
  if (!fs::is_directory(root)) throw std::runtime_error("'" + dir + "' is not a directory");
  const auto files = detail::numbered_files(root, {".pfm"});
  if (files.empty()) throw std::runtime_error("no numbered .pfm files in '" + root.string() + "'");
  DisparityVideo v;
  for (std::size_t t = 0; t < files.size(); ++t) {
    const FloatMap m = load_pfm(files[t].second.string());
    if (t == 0) v = DisparityVideo(static_cast<int>(files.size()), m.height, m.width);
    if (m.height != v.height || m.width != v.width) throw std::runtime_error(files[t].second.string() + ": size differs from frame 0");
    for (std::size_t p = 0; p < m.data.size(); ++p) {
      const std::size_t i = t * v.plane() + p;
      if (ground_truth) {
        v.valid[i] = std::isfinite(m.data[p]) && m.data[p] >= 0.0f;
        v.values[i] = v.valid[i] ? m.data[p] : 0.0f;
      } else {
        v.values[i] = m.data[p];
      }
    }
  }
  return v;
}

int cmd_eval(const Flags& f, const std::string& pred_dir, const std::string& gt_dir) {
  RunConfig c = resolve(f);
  prepare_out(c);
  const DisparityVideo pred = load_pfm_video(pred_dir, false);
  const DisparityVideo gt = load_pfm_video(gt_dir, true);
  if (pred.frames != gt.frames) {
    throw std::invalid_argument("frame count mismatch: " + std::to_string(pred.frames) + " predictions, " +
                                std::to_string(gt.frames) + " ground-truth frames");
  }
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("prediction frames are " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                                ", ground truth " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  }
  // Non-finite predictions are only tolerated where the ground truth is invalid.
  DisparityVideo scored = pred;
  for (std::size_t i = 0; i < scored.values.size(); ++i) {
    if (std::isfinite(scored.values[i])) continue;
    if (gt.valid[i]) throw std::runtime_error("non-finite prediction at a valid ground-truth pixel (frame " +
                                              std::to_string(i / gt.plane()) + ")");
    scored.values[i] = 0.0f;
  }
  const EvalReport r = evaluate(scored, gt, c.eval.thresholds);
  write_file((fs::path(c.out) / "report.csv").string(), r.to_csv());
  write_file((fs::path(c.out) / "report.txt").string(), r.to_table());
  std::cout << r.to_table();
  return 0;
}

int cmd_ablate(const Flags& f, const std::string& axis) {
  RunConfig base = resolve(f);
  auto& th = base.eval.thresholds;
  if (std::find(th.begin(), th.end(), 1.0) == th.end()) th.push_back(1.0);
  prepare_out(base);
  std::vector<std::pair<std::string, ModelConfig>> rows;
  auto variant = [&](const std::string& label, auto edit) {
    ModelConfig m = base.model;
    edit(m);
    rows.emplace_back(label, m);
  };
  if (axis == "upsampling") {
    variant("bilinear", [](ModelConfig& m) { m.upsample = UpsampleMode::bilinear; });
    variant("convex", [](ModelConfig& m) { m.upsample = UpsampleMode::convex; });
    variant("temporal_convex", [](ModelConfig& m) { m.upsample = UpsampleMode::temporal_convex; });
  } else if (axis == "stages") {
    variant("16-8-4", [](ModelConfig& m) { m.stages = {16, 8, 4}; });
    variant("32-16-8-4", [](ModelConfig& m) { m.stages = {32, 16, 8, 4}; });
  } else if (axis == "correlation") {
    variant("local", [](ModelConfig& m) { m.correlation = CorrMode::local; });
    variant("all_pairs", [](ModelConfig& m) { m.correlation = CorrMode::all_pairs; });
  } else if (axis == "attention") {
    variant("none", [](ModelConfig& m) { m.attention = AttentionMode::none; });
    variant("temporal", [](ModelConfig& m) { m.attention = AttentionMode::temporal; });
    variant("temporal+spatial", [](ModelConfig& m) { m.attention = AttentionMode::temporal_spatial; });
  } else {
    throw std::invalid_argument("unknown ablation axis '" + axis + "' (correlation, upsampling, attention, stages)");
  }
  std::ostringstream csv;
  csv.precision(9);
  csv << "axis,variant,tepe,delta_1px,epe\n";
  for (const auto& [label, mc] : rows) {
    RunConfig c = base;
    c.model = mc;
    c.validate();
    const fs::path dir = fs::path(base.out) / label;
    fs::create_directories(dir);
    write_file((dir / "config.resolved.txt").string(), c.to_text());
    Model<float> m = init_model<float>(mc, c.seed);
    std::cout << "[" << axis << "] training " << label << std::endl;
    const EvalReport r = train_and_score(m, c, dir, false);
    print_report(label, r);
    csv << axis << ',' << label << ',' << r.tepe << ',' << r.delta_t.at(1.0) << ',' << r.epe << '\n';
  }
  const fs::path table = fs::path(base.out) / ("ablation_" + axis + ".csv");
  write_file(table.string(), csv.str());
  std::cout << "wrote " << table.string() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporally consistent stereo matching on video (toy scale)."};
  app.require_subcommand(1);
  Flags flags;
  std::string spec_file, checkpoint, seq_dir, pred_dir, gt_dir, axis;
  int count = 1;

  auto* gen = app.add_subcommand("generate", "render a synthetic stereo sequence with ground truth");
  add_common(gen, flags);
  gen->add_option("spec", spec_file, "scene spec file (default: random scene from [data] and --seed)");
  gen->add_option("--count", count, "number of sequences");

  auto* tr = app.add_subcommand("train", "train on synthetic scenes; writes model.ckpt and loss.csv");
  add_common(tr, flags);

  auto* inf = app.add_subcommand("infer", "predict disparity for a sequence directory");
  add_common(inf, flags);
  inf->add_option("checkpoint", checkpoint, "model checkpoint")->required();
  inf->add_option("sequence", seq_dir, "sequence directory (left/, right/, manifest.txt)")->required();
  inf->add_flag("--export-ply", flags.export_ply, "also write a coloured point cloud per frame");

  auto* ev = app.add_subcommand("eval", "score predicted PFMs against ground truth");
  add_common(ev, flags);
  ev->add_option("pred", pred_dir, "directory of predicted PFMs")->required();
  ev->add_option("gt", gt_dir, "ground-truth directory (PFMs or a sequence with disp/)")->required();

  auto* ab = app.add_subcommand("ablate", "train and score variants along one axis");
  add_common(ab, flags);
  ab->add_option("--axis", axis, "correlation | upsampling | attention | stages")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "tcs: error: " << e.what() << std::endl;
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (const char* env = std::getenv("TCS_NUM_THREADS")) {
      const int n = std::atoi(env);
      if (n < 1) throw std::invalid_argument(std::string("TCS_NUM_THREADS must be a positive integer, got '") + env + "'");
      Eigen::setNbThreads(n);
    }
    if (*gen) return cmd_generate(flags, spec_file, count);
    if (*tr) return cmd_train(flags);
    if (*inf) return cmd_infer(flags, checkpoint, seq_dir);
    if (*ev) return cmd_eval(flags, pred_dir, gt_dir);
    if (*ab) return cmd_ablate(flags, axis);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "tcs: error: " << msg << std::endl;
    return 1;
  }
  return 0;
}
