#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tcs/config.hpp"
#include "tcs/train.hpp"

using namespace tcs;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.c_cnn = 4;
  c.latent = 4;
  c.hidden = 8;
  c.cost_feat = 4;
  c.disp_feat = 3;
  c.head_hidden = 4;
  c.stages = {8, 4};
  c.iters = 2;
  return c;
}

SceneRanges small_ranges() {
  SceneRanges r;
  r.frames = 3;
  r.height = 16;
  r.width = 32;
  r.max_disparity = 6;
  return r;
}

TrainConfig quick(int steps) {
  TrainConfig t;
  t.steps = steps;
  t.iters = 2;
  t.crop_h = 16;
  t.crop_w = 24;
  t.lr = 1e-3;
  t.log_every = 0;
  return t;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tcs_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <class T>
bool same_params(const Model<T>& a, const Model<T>& b) {
  for (const auto& [name, t] : a.params.items()) {
    const auto& u = b.params.get(name);
    if (std::memcmp(t.data().data(), u.data().data(), t.data().size_bytes()) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(Schedule, OneCycleShape) {
  TrainConfig c;
  c.steps = 1000;
  c.lr = 2e-4;
  c.pct_start = 0.1;
  EXPECT_NEAR(one_cycle_lr(c, 0), 2e-4 / 25, 1e-15);
  EXPECT_NEAR(one_cycle_lr(c, 100), 2e-4, 1e-15);
  EXPECT_NEAR(one_cycle_lr(c, 1000), 2e-4 / 25 / 1e4, 1e-15);
  for (int s = 1; s <= 100; ++s) EXPECT_GT(one_cycle_lr(c, s), one_cycle_lr(c, s - 1));
  for (int s = 101; s <= 1000; ++s) EXPECT_LT(one_cycle_lr(c, s), one_cycle_lr(c, s - 1));
  c.lr = 0;
  EXPECT_EQ(one_cycle_lr(c, 50), 0.0);
}

TEST(Optimizer, AdamWFirstStepClosedForm) {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
  auto& w = ps.items().at("w");
  auto g = w.mutable_grad();
  g[0] = 0.3;
  g[1] = -4.0;
  g[2] = 0.0;
  TrainConfig c;
  c.weight_decay = 0.1;
  AdamW<double> opt(ps, c);
  opt.step(ps, 0.01);
  // Bias-corrected m/sqrt(v) = sign(g) on the first step (eps aside).
  EXPECT_NEAR(w.data()[0], 1.0 - 0.01 * (0.3 / (0.3 + 1e-8) + 0.1 * 1.0), 1e-12);
  EXPECT_NEAR(w.data()[1], -2.0 - 0.01 * (-1.0 + 0.1 * -2.0), 1e-9);
  EXPECT_NEAR(w.data()[2], 0.5 - 0.01 * (0.1 * 0.5), 1e-12);
}

TEST(Optimizer, ClipGradNorm) {
  ParamStore<double> ps;
  ps.add("a", Tensor<double>({2}, 0.0));
  ps.add("b", Tensor<double>({1}, 0.0));
  ps.items().at("a").mutable_grad()[0] = 3.0;
  ps.items().at("a").mutable_grad()[1] = 0.0;
  ps.items().at("b").mutable_grad()[0] = 4.0;
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 5.0, 1e-12);
  EXPECT_NEAR(ps.get("a").grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(ps.get("b").grad()[0], 0.8, 1e-12);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-12);
  EXPECT_NEAR(ps.get("b").grad()[0], 0.8, 1e-12);
}

TEST(Data, CropInvalidatesMatchesLeavingTheWindow) {
  auto seq = generate_scene(random_scene(3, small_ranges()));
  const auto c = crop_sequence(seq, 2, 5, 10, 20);
  ASSERT_EQ(c.height(), 10);
  ASSERT_EQ(c.width(), 20);
  for (int t = 0; t < 3; ++t) {
    for (int y = 0; y < 10; ++y) {
      for (int x = 0; x < 20; ++x) {
        EXPECT_EQ(c.left[t].at(y, x, 1), seq.left[t].at(y + 2, x + 5, 1));
        const float d = seq.gt->at(t, y + 2, x + 5);
        EXPECT_EQ(c.gt->at(t, y, x), d);
        EXPECT_EQ(c.gt->is_valid(t, y, x), seq.gt->is_valid(t, y + 2, x + 5) && x - d >= 0);
      }
    }
  }
}

TEST(Data, HeldOutDiffersFromTraining) {
  auto src = synthetic_source(5, small_ranges());
  const auto train0 = src(0);
  const auto held = heldout_scenes(5, 2, small_ranges());
  EXPECT_NE(train0.left[0].data, held[0].left[0].data);
  EXPECT_NE(held[0].left[0].data, held[1].left[0].data);
  EXPECT_EQ(heldout_scenes(5, 1, small_ranges())[0].left[0].data, held[0].left[0].data);
}

TEST(Predict, ChunkedMatchesPerChunkForward) {
  auto cfg = tiny_config();
  auto m = init_model<float>(cfg, 1);
  Rng rng(2);
  for (auto& [_, p] : m.params.items()) {
    for (auto& v : p.mutable_data()) v += static_cast<float>(rng.uniform(-0.05, 0.05));
  }
  auto r = small_ranges();
  r.frames = 5;
  const auto seq = generate_scene(random_scene(4, r));
  const auto whole = predict(m, seq, 2, 20);
  const auto chunked = predict(m, seq, 2, 2);
  ASSERT_EQ(chunked.frames, 5);
  StereoSequence tail;
  tail.left = {seq.left[4]};
  tail.right = {seq.right[4]};
  const auto last = predict(m, tail, 2, 20);
  for (std::size_t p = 0; p < last.plane(); ++p) EXPECT_EQ(chunked.values[4 * last.plane() + p], last.values[p]);
  double diff = 0;
  for (std::size_t i = 0; i < whole.values.size(); ++i) diff += std::abs(whole.values[i] - chunked.values[i]);
  EXPECT_GT(diff, 0.0);  // chunks do not share temporal context
}

TEST(Train, ZeroLearningRateLeavesParametersBitwise) {
  auto cfg = tiny_config();
  auto m = init_model<float>(cfg, 1);
  const auto initial = init_model<float>(cfg, 1);
  auto tc = quick(3);
  tc.lr = 0.0;
  train(m, tc, synthetic_source(1, small_ranges()));
  EXPECT_TRUE(same_params(m, initial));
}

TEST(Train, DeterministicLossCurve) {
  auto cfg = tiny_config();
  auto a = init_model<float>(cfg, 7), b = init_model<float>(cfg, 7);
  const auto ca = train(a, quick(4), synthetic_source(3, small_ranges()));
  const auto cb = train(b, quick(4), synthetic_source(3, small_ranges()));
  ASSERT_EQ(ca.size(), 4u);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    EXPECT_EQ(ca[i].loss, cb[i].loss);
    EXPECT_EQ(ca[i].lr, cb[i].lr);
  }
  EXPECT_TRUE(same_params(a, b));
}

TEST(Train, OverfitsOneSample) {
  auto cfg = tiny_config();
  auto m = init_model<float>(cfg, 2);
  const auto sample = generate_scene(random_scene(9, small_ranges()));
  auto tc = quick(50);
  tc.crop_h = 0;
  tc.crop_w = 0;
  tc.lr = 2e-3;
  const auto curve = train(m, tc, [&](std::uint64_t) { return sample; });
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += curve[static_cast<std::size_t>(i)].loss;
    tail += curve[curve.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, 0.8 * head);
}

TEST(Train, WritesCsvAndCheckpoints) {
  const auto dir = temp_dir("csv");
  auto cfg = tiny_config();
  auto m = init_model<float>(cfg, 1);
  TrainHooks hooks;
  hooks.csv_path = (dir / "loss.csv").string();
  hooks.checkpoint_path = (dir / "model.ckpt").string();
  int logged = 0;
  hooks.on_log = [&](const LossRecord&) { ++logged; };
  auto tc = quick(3);
  tc.log_every = 2;
  tc.checkpoint_every = 2;
  const auto curve = train(m, tc, synthetic_source(1, small_ranges()), hooks);
  EXPECT_EQ(logged, 2);  // steps 0 and 2
  std::ifstream in(hooks.csv_path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss,lr");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(same_params(load_checkpoint<float>(hooks.checkpoint_path, cfg), m));
  fs::remove_all(dir);
}

TEST(Train, AbortsOnNonFiniteLossKeepingLastGoodParameters) {
  const auto dir = temp_dir("abort");
  auto cfg = tiny_config();
  auto m = init_model<float>(cfg, 1);
  TrainHooks hooks;
  hooks.checkpoint_path = (dir / "model.ckpt").string();
  auto good = synthetic_source(1, small_ranges());
  auto source = [&](std::uint64_t i) {
    auto s = good(i);
    if (i == 2) s.left[1].data[10] = std::numeric_limits<float>::quiet_NaN();
    return s;
  };
  auto tc = quick(5);
  tc.crop_h = 0;
  tc.crop_w = 0;
  Model<float> snapshot = init_model<float>(cfg, 1);
  try {
    train(m, tc, source, hooks);
    FAIL() << "training did not abort";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
  }
  const auto saved = load_checkpoint<float>(hooks.checkpoint_path, cfg);
  EXPECT_TRUE(same_params(saved, m));
  EXPECT_FALSE(same_params(saved, snapshot));  // two good steps were taken
  for (const auto& [_, p] : saved.params.items()) {
    for (float v : p.data()) ASSERT_TRUE(std::isfinite(v));
  }
  fs::remove_all(dir);
}

TEST(RunConfig, ParseOverrideAndSnapshot) {
  const std::string text =
      "seed = 4\nout = somewhere\n[model]\nstages = 8,4\niters = 6\nupsample = bilinear\n"
      "[train]\nsteps = 12\nlr = 1e-3\n[data]\nframes = 5\nmax_disparity = 16\n[eval]\nthresholds = 0.5,1,3\n";
  const auto c = RunConfig::parse(text);
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.model.stages, (std::vector<int>{8, 4}));
  EXPECT_EQ(c.model.upsample, UpsampleMode::bilinear);
  EXPECT_EQ(c.train.steps, 12);
  EXPECT_EQ(c.eval.thresholds, (std::vector<double>{0.5, 1, 3}));
  const auto again = RunConfig::parse(c.to_text());
  EXPECT_EQ(again.to_text(), c.to_text());
  EXPECT_THROW(RunConfig::parse("[model]\nstagse = 8\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[modle]\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[train]\nsteps = many\n"), ConfigError);
}
