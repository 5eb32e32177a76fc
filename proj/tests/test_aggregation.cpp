#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <numeric>

#include "tcs/aggregation.hpp"
#include "tcs/gradcheck.hpp"
#include "support.hpp"

using namespace tcs;
using TD = Tensor<double>;

using namespace tcs::support;

TEST(EncodeCost, ZeroVolumeZeroBiases) {
  Rng rng(1);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  for (auto& [name, t] : ps.items()) {
    if (name.ends_with(".bias")) t.zero_grad(), std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  CostVolume<double> cv{TD({1, 9, 2, 3, 3}), CorrMode::local, {4, 0}};
  auto e = encode_cost(cv, ps);
  ASSERT_EQ(e.shape(), (Shape{1, 4, 2, 3, 3}));
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(EncodeCost, PointwiseAndPermutation) {
  Rng rng(2);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  auto vol = uniform_tensor<double>({1, 9, 1, 2, 3}, rng);
  // Copy pixel (0,0) onto pixel (1,2).
  auto vals = vol.mutable_data();
  for (Index k = 0; k < 9; ++k) vals[static_cast<std::size_t>(k * 6 + 5)] = vals[static_cast<std::size_t>(k * 6)];
  auto e = encode_cost(CostVolume<double>{vol, CorrMode::all_pairs, {1, 1}}, ps);
  for (Index c = 0; c < 4; ++c) EXPECT_EQ(e.at({0, c, 0, 0, 0}), e.at({0, c, 0, 1, 2}));

  // Permute the six positions; outputs follow.
  const std::vector<Index> perm{4, 0, 5, 2, 1, 3};
  TD shuffled({1, 9, 1, 2, 3});
  auto sv = shuffled.mutable_data();
  for (Index k = 0; k < 9; ++k)
    for (Index p = 0; p < 6; ++p) sv[static_cast<std::size_t>(k * 6 + p)] = vals[static_cast<std::size_t>(k * 6 + perm[static_cast<std::size_t>(p)])];
  auto es = encode_cost(CostVolume<double>{shuffled, CorrMode::all_pairs, {1, 1}}, ps);
  for (Index c = 0; c < 4; ++c)
    for (Index p = 0; p < 6; ++p) {
      EXPECT_EQ(es.data()[static_cast<std::size_t>(c * 6 + p)],
                e.data()[static_cast<std::size_t>(c * 6 + perm[static_cast<std::size_t>(p)])]);
    }
}

TEST(EncodeCost, ChannelMismatch) {
  Rng rng(3);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  EXPECT_THROW(encode_cost(CostVolume<double>{TD({1, 7, 1, 2, 2}), CorrMode::local, {4, 0}}, ps), ShapeError);
}

TEST(Attention, NoneIsIdentity) {
  Rng rng(4);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  auto x = uniform_tensor<double>({1, 9, 2, 3, 3}, rng);
  auto y = attention(x, AttentionMode::none, ps);
  for (Index i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Attention, SingleFrameWithZeroProjection) {
  Rng rng(5);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  auto x = uniform_tensor<double>({1, 9, 1, 3, 3}, rng);
  auto y = attention(x, AttentionMode::temporal, ps);
  for (Index i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Attention, SingleFrameMixesNothingAcrossTime) {
  // Nonzero output projection: with one token the attended value is v itself.
  Rng rng(6);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  randomize(ps, rng);
  auto x = uniform_tensor<double>({1, 9, 1, 2, 2}, rng);
  auto y = attention(x, AttentionMode::temporal, ps);
  auto expect = add(x, apply_conv(ps, "update.attn_temporal.o", apply_conv(ps, "update.attn_temporal.v", x)));
  for (Index i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], expect.data()[i], 1e-12);
}

TEST(Attention, UniformAcrossTimeStaysUniform) {
  Rng rng(7);
  ParamStore<double> ps;
  init_update_block(ps, tiny_dims(), rng);
  randomize(ps, rng);
  auto frame = uniform_tensor<double>({1, 9, 1, 3, 3}, rng);
  auto x = concat<double>({frame, frame, frame, frame}, 2);
  for (auto mode : {AttentionMode::temporal, AttentionMode::temporal_spatial}) {
    auto y = attention(x, mode, ps);
    for (Index c = 0; c < 9; ++c)
      for (Index t = 1; t < 4; ++t)
        for (Index p = 0; p < 9; ++p) {
          EXPECT_NEAR(y.at({0, c, t, p / 3, p % 3}), y.at({0, c, 0, p / 3, p % 3}), 1e-12);
        }
  }
}

TEST(Attention, ParseModes) {
  EXPECT_EQ(parse_attention_mode("temporal+spatial"), AttentionMode::temporal_spatial);
  EXPECT_EQ(parse_attention_mode("none"), AttentionMode::none);
  EXPECT_THROW(parse_attention_mode("spatial"), std::invalid_argument);
}


TEST(GruStep, ClosedGateKeepsHidden) {
  GruFixture f(8);
  auto bias = f.ps.items().at("update.z.temporal.bias").mutable_data();
  std::fill(bias.begin(), bias.end(), -50.0);
  auto next = gru_step(GruState<double>{f.h, f.d, 1}, f.cost, f.ctx, f.ps, f.dims);
  for (Index i = 0; i < f.h.numel(); ++i) EXPECT_NEAR(next.h.data()[i], f.h.data()[i], 1e-6);
  EXPECT_EQ(next.iter_index, 2);
}

TEST(GruStep, ZeroStartIsBounded) {
  GruFixture f(9);
  auto next = gru_step(GruState<double>{TD(f.h.shape()), f.d, 1}, f.cost, f.ctx, f.ps, f.dims);
  for (double v : next.h.data()) EXPECT_LT(std::abs(v), 1.0);
}

TEST(GruStep, ZeroHeadLeavesDisparity) {
  Rng rng(10);
  UpdateDims dims = tiny_dims();
  ParamStore<double> ps;
  init_update_block(ps, dims, rng);
  auto d = uniform_tensor<double>({1, 1, 2, 3, 3}, rng, 0, 3);
  auto next = gru_step(GruState<double>{TD({1, 4, 2, 3, 3}), d, 1}, uniform_tensor<double>({1, 4, 2, 3, 3}, rng),
                       uniform_tensor<double>({1, 3, 2, 3, 3}, rng), ps, dims);
  for (Index i = 0; i < d.numel(); ++i) EXPECT_EQ(next.d.data()[i], d.data()[i]);
}

TEST(GruStep, RejectsBadIteration) {
  GruFixture f(11);
  EXPECT_THROW(gru_step(GruState<double>{f.h, f.d, 0}, f.cost, f.ctx, f.ps, f.dims), std::invalid_argument);
}

TEST(GruStep, NonFiniteInputReported) {
  GruFixture f(12);
  f.d.mutable_data()[3] = std::nan("");
  EXPECT_THROW(gru_step(GruState<double>{f.h, f.d, 1}, f.cost, f.ctx, f.ps, f.dims), NumericError);
}

class GruBoundedness : public ::testing::TestWithParam<int> {};

TEST_P(GruBoundedness, TwentySteps) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 40);
  const UpdateDims dims = tiny_dims();
  ParamStore<double> ps;
  init_update_block(ps, dims, rng);
  // Zero-initialized layers get fan-in scale weights so every path is live.
  for (auto& [name, t] : ps.items()) {
    if (!name.ends_with(".weight")) continue;
    if (std::any_of(t.data().begin(), t.data().end(), [](double v) { return v != 0.0; })) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.numel() / t.dim(0)));
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  }
  const Shape grid{1, 1, 3, 4, 5};
  GruState<double> s{uniform_tensor<double>({1, dims.hidden, 3, 4, 5}, rng), TD(grid), 1};
  for (int n = 0; n < 20; ++n) {
    // Fresh random inputs each step; disparity spans the toy range.
    s.d = uniform_tensor<double>(grid, rng, 0, 16);
    auto cost = uniform_tensor<double>({1, dims.latent, 3, 4, 5}, rng, -3, 3);
    auto ctx = uniform_tensor<double>({1, dims.context, 3, 4, 5}, rng, -3, 3);
    s = gru_step(s, cost, ctx, ps, dims);
    for (double v : s.h.data()) {
      ASSERT_GT(v, -1.0) << "step " << n;
      ASSERT_LT(v, 1.0) << "step " << n;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GruBoundedness, ::testing::Range(0, 5));

class AggregationGradients : public ::testing::TestWithParam<int> {};

TEST_P(AggregationGradients, EncodeCost) {
  EXPECT_LT(encode_cost_gradient(static_cast<std::uint64_t>(GetParam())).max_relative_error, 1e-4);
}

TEST_P(AggregationGradients, FullGruStep) {
  const auto r = gru_step_gradient(static_cast<std::uint64_t>(GetParam()));
  EXPECT_LT(r.max_relative_error, 1e-4) << "input " << r.worst_input << " index " << r.worst_index
                                        << " abs " << r.max_absolute_error;
  EXPECT_LT(r.max_absolute_error, 1e-7);
}

INSTANTIATE_TEST_SUITE_P(Seeds, AggregationGradients, ::testing::Range(0, 5));

TEST(MaskHead, ShapeAndNames) {
  Rng rng(13);
  ParamStore<double> ps;
  init_mask_head(ps, "mask.s4", 4, 27, 2, rng);
  auto h = uniform_tensor<double>({1, 4, 2, 3, 3}, rng);
  auto m = predict_mask(ps, "mask.s4", h);
  EXPECT_EQ(m.shape(), (Shape{1, 27 * 4, 2, 3, 3}));
}
