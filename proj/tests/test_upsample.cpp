#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "tcs/gradcheck.hpp"
#include "tcs/rng.hpp"
#include "tcs/upsample.hpp"
#include "support.hpp"

using namespace tcs;
using TD = Tensor<double>;

using support::clampi;
using support::nested_loop_upsample;

TEST(TemporalConvex, ConstantFieldScalesByRate) {
  Rng rng(1);
  for (Index alpha : {1, 2, 4}) {
    auto d = TD::full({1, 1, 3, 2, 3}, 1.5);
    auto logits = uniform_tensor<double>({1, 27 * alpha * alpha, 3, 2, 3}, rng, -4, 4);
    auto up = temporal_convex_upsample(d, logits, alpha);
    ASSERT_EQ(up.shape(), (Shape{1, 1, 3, 2 * alpha, 3 * alpha}));
    for (double v : up.data()) EXPECT_NEAR(v, 1.5 * static_cast<double>(alpha), 1e-12);
  }
}

TEST(TemporalConvex, UniformLogitsGiveNeighborMean) {
  Rng rng(2);
  auto d = uniform_tensor<double>({1, 1, 3, 3, 4}, rng, 0, 5);
  const Index alpha = 2;
  auto up = temporal_convex_upsample(d, TD({1, 27 * 4, 3, 3, 4}, 0.7), alpha);
  for (Index t = 0; t < 3; ++t)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 4; ++x) {
        double mean = 0;
        for (Index dt = -1; dt <= 1; ++dt)
          for (Index dy = -1; dy <= 1; ++dy)
            for (Index dx = -1; dx <= 1; ++dx) mean += d.at({0, 0, clampi(t + dt, 3), clampi(y + dy, 3), clampi(x + dx, 4)});
        mean /= 27.0;
        for (Index sy = 0; sy < alpha; ++sy)
          for (Index sx = 0; sx < alpha; ++sx) {
            EXPECT_NEAR(up.at({0, 0, t, y * alpha + sy, x * alpha + sx}), alpha * mean, 1e-12);
          }
      }
}

TEST(TemporalConvex, MatchesNestedLoops) {
  Rng rng(3);
  for (Index alpha : {2, 4}) {
    auto d = uniform_tensor<double>({1, 1, 3, 2, 2}, rng, 0, 8);
    auto logits = uniform_tensor<double>({1, 27 * alpha * alpha, 3, 2, 2}, rng, -3, 3);
    auto up = temporal_convex_upsample(d, logits, alpha);
    auto ref = nested_loop_upsample(d, logits, alpha, 3);
    for (Index i = 0; i < ref.numel(); ++i) EXPECT_NEAR(up.data()[i], ref.data()[i], 1e-6);
  }
}

TEST(TemporalConvex, ConvexityBounds) {
  Rng rng(4);
  const Index alpha = 4;
  auto d = uniform_tensor<double>({1, 1, 4, 3, 3}, rng, 0, 10);
  auto up = temporal_convex_upsample(d, uniform_tensor<double>({1, 27 * 16, 4, 3, 3}, rng, -6, 6), alpha);
  for (Index t = 0; t < 4; ++t)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 3; ++x) {
        double lo = 1e300, hi = -1e300;
        for (Index dt = -1; dt <= 1; ++dt)
          for (Index dy = -1; dy <= 1; ++dy)
            for (Index dx = -1; dx <= 1; ++dx) {
              const double v = d.at({0, 0, clampi(t + dt, 4), clampi(y + dy, 3), clampi(x + dx, 3)});
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
        for (Index sy = 0; sy < alpha; ++sy)
          for (Index sx = 0; sx < alpha; ++sx) {
            const double v = up.at({0, 0, t, y * alpha + sy, x * alpha + sx});
            EXPECT_GE(v, lo * alpha - 1e-12);
            EXPECT_LE(v, hi * alpha + 1e-12);
          }
      }
}

TEST(TemporalConvex, TemporallyConstantInputStaysConstant) {
  // Identical frames and identical per-frame weights: every frame upsamples the same way.
  Rng rng(5);
  auto frame = uniform_tensor<double>({1, 1, 1, 3, 4}, rng, 0, 4);
  auto d = concat<double>({frame, frame, frame, frame}, 2);
  auto w1 = uniform_tensor<double>({1, 27 * 4, 1, 3, 4}, rng, -3, 3);
  auto up = temporal_convex_upsample(d, concat<double>({w1, w1, w1, w1}, 2), 2);
  for (Index t = 1; t < 4; ++t)
    for (Index i = 0; i < 6 * 8; ++i) {
      EXPECT_NEAR(up.data()[static_cast<std::size_t>(t * 48 + i)], up.data()[static_cast<std::size_t>(i)], 1e-12);
    }
}

TEST(TemporalConvex, RejectsBadLogitShape) {
  EXPECT_THROW(temporal_convex_upsample(TD({1, 1, 2, 2, 2}), TD({1, 27, 2, 2, 2}), 2), ShapeError);
  EXPECT_THROW(temporal_convex_upsample(TD({1, 1, 2, 2, 2}), TD({1, 27, 2, 2, 2}), 0), std::invalid_argument);
  EXPECT_THROW(bilinear_upsample(TD({1, 1, 1, 2, 2}), kMaxUpsampledExtent), std::invalid_argument);
}

TEST(ConvexUpsample2d, ConstantAndUniform) {
  Rng rng(6);
  auto c = convex_upsample_2d(TD::full({1, 1, 2, 3, 3}, 2.0), uniform_tensor<double>({1, 9 * 4, 2, 3, 3}, rng), 2);
  for (double v : c.data()) EXPECT_NEAR(v, 4.0, 1e-12);

  auto d = uniform_tensor<double>({1, 1, 2, 3, 3}, rng, 0, 3);
  auto up = convex_upsample_2d(d, TD({1, 9 * 4, 2, 3, 3}, 0.0), 2);
  auto ref = nested_loop_upsample(d, TD({1, 9 * 4, 2, 3, 3}, 0.0), 2, 1);
  for (Index i = 0; i < ref.numel(); ++i) EXPECT_NEAR(up.data()[i], ref.data()[i], 1e-12);
}

TEST(ConvexUpsample2d, SingleFrameReductionOfTemporalVariant) {
  Rng rng(7);
  const Index alpha = 2;
  auto d = uniform_tensor<double>({1, 1, 1, 3, 4}, rng, 0, 6);
  auto spatial = uniform_tensor<double>({1, 9 * alpha * alpha, 1, 3, 4}, rng, -2, 2);
  // Temporal logits: the centre frame (dt = 1) carries the spatial logits; the
  // other two frames get -inf-like logits. With T=1 replicate padding all three
  // frames hold the same values anyway.
  TD temporal({1, 27 * alpha * alpha, 1, 3, 4}, -80.0);
  auto tv = temporal.mutable_data();
  for (Index k = 0; k < 9; ++k)
    for (Index s = 0; s < alpha * alpha; ++s)
      for (Index p = 0; p < 12; ++p) {
        tv[static_cast<std::size_t>(((9 + k) * alpha * alpha + s) * 12 + p)] =
            spatial.data()[static_cast<std::size_t>((k * alpha * alpha + s) * 12 + p)];
      }
  auto a = temporal_convex_upsample(d, temporal, alpha);
  auto b = convex_upsample_2d(d, spatial, alpha);
  for (Index i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(Bilinear, ConstantIdentityAndRamp) {
  const auto flat = bilinear_upsample(TD::full({1, 1, 2, 3, 4}, 1.25), 4);
  for (double v : flat.data()) EXPECT_NEAR(v, 5.0, 1e-12);

  Rng rng(8);
  auto d = uniform_tensor<double>({2, 1, 2, 3, 4}, rng);
  auto same = bilinear_upsample(d, 1);
  for (Index i = 0; i < d.numel(); ++i) EXPECT_EQ(same.data()[i], d.data()[i]);

  const Index h = 3, w = 5, alpha = 4;
  TD ramp({1, 1, 1, h, w});
  auto rv = ramp.mutable_data();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) rv[static_cast<std::size_t>(y * w + x)] = 0.7 * x - 0.3 * y + 2.0;
  auto up = bilinear_upsample(ramp, alpha);
  for (Index y = 0; y < h * alpha; ++y)
    for (Index x = 0; x < w * alpha; ++x) {
      const double sx = static_cast<double>(x) * (w - 1) / (w * alpha - 1);
      const double sy = static_cast<double>(y) * (h - 1) / (h * alpha - 1);
      EXPECT_NEAR(up.at({0, 0, 0, y, x}), alpha * (0.7 * sx - 0.3 * sy + 2.0), 1e-12);
    }
}

TEST(Upsamplers, AgreeOnConstantFields) {
  Rng rng(9);
  auto d = TD::full({1, 1, 3, 2, 2}, 0.75);
  auto a = temporal_convex_upsample(d, uniform_tensor<double>({1, 27 * 16, 3, 2, 2}, rng), 4);
  auto b = convex_upsample_2d(d, uniform_tensor<double>({1, 9 * 16, 3, 2, 2}, rng), 4);
  auto c = bilinear_upsample(d, 4);
  for (Index i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a.data()[i], 3.0, 1e-12);
    EXPECT_NEAR(b.data()[i], 3.0, 1e-12);
    EXPECT_NEAR(c.data()[i], 3.0, 1e-12);
  }
}

class UpsampleGradients : public ::testing::TestWithParam<int> {};

TEST_P(UpsampleGradients, AllVariants) {
  EXPECT_LT(support::temporal_convex_gradient(static_cast<std::uint64_t>(GetParam())).max_relative_error, 1e-4);
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 200);
  auto d = uniform_tensor<double>({1, 1, 2, 2, 2}, rng, -2, 2);
  uniform_tensor<double>({1, 27 * 4, 2, 2, 2}, rng, -1, 1);  // keep the stream aligned with the shared case
  auto w_out = uniform_tensor<double>({1, 1, 2, 4, 4}, rng, -1, 1);
  auto l2 = uniform_tensor<double>({1, 9 * 4, 2, 2, 2}, rng, -1, 1);
  auto r2 = grad_check(
      [&](const std::vector<TD>& v) { return sum(mul(convex_upsample_2d(v[0], v[1], 2), w_out)); }, {d, l2});
  EXPECT_LT(r2.max_relative_error, 1e-4);
  auto r3 = grad_check([&](const std::vector<TD>& v) { return sum(mul(bilinear_upsample(v[0], 2), w_out)); }, {d});
  EXPECT_LT(r3.max_relative_error, 1e-5);
}

// Larger grid with interior taps: absolute agreement.
TEST_P(UpsampleGradients, InteriorAbsolute) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 300);
  auto d = uniform_tensor<double>({1, 1, 4, 3, 4}, rng, 0, 4);
  auto logits = uniform_tensor<double>({1, 27 * 9, 4, 3, 4}, rng, -2, 2);
  auto w_out = uniform_tensor<double>({1, 1, 4, 9, 12}, rng, 0.5, 1.5);
  auto r = grad_check(
      [&](const std::vector<TD>& v) { return sum(mul(temporal_convex_upsample(v[0], v[1], 3), w_out)); }, {d, logits});
  EXPECT_LT(r.max_absolute_error, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Seeds, UpsampleGradients, ::testing::Range(0, 5));
