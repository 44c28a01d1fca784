// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "vtn/errors.hpp"
#include "vtn/losses.hpp"
#include "vtn/model.hpp"
#include "vtn/synth.hpp"
#include "vtn/training.hpp"
#include "vtn/vtn_layer.hpp"
#include "vtn_oracle.hpp"

namespace vtn {
namespace {

using testing::fd_error;
using testing::max_abs_diff;
using testing::randn;

VtnConfig small_config(std::int64_t groups, std::int64_t radius, std::int64_t levels = 1) {
  VtnConfig c;
  c.groups = groups;
  c.radius = radius;
  c.levels = levels;
  c.feature_dim = 3;
  c.beta = 0.7;
  return c;
}

TEST(GroupPool, ConstantChannelsNormalizeToZero) {
  Tensor<double> u(Shape{1, 3, 3, 4});
  for (std::int64_t p = 0; p < 9; ++p) u[p * 4] = u[p * 4 + 1] = 2.0, u[p * 4 + 2] = u[p * 4 + 3] = -1.0;
  Tape<double> t;
  auto g = group_sample_normalize(t.constant(u), small_config(2, 1));
  for (std::int64_t p = 0; p < 9; ++p) {
    EXPECT_EQ(g.pooled.value()[p * 4 + 0], 2.0);   // max, group 0
    EXPECT_EQ(g.pooled.value()[p * 4 + 1], -1.0);  // max, group 1
    EXPECT_EQ(g.pooled.value()[p * 4 + 2], 2.0);   // mean, group 0
    EXPECT_EQ(g.pooled.value()[p * 4 + 3], -1.0);  // mean, group 1
  }
  for (double v : g.normalized.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(GroupPool, MaxAndMeanOfOneGroup) {
  Tape<double> t;
  auto x = group_pool(t.constant(Tensor<double>(Shape{1, 1, 1, 2}, {1, 3})), 1);
  EXPECT_EQ(x.value(), Tensor<double>(Shape{1, 1, 1, 2, 1}, {3, 2}));
}

TEST(GroupPool, GroupsMustDivideChannels) {
  Tape<double> t;
  auto u = t.constant(Tensor<double>(Shape{1, 4, 4, 6}));
  EXPECT_THROW(group_sample_normalize(u, small_config(4, 1)), ConfigError);
}

TEST(ChannelSqueeze, SelectsAndSums) {
  Rng rng(1);
  Tensor<double> y = randn({2, 3, 3, 4, 3}, rng);
  Tensor<double> sel(Shape{3, 2});
  sel.at({0, 0}) = sel.at({1, 1}) = 1.0;
  Tape<double> t;
  auto z = channel_squeeze(t.constant(y), t.constant(sel));
  for (std::int64_t r = 0; r < y.numel() / 3; ++r) {
    EXPECT_EQ(z.value()[r * 2], y[r * 3]);
    EXPECT_EQ(z.value()[r * 2 + 1], y[r * 3 + 1]);
  }
  Tensor<double> y2 = randn({3, 3, 4, 2}, rng);
  auto s = channel_squeeze(t.constant(y2), t.constant(Tensor<double>(Shape{2, 1}, 1.0)));
  for (std::int64_t r = 0; r < y2.numel() / 2; ++r) EXPECT_EQ(s.value()[r], y2[r * 2] + y2[r * 2 + 1]);
}

TEST(ChannelSqueeze, MustReduceWidth) {
  Tape<double> t;
  auto y = t.constant(Tensor<double>(Shape{2, 2, 3, 4}));
  EXPECT_THROW(channel_squeeze(y, t.constant(Tensor<double>(Shape{4, 4}))), DimensionError);
  EXPECT_THROW(channel_squeeze(y, t.constant(Tensor<double>(Shape{3, 2}))), DimensionError);
}

TEST(ChannelExpand, IdentityZeroAndProjection) {
  Rng rng(2);
  Tensor<double> z = randn({2, 2, 3, 4}, rng);
  Tensor<double> eye(Shape{4, 4});
  for (int i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  Tape<double> t;
  EXPECT_EQ(channel_expand(t.constant(z), t.constant(eye)).value(), z);
  for (double v : channel_expand(t.constant(z), t.constant(Tensor<double>(Shape{4, 6}))).value().data()) {
    EXPECT_EQ(v, 0.0);
  }
  // Orthonormal 2-column basis of R^4: squeeze then expand with its transpose
  // projects every channel vector onto the spanned subspace.
  const double s = 0.5;
  Tensor<double> q(Shape{4, 2}, {s, s, s, -s, s, s, s, -s});
  Tensor<double> qt(Shape{2, 4}, {s, s, s, s, s, -s, s, -s});
  auto proj = channel_expand(channel_squeeze(t.constant(z), t.constant(q)), t.constant(qt));
  for (std::int64_t r = 0; r < z.numel() / 4; ++r)
    for (int i = 0; i < 4; ++i) {
      double ref = 0;
      for (int j = 0; j < 4; ++j) {
        double pij = 0;
        for (int a = 0; a < 2; ++a) pij += q.at({i, a}) * q.at({j, a});
        ref += pij * z[r * 4 + j];
      }
      EXPECT_NEAR(proj.value()[r * 4 + i], ref, 1e-14);
    }
}

TEST(ChannelMixing, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  auto sq = [](Tape<double>&, std::vector<Var<double>>& v) { return channel_squeeze(v[0], v[1]); };
  auto ex = [](Tape<double>&, std::vector<Var<double>>& v) { return channel_expand(v[0], v[1]); };
  EXPECT_LT(fd_error(sq, {randn({2, 3, 2, 4}, rng), randn({4, 2}, rng)}, rng), 1e-4);
  EXPECT_LT(fd_error(ex, {randn({2, 3, 2, 2}, rng), randn({2, 4}, rng)}, rng), 1e-4);
}

TEST(Estimator, FreshHeadGivesZeroLogits) {
  Rng rng(4);
  VtnConfig cfg;  // C=8, r=2, L=2
  auto params = VtnParams<double>::init(cfg, rng);
  Tape<double> t;
  auto g = group_sample_normalize(t.constant(randn({1, 32, 32, 16}, rng)), cfg);
  auto e = estimate_logits(g.normalized, params, cfg, true);
  EXPECT_EQ(e.shape(), (Shape{1, 32, 32, 25, 8}));
  for (double v : e.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Estimator, RejectsIndivisibleMapWithPaddingHint) {
  Rng rng(5);
  VtnConfig cfg = small_config(2, 1, 2);
  auto params = VtnParams<double>::init(cfg, rng);
  Tape<double> t;
  auto g = group_sample_normalize(t.constant(randn({1, 6, 8, 4}, rng)), cfg);
  try {
    estimate_logits(g.normalized, params, cfg, true);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pad by 2 rows and 0 columns"), std::string::npos) << e.what();
  }
}

TEST(Estimator, SqueezeEntryGradientMatchesFiniteDifferences) {
  Rng rng(6);
  VtnConfig cfg = small_config(4, 1, 1);
  auto params = VtnParams<double>::init(cfg, rng);
  oracle::randomize_head(params, rng);
  Tensor<double> u = randn({2, 4, 4, 8}, rng);
  Tensor<double> w = randn({2, 4, 4, 9, 4}, rng);
  Parameter<double>* squeeze = &params.levels[0].squeeze;
  auto f = [&](Tape<double>& t) {
    auto g = group_sample_normalize(t.constant(u), cfg);
    return sum(mul(estimate_logits(g.normalized, params, cfg, true), t.constant(w)));
  };
  EXPECT_LT(max_relative_error(f, {squeeze}), 1e-4);
}

TEST(Probabilities, ConstantResponsesGiveUniformOverValidCandidates) {
  VtnConfig cfg = small_config(1, 1);
  Tape<double> t;
  auto p = infer_probabilities(t.constant(Tensor<double>(Shape{1, 3, 3, 9, 1})),
                               t.constant(Tensor<double>(Shape{1, 3, 3, 1}, 4.0)), cfg);
  const auto mask = candidate_mask(3, 3, 1);
  for (std::int64_t pix = 0; pix < 9; ++pix) {
    const auto valid = std::count(mask.begin() + pix * 9, mask.begin() + (pix + 1) * 9, 1);
    for (std::int64_t j = 0; j < 9; ++j) {
      const double expect = mask[pix * 9 + j] ? 1.0 / static_cast<double>(valid) : 0.0;
      EXPECT_NEAR(p.value()[pix * 9 + j], expect, 1e-15);
    }
  }
}

TEST(Probabilities, LowTemperatureConcentratesOnPeak) {
  VtnConfig cfg = small_config(1, 1);
  cfg.beta = 1e-3;
  Tensor<double> r(Shape{1, 3, 3, 1});
  r.at({0, 0, 2, 0}) = 1.0;  // peak up and to the right of the centre
  Tape<double> t;
  auto p = infer_probabilities(t.constant(Tensor<double>(Shape{1, 3, 3, 9, 1})), t.constant(r), cfg);
  auto g = aggregate_warp_field(p, cfg);
  EXPECT_NEAR(p.value()[4 * 9 + 2], 1.0, 1e-12);
  EXPECT_NEAR(g.value()[4 * 2], -1.0, 1e-12);
  EXPECT_NEAR(g.value()[4 * 2 + 1], 1.0, 1e-12);
}

TEST(Probabilities, MatchDirectEvaluationOnFiveByFive) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    VtnConfig cfg = small_config(2, 1);
    cfg.beta = 0.3 + trial * 0.2;
    Tensor<double> u = randn({1, 5, 5, 4}, rng);
    Tensor<double> e = randn({1, 5, 5, 9, 2}, rng);
    Tape<double> t;
    auto g = group_sample_normalize(t.constant(u), cfg);
    auto p = infer_probabilities(t.constant(e), g.response, cfg);
    const auto ref = oracle::probabilities_and_field(u, e, 2, 1, cfg.beta);
    EXPECT_LT(max_abs_diff(p.value(), ref.probs), 1e-12);
  }
}

TEST(Aggregate, PointMassesAndUniformWindow) {
  VtnConfig cfg = small_config(1, 2);
  Tape<double> t;
  Tensor<double> p(Shape{1, 1, 3, 25, 1});
  p[0 * 25 + 12] = 1.0;                  // centre candidate
  p[1 * 25 + (2 + 2) * 5 + (1 + 2)] = 1.0;  // offset (2, 1)
  for (int j = 0; j < 25; ++j) p[2 * 25 + j] = 1.0 / 25.0;
  auto g = aggregate_warp_field(t.constant(p), cfg).value();
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 2.0);
  EXPECT_EQ(g[3], 1.0);
  EXPECT_EQ(g[4], 0.0);
  EXPECT_EQ(g[5], 0.0);
}

TEST(Aggregate, RoundingPastTheRadiusIsClamped) {
  VtnConfig cfg = small_config(1, 2);
  Tensor<double> p(Shape{1, 1, 1, 25, 1});
  // Row +2 sums to just above 1 in floating point; the exact row offset is 2.
  for (int j = 20; j < 24; ++j) p[j] = 1e-16;
  p[24] = 1.0;
  Parameter<double> pp("p", p);
  Tape<double> t;
  auto g = aggregate_warp_field(t.parameter(pp), cfg);
  EXPECT_EQ(g.value()[0], 2.0);
  EXPECT_LT(g.value()[1], 2.0);
  t.backward(sum(mul(g, t.constant(Tensor<double>(Shape{1, 1, 1, 1, 2}, {1.0, 1.0})))));
  // The clamped row component passes no gradient; the column one does.
  for (int j = 0; j < 25; ++j) EXPECT_EQ(pp.grad[j], static_cast<double>(j % 5 - 2)) << j;
}

TEST(VtnForward, ConstantInputIsUnchanged) {
  Rng rng(8);
  VtnConfig cfg;
  auto params = VtnParams<double>::init(cfg, rng);
  Tensor<double> u(Shape{2, 8, 8, 16}, 0.25);
  Tape<double> t;
  auto out = vtn_forward(t.constant(u), params, cfg, false);
  for (double v : out.logits.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.warped.value(), u);
}

TEST(VtnForward, MatchesChainedOracles) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    VtnConfig cfg = small_config(2, 1 + trial % 2);
    auto params = VtnParams<double>::init(cfg, rng);
    oracle::randomize_head(params, rng);
    Tensor<double> u = randn({2, 6, 4, 4}, rng);
    Tape<double> t;
    auto out = vtn_forward(t.constant(u), params, cfg, true);
    const auto ref = oracle::probabilities_and_field(u, out.logits.value(), cfg.groups, cfg.radius, cfg.beta);
    EXPECT_LT(max_abs_diff(out.probs.value(), ref.probs), 1e-10);
    EXPECT_LT(max_abs_diff(out.field.value(), ref.field), 1e-10);
    // Warp oracle: bilinear lookup of each group's channels at i + G(i).
    const auto& v = out.warped.value();
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t y = 0; y < 6; ++y)
        for (std::int64_t x = 0; x < 4; ++x)
          for (std::int64_t k = 0; k < 4; ++k) {
            const std::int64_t c = k / 2;
            const double sy = std::clamp(y + ref.field.at({b, y, x, c, 0}), 0.0, 5.0);
            const double sx = std::clamp(x + ref.field.at({b, y, x, c, 1}), 0.0, 3.0);
            const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(sy), 4);
            const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(sx), 2);
            const double fy = sy - y0, fx = sx - x0;
            const double ref_v = (1 - fy) * (1 - fx) * u.at({b, y0, x0, k}) + (1 - fy) * fx * u.at({b, y0, x0 + 1, k}) +
                                 fy * (1 - fx) * u.at({b, y0 + 1, x0, k}) + fy * fx * u.at({b, y0 + 1, x0 + 1, k});
            EXPECT_NEAR(v.at({b, y, x, k}), ref_v, 1e-10);
          }
  }
}

TEST(VtnForward, StructuralInvariantsProperty) {
  Rng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t groups = 1 + trial % 4, per = 1 + trial % 3, radius = 1 + trial % 2;
    VtnConfig cfg = small_config(groups, radius);
    cfg.beta = 0.2 + (trial % 7) * 0.5;
    auto params = VtnParams<double>::init(cfg, rng);
    oracle::randomize_head(params, rng, 2.0);
    Tensor<double> u = randn({1, 2 + 2 * (trial % 3), 2 + 2 * (trial % 4), groups * per}, rng, 3.0);
    Tape<double> t;
    auto out = vtn_forward(t.constant(u), params, cfg, true);
    const auto& p = out.probs.value();
    const std::int64_t n = cfg.candidates(), cells = p.numel() / (n * groups);
    for (std::int64_t i = 0; i < cells; ++i)
      for (std::int64_t c = 0; c < groups; ++c) {
        double s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += p[(i * n + j) * groups + c];
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
    for (double g : out.field.value().data()) ASSERT_LE(std::abs(g), static_cast<double>(radius));
    // Permute channels inside each group; P and G must not change.
    if (per > 1) {
      Tensor<double> up = u;
      for (std::int64_t pix = 0; pix < u.numel() / (groups * per); ++pix)
        for (std::int64_t c = 0; c < groups; ++c)
          std::reverse(up.ptr() + pix * groups * per + c * per, up.ptr() + pix * groups * per + (c + 1) * per);
      Tape<double> t2;
      auto out2 = vtn_forward(t2.constant(up), params, cfg, true);
      // Channel means may differ in the last bit from summation order.
      ASSERT_LT(max_abs_diff(out2.probs.value(), out.probs.value()), 1e-12);
      ASSERT_LT(max_abs_diff(out2.field.value(), out.field.value()), 1e-12);
    }
  }
}

TEST(VtnForward, FullPipelineGradientCheck) {
  Rng rng(12);
  VtnConfig cfg = small_config(2, 1, 2);
  cfg.feature_dim = 2;
  cfg.beta = 1.0;
  auto params = VtnParams<double>::init(cfg, rng);
  oracle::randomize_head(params, rng, 0.3);
  Parameter<double> pu("u", randn({1, 8, 8, 8}, rng));
  Tensor<double> w = randn({1, 8, 8, 8}, rng);
  auto leaves = params.parameters();
  leaves.push_back(&pu);
  auto f = [&](Tape<double>& t) {
    auto out = vtn_forward(t.parameter(pu), params, cfg, true);
    return sum(mul(out.warped, t.constant(w)));
  };
  EXPECT_LT(max_relative_error(f, leaves), 1e-4);
  // A negative single-width squeeze can zero the bottleneck and silence the
  // decoder; make sure this draw exercises the whole estimator.
  double head_grad = 0;
  for (double g : params.head_w.grad.data()) head_grad += std::abs(g);
  EXPECT_GT(head_grad, 1e-3);
}

TEST(VtnForward, DirectRegressionHeadStartsAtIdentity) {
  Rng rng(12);
  VtnConfig cfg;
  cfg.probabilistic = false;
  auto params = VtnParams<double>::init(cfg, rng);
  Tensor<double> u = randn({1, 8, 8, 16}, rng);
  Tape<double> t;
  auto out = vtn_forward(t.constant(u), params, cfg, true);
  for (double g : out.field.value().data()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(out.warped.value(), u);
}

// After a little training on the parts benchmark, groups warp differently.
TEST(VtnForward, TrainedGroupsProduceDistinctFields) {
  SceneSpec spec = SceneSpec::desk_default();
  const auto data = make_dataset(spec, 320, 32, 3);
  ModelSpec ms;
  ms.classes = spec.class_count();
  VtnConfig cfg;
  auto model = Model<float>::build(ms, cfg, 5);
  auto optim = OptimState<float>::init(model.parameters(), 0.01, 0.9, 5e-4);
  train_epoch(model, data.train, optim, TrainOptions{}, 1);
  std::vector<std::int64_t> idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  Tape<float> t;
  auto out = model.forward(t, data.test.batch<float>(idx), false);
  const auto& g = out.warp->field.value();
  const std::int64_t c = cfg.groups, cells = g.numel() / (c * 2);
  double best = 0;
  for (std::int64_t a = 0; a < c; ++a)
    for (std::int64_t b = a + 1; b < c; ++b) {
      double d = 0;
      for (std::int64_t i = 0; i < cells; ++i)
        d += std::hypot(g[(i * c + a) * 2] - g[(i * c + b) * 2], g[(i * c + a) * 2 + 1] - g[(i * c + b) * 2 + 1]);
      best = std::max(best, d / static_cast<double>(cells));
    }
  EXPECT_GT(best, 0.1);
}

}  // namespace
}  // namespace vtn
