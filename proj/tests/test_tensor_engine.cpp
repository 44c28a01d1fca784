// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "vtn/errors.hpp"
#include "vtn/ops.hpp"
#include "vtn/random.hpp"
#include "vtn/tape.hpp"

namespace vtn {
namespace {

using testing::fd_error;
using testing::max_abs_diff;
using testing::randn;

// Plain six-loop cross-correlation used as the reference for conv2d.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          std::int64_t stride, std::int64_t pad) {
  const std::int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::int64_t kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> out(Shape{n, oh, ow, co});
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        for (std::int64_t o = 0; o < co; ++o) {
          double acc = b[o];
          for (std::int64_t dy = 0; dy < kh; ++dy)
            for (std::int64_t dx = 0; dx < kw; ++dx) {
              const std::int64_t sy = y * stride + dy - pad, sx = xx * stride + dx - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
              for (std::int64_t i = 0; i < ci; ++i) acc += x.at({s, sy, sx, i}) * w.at({dy, dx, i, o});
            }
          out.at({s, y, xx, o}) = acc;
        }
  return out;
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor<double>(Shape{2, 0}), ConfigError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor<double> t(Shape{2, 3});
  EXPECT_THROW(t.reshaped(Shape{4}), DimensionError);
  EXPECT_EQ(t.reshaped(Shape{3, 2}).shape(), (Shape{3, 2}));
}

TEST(Matmul, SmallExample) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  auto b = t.constant(Tensor<double>(Shape{2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(matmul(a, b).value(), Tensor<double>(Shape{2, 2}, {19, 22, 43, 50}));
}

TEST(Matmul, InnerDimensionMismatch) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>(Shape{2, 3}));
  auto b = t.constant(Tensor<double>(Shape{2, 3}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Conv2d, IdentityKernelReturnsInput) {
  Rng rng(1);
  Tape<double> t;
  Tensor<double> x = randn({1, 5, 5, 1}, rng);
  Tensor<double> w(Shape{3, 3, 1, 1});
  w.at({1, 1, 0, 0}) = 1;
  auto y = conv2d(t.constant(x), t.constant(w), std::nullopt, {.stride = 1, .pad = 1});
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, AveragingKernelOnOnes) {
  Tape<double> t;
  Tensor<double> x(Shape{1, 4, 4, 1}, 1.0);
  Tensor<double> w(Shape{3, 3, 1, 1}, 1.0 / 9.0);
  auto y = conv2d(t.constant(x), t.constant(w), std::nullopt, {.stride = 1, .pad = 1});
  EXPECT_NEAR(y.value().at({0, 1, 1, 0}), 1.0, 1e-15);
  EXPECT_NEAR(y.value().at({0, 0, 0, 0}), 4.0 / 9.0, 1e-15);
  EXPECT_NEAR(y.value().at({0, 0, 1, 0}), 6.0 / 9.0, 1e-15);
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t stride = 1 + trial % 2, pad = trial % 3, k = 1 + 2 * (trial % 2);
    Tensor<double> x = randn({2, 7, 7, 3}, rng), w = randn({k, k, 3, 4}, rng), b = randn({4}, rng);
    Tape<double> t;
    auto y = conv2d(t.constant(x), t.constant(w), t.constant(b), {.stride = stride, .pad = pad});
    const auto ref = naive_conv(x, w, b, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12) << "trial " << trial;
  }
}

TEST(Conv2d, ChannelMismatch) {
  Tape<double> t;
  auto x = t.constant(Tensor<double>(Shape{1, 4, 4, 2}));
  auto w = t.constant(Tensor<double>(Shape{3, 3, 3, 1}));
  EXPECT_THROW(conv2d(x, w, std::nullopt), DimensionError);
}

TEST(Resample, MaxPoolAndUpsample) {
  Tape<double> t;
  Tensor<double> x(Shape{1, 2, 2, 1}, {1, 5, 3, 2});
  auto p = maxpool2(t.constant(x));
  EXPECT_EQ(p.value(), Tensor<double>(Shape{1, 1, 1, 1}, {5}));
  auto u = upsample2(t.constant(Tensor<double>(Shape{1, 1, 1, 1}, {7})));
  EXPECT_EQ(u.value(), Tensor<double>(Shape{1, 2, 2, 1}, 7.0));
  EXPECT_THROW(maxpool2(t.constant(Tensor<double>(Shape{1, 3, 2, 1}))), ConfigError);
}

TEST(Softmax, TemperatureExample) {
  const double beta = 2.5;
  Tape<double> t;
  auto s = softmax(t.constant(Tensor<double>(Shape{2}, {0.0, beta * std::log(2.0)})), 0, beta);
  EXPECT_NEAR(s.value()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.value()[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  Tape<double> t;
  std::vector<std::uint8_t> mask{1, 0, 1};
  auto s = softmax(t.constant(Tensor<double>(Shape{3}, {1.0, 100.0, 1.0})), 0, 1.0, mask);
  EXPECT_EQ(s.value()[1], 0.0);
  EXPECT_NEAR(s.value()[0], 0.5, 1e-15);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> x = randn({3, 4, 6}, rng, 20.0);
    Tape<double> t;
    const std::int64_t axis = trial % 3;
    auto s = softmax(t.constant(x), axis, 0.5 + trial % 4);
    auto sums = sum_axis(s, axis);
    for (double v : sums.value().data()) EXPECT_NEAR(v, 1.0, 1e-12);
    for (double v : s.value().data()) EXPECT_GE(v, 0.0);
  }
}

TEST(GroupNorm, ConstantInputGivesZeros) {
  Tape<double> t;
  auto y = group_norm(t.constant(Tensor<double>(Shape{1, 3, 3, 4}, 2.5)), 2);
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(GroupNorm, StandardizesEveryGroupProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t groups = 1 + trial % 3, per = 2;
    Tensor<double> x = randn({2, 4, 3, groups * per}, rng, 3.0);
    for (auto& v : x.data()) v += 5.0;
    Tape<double> t;
    auto y = group_norm(t.constant(x), groups, 1e-300);
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t g = 0; g < groups; ++g) {
        double s = 0, ss = 0;
        int n = 0;
        for (std::int64_t p = 0; p < 12; ++p)
          for (std::int64_t k = g * per; k < (g + 1) * per; ++k) {
            const double v = y.value()[(b * 12 + p) * groups * per + k];
            s += v, ss += v * v, ++n;
          }
        EXPECT_NEAR(s / n, 0.0, 1e-12);
        EXPECT_NEAR(ss / n, 1.0, 1e-10);
      }
  }
}

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  Parameter<double> p("x", Tensor<double>(Shape{3}, {1, 2, 3}));
  t.backward(sum(t.parameter(p)));
  EXPECT_EQ(p.grad, Tensor<double>(Shape{3}, 1.0));
}

TEST(Backward, SumOfSquares) {
  Tape<double> t;
  Parameter<double> p("x", Tensor<double>(Shape{3}, {1, 2, 3}));
  t.backward(sum(square(t.parameter(p))));
  EXPECT_EQ(p.grad, Tensor<double>(Shape{3}, {2, 4, 6}));
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape<double> t;
  Parameter<double> p("x", Tensor<double>(Shape{3}, {1, 2, 3}));
  EXPECT_THROW(t.backward(square(t.parameter(p))), ContractError);
}

TEST(Backward, ReusedNodeAccumulates) {
  Tape<double> t;
  Parameter<double> p("x", Tensor<double>(Shape{2}, {1, -2}));
  auto x = t.parameter(p);
  t.backward(sum(add(mul(x, x), x)));
  EXPECT_EQ(p.grad, Tensor<double>(Shape{2}, {3, -3}));
}

TEST(Backward, IsDeterministic) {
  Rng rng(5);
  Tensor<double> x = randn({2, 6, 6, 3}, rng), w = randn({3, 3, 3, 4}, rng);
  auto run = [&] {
    Parameter<double> pw("w", w);
    Tape<double> t;
    auto y = relu(conv2d(t.constant(x), t.parameter(pw), std::nullopt, {.stride = 1, .pad = 1}));
    t.backward(mean(square(y)));
    return pw.grad;
  };
  EXPECT_EQ(run(), run());
}

// Finite differences on random small inputs for the engine primitives.
TEST(Backward, MatchesFiniteDifferencesProperty) {
  Rng rng(6);
  using Fn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Fn f;
  };
  std::vector<Case> cases{
      {"mul", {{3, 4}, {3, 4}}, [](auto&, auto& v) { return mul(v[0], v[1]); }},
      {"tanh", {{5}}, [](auto&, auto& v) { return tanh(v[0]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto&, auto& v) { return matmul(v[0], v[1]); }},
      {"conv2d",
       {{1, 5, 5, 2}, {3, 3, 2, 3}, {3}},
       [](auto&, auto& v) { return conv2d(v[0], v[1], v[2], {.stride = 2, .pad = 1}); }},
      {"maxpool2", {{1, 4, 4, 2}}, [](auto&, auto& v) { return maxpool2(v[0]); }},
      {"upsample2", {{1, 2, 3, 2}}, [](auto&, auto& v) { return upsample2(v[0]); }},
      {"softmax", {{3, 5}}, [](auto&, auto& v) { return softmax(v[0], 1, 0.7); }},
      {"group_norm", {{2, 3, 3, 4}}, [](auto&, auto& v) { return group_norm(v[0], 2); }},
      {"permute", {{2, 3, 4}}, [](auto&, auto& v) { return permute(v[0], {2, 0, 1}); }},
      {"sum_axis", {{2, 3, 4}}, [](auto&, auto& v) { return sum_axis(v[0], 1); }},
  };
  for (int trial = 0; trial < 100; ++trial) {
    const Case& c = cases[static_cast<std::size_t>(trial) % cases.size()];
    std::vector<Tensor<double>> in;
    for (const auto& s : c.shapes) in.push_back(randn(s, rng));
    EXPECT_LT(fd_error(c.f, in, rng), 1e-4) << c.name << " trial " << trial;
  }
}

TEST(Backward, BatchNormTrainingMatchesFiniteDifferences) {
  Rng rng(8);
  BatchNormStats<double> stats(3);
  auto f = [&](Tape<double>&, std::vector<Var<double>>& v) {
    BatchNormStats<double> scratch = stats;
    return batch_norm(v[0], v[1], v[2], scratch);
  };
  EXPECT_LT(fd_error(f, {randn({4, 2, 2, 3}, rng), randn({3}, rng), randn({3}, rng)}, rng), 1e-4);
}

TEST(BatchNorm, RunningStatisticsUpdate) {
  Tape<double> t;
  BatchNormStats<double> stats(1);
  auto x = t.constant(Tensor<double>(Shape{4, 1}, {1, 2, 3, 4}));
  auto g = t.constant(Tensor<double>(Shape{1}, {1.0}));
  auto b = t.constant(Tensor<double>(Shape{1}, {0.0}));
  batch_norm(x, g, b, stats, {.momentum = 0.5, .eps = 1e-5, .training = true});
  EXPECT_NEAR(stats.running_mean[0], 1.25, 1e-12);
  auto y = batch_norm(x, g, b, stats, {.momentum = 0.5, .eps = 1e-300, .training = false});
  EXPECT_NEAR(y.value()[0], (1.0 - 1.25) / std::sqrt(stats.running_var[0]), 1e-12);
}

}  // namespace
}  // namespace vtn
