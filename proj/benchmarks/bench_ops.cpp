// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "vtn/ops.hpp"
#include "vtn/random.hpp"
#include "vtn/vtn_layer.hpp"
#include "vtn/warp.hpp"

namespace {

using namespace vtn;

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  Rng rng(1);
  Parameter<float> x("x", normal_tensor<float>(Shape{8, 32, 32, c}, 1.0, rng));
  Parameter<float> w("w", normal_tensor<float>(Shape{3, 3, c, 2 * c}, 0.1, rng));
  for (auto _ : state) {
    Tape<float> t;
    auto y = sum(conv2d(t.parameter(x), t.parameter(w), std::nullopt, Conv2dOptions{1, 1}));
    t.backward(y);
    benchmark::DoNotOptimize(w.grad.ptr());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_GroupedBilinear(benchmark::State& state) {
  const std::int64_t groups = state.range(0);
  Rng rng(2);
  Parameter<float> u("u", normal_tensor<float>(Shape{16, 8, 8, 16}, 1.0, rng));
  Parameter<float> g("g", normal_tensor<float>(Shape{16, 8, 8, groups, 2}, 1.0, rng));
  for (auto _ : state) {
    Tape<float> t;
    auto y = sum(grouped_bilinear_sample(t.parameter(u), t.parameter(g)));
    t.backward(y);
    benchmark::DoNotOptimize(g.grad.ptr());
  }
}
BENCHMARK(BM_GroupedBilinear)->Arg(1)->Arg(8)->Unit(benchmark::kMicrosecond);

void BM_VtnForward(benchmark::State& state) {
  VtnConfig cfg;
  cfg.groups = state.range(0);
  Rng rng(3);
  auto params = VtnParams<float>::init(cfg, rng);
  const Tensor<float> u = normal_tensor<float>(Shape{16, 8, 8, 16}, 1.0, rng);
  for (auto _ : state) {
    Tape<float> t;
    auto out = vtn_forward(t.constant(u), params, cfg, true);
    t.backward(sum(out.warped));
    benchmark::DoNotOptimize(params.head_w.grad.ptr());
  }
}
BENCHMARK(BM_VtnForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
