// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Plain square-loss alignment of a free feature map against shifted copies of
// itself. Only a spatially constant map reaches zero loss, so gradient
// descent collapses the features. Shared by the unit tests and the acceptance
// binary.

#ifndef VTN_TESTS_PITFALL_HPP_
#define VTN_TESTS_PITFALL_HPP_

#include <cstdint>

#include "vtn/losses.hpp"
#include "vtn/ops.hpp"
#include "vtn/random.hpp"
#include "vtn/warp.hpp"

namespace vtn::pitfall {

struct Result {
  double initial_variance = 0;
  double final_variance = 0;  // mean over channels of the spatial variance
  double final_loss = 0;
  std::int64_t steps = 0;
};

inline double spatial_variance(const Tensor<double>& f) {
  const std::int64_t k = f.dim(2), n = f.numel() / k;
  double total = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    double s = 0, ss = 0;
    for (std::int64_t i = 0; i < n; ++i) s += f[i * k + c];
    const double mean = s / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) ss += (f[i * k + c] - mean) * (f[i * k + c] - mean);
    total += ss / static_cast<double>(n);
  }
  return total / static_cast<double>(k);
}

inline Result optimize(std::int64_t h, std::int64_t w, std::int64_t k, std::int64_t steps, double lr,
                       std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> f("features", normal_tensor<double>({h, w, k}, 1.0, rng));
  // Unit shifts along both axes stand in for the unknown deformation
  // between two instances.
  std::vector<Tensor<double>> fields;
  for (auto [dy, dx] : {std::pair{1.0, 0.0}, std::pair{0.0, 1.0}, std::pair{-1.0, 0.0}, std::pair{0.0, -1.0}}) {
    Tensor<double> s(Shape{1, h, w, 1, 2});
    for (std::int64_t i = 0; i < h * w; ++i) s[2 * i] = dy, s[2 * i + 1] = dx;
    fields.push_back(std::move(s));
  }
  Result r;
  r.initial_variance = spatial_variance(f.value);
  for (std::int64_t step = 0; step < steps; ++step) {
    Tape<double> t;
    Var<double> v = reshape(t.parameter(f), Shape{1, h, w, k});
    Var<double> loss = t.constant(Tensor<double>::scalar(0.0));
    for (const auto& s : fields) {
      loss = add(loss, square_consistency_loss(v, grouped_bilinear_sample(v, t.constant(s))));
    }
    f.zero_grad();
    t.backward(loss);
    for (std::int64_t i = 0; i < f.value.numel(); ++i) f.value[i] -= lr * f.grad[i];
    r.final_loss = loss.value().item();
  }
  r.final_variance = spatial_variance(f.value);
  r.steps = steps;
  return r;
}

}  // namespace vtn::pitfall

#endif  // VTN_TESTS_PITFALL_HPP_
