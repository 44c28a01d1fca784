// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VTN_RANDOM_HPP_
#define VTN_RANDOM_HPP_

#include <cstdint>
#include <random>

#include "vtn/tensor.hpp"

namespace vtn {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace vtn

#endif  // VTN_RANDOM_HPP_
