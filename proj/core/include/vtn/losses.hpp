// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VTN_LOSSES_HPP_
#define VTN_LOSSES_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "vtn/ops.hpp"
#include "vtn/random.hpp"

namespace vtn {

// Mean over the batch of -log softmax(logits)[label]. logits: [B,k], k >= 2.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int64_t> labels);

// Hinge on squared channel-vector distances, summed over pixels:
//   sum_i [ |V(i)-V'(i)|^2 - |V(i)-V''(i)|^2 + alpha ]_+
// Inputs are [H,W,K] for one triplet, or [T,H,W,K] for T triplets, in which
// case the per-triplet sums are averaged.
template <typename T>
Var<T> consistency_triplet_loss(Var<T> anchor, Var<T> positive, Var<T> negative, T alpha);

// sum_i |V(i)-V'(i)|^2. Admits the trivial all-constant minimizer; kept to
// demonstrate that failure mode.
template <typename T>
Var<T> square_consistency_loss(Var<T> a, Var<T> b);

// task + lambda * cons
template <typename T>
Var<T> total_loss(Var<T> task, Var<T> cons, T lambda);

struct TripletIndex {
  std::int64_t anchor = 0, positive = 0, negative = 0;
  bool operator==(const TripletIndex&) const = default;
};

// One triplet per sample that has a same-class partner and a different-class
// sample in the batch, with positive and negative drawn uniformly.
std::vector<TripletIndex> mine_triplets(std::span<const std::int64_t> labels, Rng& rng);

}  // namespace vtn

#endif  // VTN_LOSSES_HPP_
