// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/losses.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace vtn {

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int64_t> labels) {
  const auto& lv = logits.value();
  if (lv.rank() != 2) throw DimensionError("cross_entropy: expected [B,k], got " + to_string(lv.shape()));
  const std::int64_t b = lv.dim(0), k = lv.dim(1);
  if (k < 2) throw ConfigError("cross_entropy: need at least 2 classes");
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(b));
  }
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(b * k));
  T loss = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                      std::to_string(k) + ")");
    }
    const T* row = lv.ptr() + i * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T log_z = mx + std::log(z);
    for (std::int64_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  loss /= static_cast<T>(b);
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  return logits.tape->record(Tensor<T>::scalar(loss), {logits}, [probs, lab = std::move(lab), b, k](auto& ctx) {
    const T g = ctx.grad_out()[0] / static_cast<T>(b);
    T* dl = ctx.grad_in(0).ptr();
    for (std::int64_t i = 0; i < b; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        dl[i * k + j] += g * ((*probs)[i * k + j] - (j == lab[i] ? T(1) : T(0)));
      }
    }
  });
}

template <typename T>
Var<T> consistency_triplet_loss(Var<T> anchor, Var<T> positive, Var<T> negative, T alpha) {
  if (!(alpha > T(0))) throw ConfigError("consistency_triplet_loss: alpha must be > 0");
  const Shape& s = anchor.shape();
  if (positive.shape() != s || negative.shape() != s) {
    throw DimensionError("consistency_triplet_loss: shapes " + to_string(s) + ", " +
                         to_string(positive.shape()) + ", " + to_string(negative.shape()) + " differ");
  }
  if (s.size() != 3 && s.size() != 4) {
    throw DimensionError("consistency_triplet_loss: expected [H,W,K] or [T,H,W,K], got " + to_string(s));
  }
  const T triplets = s.size() == 4 ? static_cast<T>(s[0]) : T(1);
  Var<T> d_pos = sum_axis(square(sub(anchor, positive)), -1);
  Var<T> d_neg = sum_axis(square(sub(anchor, negative)), -1);
  Var<T> hinge = relu(add_scalar(sub(d_pos, d_neg), alpha));
  return scale(sum(hinge), T(1) / triplets);
}

template <typename T>
Var<T> square_consistency_loss(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) throw DimensionError("square_consistency_loss: shape mismatch");
  return sum(square(sub(a, b)));
}

template <typename T>
Var<T> total_loss(Var<T> task, Var<T> cons, T lambda) {
  if (lambda < T(0)) throw ConfigError("total_loss: lambda must be >= 0");
  if (task.value().numel() != 1 || cons.value().numel() != 1) {
    throw ContractError("total_loss: both terms must be scalars");
  }
  return add(reshape(task, Shape{}), reshape(scale(cons, lambda), Shape{}));
}

std::vector<TripletIndex> mine_triplets(std::span<const std::int64_t> labels, Rng& rng) {
  std::vector<TripletIndex> out;
  const std::int64_t n = static_cast<std::int64_t>(labels.size());
  std::vector<std::int64_t> pos, neg;
  for (std::int64_t a = 0; a < n; ++a) {
    pos.clear();
    neg.clear();
    for (std::int64_t j = 0; j < n; ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_neg(0, neg.size() - 1);
    const std::int64_t p = pos[pick_pos(rng)];
    const std::int64_t q = neg[pick_neg(rng)];
    out.push_back({a, p, q});
  }
  return out;
}

#define VTN_INSTANTIATE_LOSSES(T)                                                     \
  template Var<T> cross_entropy(Var<T>, std::span<const std::int64_t>);               \
  template Var<T> consistency_triplet_loss(Var<T>, Var<T>, Var<T>, T);                \
  template Var<T> square_consistency_loss(Var<T>, Var<T>);                            \
  template Var<T> total_loss(Var<T>, Var<T>, T);

VTN_INSTANTIATE_LOSSES(float)
VTN_INSTANTIATE_LOSSES(double)

}  // namespace vtn
