// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives recorded on a Tape. Every op takes and returns
// Var handles of a single tape; values are computed eagerly.

#ifndef VTN_OPS_HPP_
#define VTN_OPS_HPP_

#include <cstdint>
#include <optional>
#include <type_traits>
#include <span>
#include <string_view>
#include <vector>

#include "vtn/tape.hpp"

namespace vtn {

// ---- elementwise -----------------------------------------------------------

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T s);
template <typename T> Var<T> add_scalar(Var<T> x, T s);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> tanh(Var<T> x);
// x[..., c] + b[c]
template <typename T> Var<T> add_bias(Var<T> x, Var<T> b);

// ---- shape and reductions -------------------------------------------------

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Sums out one axis; the result drops that axis.
template <typename T> Var<T> sum_axis(Var<T> x, std::int64_t axis);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
// out.shape[i] == x.shape[perm[i]]
template <typename T> Var<T> permute(Var<T> x, std::vector<std::int64_t> perm);
// Rows of x along axis 0.
template <typename T> Var<T> index_select(Var<T> x, std::span<const std::int64_t> rows);

// Plain-tensor permutation, shared by the op and by oracles.
template <typename T>
Tensor<T> permuted(const Tensor<T>& x, const std::vector<std::int64_t>& perm);

// ---- linear algebra and convolution -----------------------------------------

// [m,k] x [k,n] -> [m,n]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

// Cross-correlation with zero padding.
// x: [N,H,W,Cin] (or [H,W,Cin]), w: [kh,kw,Cin,Cout], b: [Cout].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, Conv2dOptions opt = {});

enum class Resample { kMaxPool2, kUpsample2 };

// x: [N,H,W,C] or [H,W,C]. Max-pool halves H and W (both must be even);
// upsample doubles them by nearest-neighbour replication.
template <typename T> Var<T> pool_resample(Var<T> x, Resample mode);
template <typename T> Var<T> maxpool2(Var<T> x) { return pool_resample(x, Resample::kMaxPool2); }
template <typename T> Var<T> upsample2(Var<T> x) { return pool_resample(x, Resample::kUpsample2); }

// ---- normalization and activation -----------------------------------------

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::int64_t channels = 1)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
  bool training = true;
};

// Normalizes over every axis but the last. In training mode batch statistics
// are used and `stats` is updated; otherwise the running statistics are used.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats,
                  BatchNormOptions opt = {});

// Group normalization without affine transform. x: [N, ..., Ch]; each sample's
// channels split into `groups` contiguous blocks, each standardized over its
// spatial extent and channels.
template <typename T>
Var<T> group_norm(Var<T> x, std::int64_t groups, double eps = 1e-5);

// softmax(x / beta) along `axis`. Entries with mask == 0 get probability
// exactly 0 (equivalent to a -inf logit). The mask, when given, has x's size.
template <typename T>
Var<T> softmax(Var<T> x, std::int64_t axis, T beta = T(1),
               std::span<const std::uint8_t> mask = {});

// ---- fault injection for the gradient-check harness ------------------------

namespace fault {
// Deliberately perturbs the backward pass of the named op ("" to reset).
void corrupt_backward(std::string_view op);
bool backward_corrupted(std::string_view op);
}  // namespace fault

}  // namespace vtn

#endif  // VTN_OPS_HPP_
