// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable bilinear sampling V(i) = U(i + G(i)).
//
// Offsets are (row, col) pixel displacements with rows growing downward.
// Source coordinates outside the image are clamped to the border; a clamped
// component receives zero positional gradient. Sampling at integral
// coordinates returns the source value without interpolation arithmetic, so
// a zero field is an exact identity.

#ifndef VTN_WARP_HPP_
#define VTN_WARP_HPP_

#include "vtn/tape.hpp"

namespace vtn {

// Per-pixel offsets of one channel group, shape [H,W,2].
template <typename T>
struct WarpField {
  Tensor<T> offsets;

  std::int64_t height() const { return offsets.dim(0); }
  std::int64_t width() const { return offsets.dim(1); }
  T row(std::int64_t y, std::int64_t x) const { return offsets[(y * width() + x) * 2]; }
  T col(std::int64_t y, std::int64_t x) const { return offsets[(y * width() + x) * 2 + 1]; }
};

// u: [B,H,W,K], field: [B,H,W,C,2] with C dividing K. Channel k is warped by
// the field of group k / (K / C).
template <typename T>
Var<T> grouped_bilinear_sample(Var<T> u, Var<T> field);

// Single map: u [H,W], field [H,W,2].
template <typename T>
Var<T> bilinear_sample(Var<T> u, Var<T> field);

}  // namespace vtn

#endif  // VTN_WARP_HPP_
