// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/warp.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "vtn/ops.hpp"

namespace vtn {

namespace {

// Interpolation cell along one axis.
template <typename T>
struct AxisSample {
  std::int64_t i0 = 0, i1 = 0;
  T frac = 0;
  bool differentiable = true;  // false when the coordinate was clamped
};

template <typename T>
AxisSample<T> locate(T coord, std::int64_t size) {
  AxisSample<T> s;
  if (size == 1) {
    s.differentiable = false;
    return s;
  }
  const T hi = static_cast<T>(size - 1);
  if (coord < T(0)) {
    coord = T(0);
    s.differentiable = false;
  } else if (coord > hi) {
    coord = hi;
    s.differentiable = false;
  }
  s.i0 = std::min(static_cast<std::int64_t>(std::floor(coord)), size - 2);
  s.i1 = s.i0 + 1;
  s.frac = coord - static_cast<T>(s.i0);
  return s;
}

struct SampleGeom {
  std::int64_t b, h, w, k, c;
};

}  // namespace

template <typename T>
Var<T> grouped_bilinear_sample(Var<T> u, Var<T> field) {
  const auto& uv = u.value();
  const auto& fv = field.value();
  if (uv.rank() != 4 || fv.rank() != 5 || fv.dim(4) != 2 || fv.dim(0) != uv.dim(0) ||
      fv.dim(1) != uv.dim(1) || fv.dim(2) != uv.dim(2) || uv.dim(3) % fv.dim(3) != 0) {
    throw DimensionError("bilinear_sample: features " + to_string(uv.shape()) +
                         " incompatible with field " + to_string(fv.shape()));
  }
  const SampleGeom g{uv.dim(0), uv.dim(1), uv.dim(2), uv.dim(3), fv.dim(3)};
  const std::int64_t per = g.k / g.c;

  Tensor<T> out(uv.shape());
  const T* up = uv.ptr();
  const T* fp = fv.ptr();
  for (std::int64_t b = 0; b < g.b; ++b) {
    const T* img = up + b * g.h * g.w * g.k;
    for (std::int64_t y = 0; y < g.h; ++y) {
      for (std::int64_t x = 0; x < g.w; ++x) {
        const std::int64_t pix = (b * g.h + y) * g.w + x;
        T* o = out.ptr() + pix * g.k;
        for (std::int64_t c = 0; c < g.c; ++c) {
          const T sy = static_cast<T>(y) + fp[(pix * g.c + c) * 2];
          const T sx = static_cast<T>(x) + fp[(pix * g.c + c) * 2 + 1];
          const auto ay = locate(sy, g.h);
          const auto ax = locate(sx, g.w);
          const T* p00 = img + (ay.i0 * g.w + ax.i0) * g.k;
          const T* p01 = img + (ay.i0 * g.w + ax.i1) * g.k;
          const T* p10 = img + (ay.i1 * g.w + ax.i0) * g.k;
          const T* p11 = img + (ay.i1 * g.w + ax.i1) * g.k;
          const bool iy = ay.frac == T(0) || ay.frac == T(1);
          const bool ix = ax.frac == T(0) || ax.frac == T(1);
          if (iy && ix) {
            const T* src = ay.frac == T(0) ? (ax.frac == T(0) ? p00 : p01) : (ax.frac == T(0) ? p10 : p11);
            for (std::int64_t k = c * per; k < (c + 1) * per; ++k) o[k] = src[k];
            continue;
          }
          // lerp form: exact on constant neighbourhoods
          const T fy = ay.frac, fx = ax.frac;
          for (std::int64_t k = c * per; k < (c + 1) * per; ++k) {
            const T top = p00[k] + fx * (p01[k] - p00[k]);
            const T bot = p10[k] + fx * (p11[k] - p10[k]);
            o[k] = top + fy * (bot - top);
          }
        }
      }
    }
  }

  return u.tape->record(std::move(out), {u, field}, [g, per](auto& ctx) {
    const T* gp = ctx.grad_out().ptr();
    const T* up = ctx.in(0).ptr();
    const T* fp = ctx.in(1).ptr();
    T* du = ctx.needs(0) ? ctx.grad_in(0).ptr() : nullptr;
    T* df = ctx.needs(1) ? ctx.grad_in(1).ptr() : nullptr;
    for (std::int64_t b = 0; b < g.b; ++b) {
      const std::int64_t img_off = b * g.h * g.w * g.k;
      for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t x = 0; x < g.w; ++x) {
          const std::int64_t pix = (b * g.h + y) * g.w + x;
          const T* go = gp + pix * g.k;
          for (std::int64_t c = 0; c < g.c; ++c) {
            const T sy = static_cast<T>(y) + fp[(pix * g.c + c) * 2];
            const T sx = static_cast<T>(x) + fp[(pix * g.c + c) * 2 + 1];
            const auto ay = locate(sy, g.h);
            const auto ax = locate(sx, g.w);
            const std::int64_t o00 = img_off + (ay.i0 * g.w + ax.i0) * g.k;
            const std::int64_t o01 = img_off + (ay.i0 * g.w + ax.i1) * g.k;
            const std::int64_t o10 = img_off + (ay.i1 * g.w + ax.i0) * g.k;
            const std::int64_t o11 = img_off + (ay.i1 * g.w + ax.i1) * g.k;
            const T fy = ay.frac, fx = ax.frac;
            T dy = 0, dx = 0;
            for (std::int64_t k = c * per; k < (c + 1) * per; ++k) {
              const T gk = go[k];
              if (du) {
                du[o00 + k] += gk * (T(1) - fy) * (T(1) - fx);
                du[o01 + k] += gk * (T(1) - fy) * fx;
                du[o10 + k] += gk * fy * (T(1) - fx);
                du[o11 + k] += gk * fy * fx;
              }
              if (df) {
                const T u00 = up[o00 + k], u01 = up[o01 + k], u10 = up[o10 + k], u11 = up[o11 + k];
                dy += gk * ((T(1) - fx) * (u10 - u00) + fx * (u11 - u01));
                dx += gk * ((T(1) - fy) * (u01 - u00) + fy * (u11 - u10));
              }
            }
            if (df) {
              if (ay.differentiable) df[(pix * g.c + c) * 2] += dy;
              if (ax.differentiable) df[(pix * g.c + c) * 2 + 1] += dx;
            }
          }
        }
      }
    }
    if (df && fault::backward_corrupted("bilinear_sample")) {
      for (auto& v : ctx.grad_in(1).data()) v *= T(1.5);
    }
  });
}

template <typename T>
Var<T> bilinear_sample(Var<T> u, Var<T> field) {
  const auto& uv = u.value();
  const auto& fv = field.value();
  if (uv.rank() != 2 || fv.rank() != 3 || fv.dim(0) != uv.dim(0) || fv.dim(1) != uv.dim(1) ||
      fv.dim(2) != 2) {
    throw DimensionError("bilinear_sample: map " + to_string(uv.shape()) + " incompatible with field " +
                         to_string(fv.shape()));
  }
  const std::int64_t h = uv.dim(0), w = uv.dim(1);
  Var<T> v = grouped_bilinear_sample(reshape(u, Shape{1, h, w, 1}), reshape(field, Shape{1, h, w, 1, 2}));
  return reshape(v, Shape{h, w});
}

template Var<float> grouped_bilinear_sample(Var<float>, Var<float>);
template Var<double> grouped_bilinear_sample(Var<double>, Var<double>);
template Var<float> bilinear_sample(Var<float>, Var<float>);
template Var<double> bilinear_sample(Var<double>, Var<double>);

}  // namespace vtn
