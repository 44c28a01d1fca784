// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

namespace vtn {

namespace fault {
namespace {
std::string& corrupted_op() {
  static std::string op;
  return op;
}
}  // namespace

void corrupt_backward(std::string_view op) { corrupted_op() = std::string(op); }
bool backward_corrupted(std::string_view op) { return !op.empty() && corrupted_op() == op; }
}  // namespace fault

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T s = T(1)) {
  T* d = dst.ptr();
  const T* g = src.ptr();
  const std::int64_t n = dst.numel();
  for (std::int64_t i = 0; i < n; ++i) d[i] += s * g[i];
}

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("add", av, bv);
  Tensor<T> out = av;
  accumulate(out, bv);
  return a.tape->record(std::move(out), {a, b}, [](auto& ctx) {
    if (ctx.needs(0)) accumulate(ctx.grad_in(0), ctx.grad_out());
    if (ctx.needs(1)) accumulate(ctx.grad_in(1), ctx.grad_out());
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("sub", av, bv);
  Tensor<T> out = av;
  accumulate(out, bv, T(-1));
  return a.tape->record(std::move(out), {a, b}, [](auto& ctx) {
    if (ctx.needs(0)) accumulate(ctx.grad_in(0), ctx.grad_out());
    if (ctx.needs(1)) accumulate(ctx.grad_in(1), ctx.grad_out(), T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor<T> out = av;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [](auto& ctx) {
    const auto& g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto& da = ctx.grad_in(0);
      const auto& bv = ctx.in(1);
      for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * bv[i];
    }
    if (ctx.needs(1)) {
      auto& db = ctx.grad_in(1);
      const auto& av = ctx.in(0);
      for (std::int64_t i = 0; i < g.numel(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= s;
  return x.tape->record(std::move(out), {x}, [s](auto& ctx) {
    accumulate(ctx.grad_in(0), ctx.grad_out(), s);
  });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v += s;
  return x.tape->record(std::move(out), {x}, [](auto& ctx) {
    accumulate(ctx.grad_in(0), ctx.grad_out());
  });
}

template <typename T>
Var<T> square(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= v;
  return x.tape->record(std::move(out), {x}, [](auto& ctx) {
    const auto& g = ctx.grad_out();
    const auto& xv = ctx.in(0);
    auto& dx = ctx.grad_in(0);
    for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += T(2) * xv[i] * g[i];
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return x.tape->record(std::move(out), {x}, [](auto& ctx) {
    const auto& g = ctx.grad_out();
    const auto& y = ctx.out();
    auto& dx = ctx.grad_in(0);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (y[i] > T(0)) dx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return x.tape->record(std::move(out), {x}, [](auto& ctx) {
    const auto& g = ctx.grad_out();
    const auto& y = ctx.out();
    auto& dx = ctx.grad_in(0);
    for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  const std::int64_t c = bv.numel();
  if (xv.rank() == 0 || xv.dim(xv.rank() - 1) != c) {
    throw DimensionError("add_bias: bias " + to_string(bv.shape()) + " vs input " +
                         to_string(xv.shape()));
  }
  Tensor<T> out = xv;
  const std::int64_t rows = out.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t k = 0; k < c; ++k) out[r * c + k] += bv[k];
  }
  return x.tape->record(std::move(out), {x, b}, [c, rows](auto& ctx) {
    const auto& g = ctx.grad_out();
    if (ctx.needs(0)) accumulate(ctx.grad_in(0), g);
    if (ctx.needs(1)) {
      auto& db = ctx.grad_in(1);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t k = 0; k < c; ++k) db[k] += g[r * c + k];
      }
    }
  });
}

// ---- shape and reductions -------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  return x.tape->record(Tensor<T>::scalar(s), {x}, [](auto& ctx) {
    const T g = ctx.grad_out()[0];
    for (auto& v : ctx.grad_in(0).data()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

template <typename T>
Var<T> sum_axis(Var<T> x, std::int64_t axis) {
  const auto& xv = x.value();
  axis = normalize_axis(axis, xv.rank(), "sum_axis");
  const AxisSplit sp = split_at(xv.shape(), axis);
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + axis);
  Tensor<T> out(out_shape);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t k = 0; k < sp.n; ++k) {
      const T* src = xv.ptr() + (o * sp.n + k) * sp.inner;
      T* dst = out.ptr() + o * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return x.tape->record(std::move(out), {x}, [sp](auto& ctx) {
    const auto& g = ctx.grad_out();
    auto& dx = ctx.grad_in(0);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t k = 0; k < sp.n; ++k) {
        T* dst = dx.ptr() + (o * sp.n + k) * sp.inner;
        const T* src = g.ptr() + o * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [](auto& ctx) {
    auto& dx = ctx.grad_in(0);
    const auto& g = ctx.grad_out();
    for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
  });
}

namespace {

// Calls f(src_offset, dst_offset) for every element, with dst in row-major
// order of the permuted shape.
template <typename F>
void for_each_permuted(const Shape& in_shape, const std::vector<std::int64_t>& perm, F&& f) {
  const std::size_t rank = in_shape.size();
  std::vector<std::int64_t> in_stride(rank, 1);
  for (std::int64_t i = static_cast<std::int64_t>(rank) - 2; i >= 0; --i) {
    in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  }
  std::vector<std::int64_t> out_shape(rank), src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  if (rank == 0) {
    f(0, 0);
    return;
  }
  std::vector<std::int64_t> idx(rank, 0);
  const std::int64_t n = numel(in_shape);
  const std::int64_t last = out_shape[rank - 1];
  const std::int64_t last_stride = src_stride[rank - 1];
  std::int64_t src = 0;
  for (std::int64_t dst = 0; dst < n; dst += last) {
    for (std::int64_t j = 0; j < last; ++j) f(src + j * last_stride, dst + j);
    // advance the odometer over all but the innermost axis
    for (std::int64_t a = static_cast<std::int64_t>(rank) - 2; a >= 0; --a) {
      ++idx[a];
      src += src_stride[a];
      if (idx[a] < out_shape[a]) break;
      src -= src_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
}

std::vector<std::int64_t> check_perm(const std::vector<std::int64_t>& perm, std::size_t rank) {
  if (perm.size() != rank) throw DimensionError("permute: permutation rank mismatch");
  std::vector<std::int64_t> inv(rank, -1);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] < 0 || perm[i] >= static_cast<std::int64_t>(rank) || inv[perm[i]] != -1) {
      throw DimensionError("permute: invalid permutation");
    }
    inv[perm[i]] = static_cast<std::int64_t>(i);
  }
  return inv;
}

}  // namespace

template <typename T>
Tensor<T> permuted(const Tensor<T>& x, const std::vector<std::int64_t>& perm) {
  check_perm(perm, x.shape().size());
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape()[perm[i]];
  Tensor<T> out(out_shape);
  const T* s = x.ptr();
  T* d = out.ptr();
  for_each_permuted(x.shape(), perm, [&](std::int64_t si, std::int64_t di) { d[di] = s[si]; });
  return out;
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<std::int64_t> perm) {
  Tensor<T> out = permuted(x.value(), perm);
  Shape in_shape = x.value().shape();
  return x.tape->record(std::move(out), {x}, [perm = std::move(perm), in_shape](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    T* dx = ctx.grad_in(0).ptr();
    for_each_permuted(in_shape, perm, [&](std::int64_t si, std::int64_t di) { dx[si] += g[di]; });
  });
}

template <typename T>
Var<T> index_select(Var<T> x, std::span<const std::int64_t> rows) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("index_select on a scalar");
  const std::int64_t n = xv.dim(0);
  const std::int64_t row = xv.numel() / n;
  if (rows.empty()) throw DimensionError("index_select: empty index list");
  Shape out_shape = xv.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw DimensionError("index_select: row out of range");
    std::copy_n(xv.ptr() + rows[r] * row, row, out.ptr() + r * row);
  }
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x}, [idx = std::move(idx), row](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    T* dx = ctx.grad_in(0).ptr();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::int64_t k = 0; k < row; ++k) dx[idx[r] * row + k] += g[r * row + k];
    }
  });
}

// ---- linear algebra and convolution -----------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(av.shape()) + " and " +
                         to_string(bv.shape()));
  }
  const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out(Shape{m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    T* c = out.ptr() + i * n;
    for (std::int64_t t = 0; t < k; ++t) {
      const T s = av[i * k + t];
      const T* brow = bv.ptr() + t * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += s * brow[j];
    }
  }
  return a.tape->record(std::move(out), {a, b}, [m, k, n](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    if (ctx.needs(0)) {
      const T* bp = ctx.in(1).ptr();
      T* da = ctx.grad_in(0).ptr();
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t t = 0; t < k; ++t) {
          T s = 0;
          for (std::int64_t j = 0; j < n; ++j) s += g[i * n + j] * bp[t * n + j];
          da[i * k + t] += s;
        }
      }
    }
    if (ctx.needs(1)) {
      const T* ap = ctx.in(0).ptr();
      T* db = ctx.grad_in(1).ptr();
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t t = 0; t < k; ++t) {
          const T s = ap[i * k + t];
          for (std::int64_t j = 0; j < n; ++j) db[t * n + j] += s * g[i * n + j];
        }
      }
    }
  });
}

namespace {

struct ConvGeom {
  std::int64_t n, h, w, cin, kh, kw, cout, ho, wo, stride, pad;
};

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, Conv2dOptions opt) {
  const auto& xv0 = x.value();
  if (xv0.rank() == 3) {
    Shape s = xv0.shape();
    Var<T> y = conv2d(reshape(x, Shape{1, s[0], s[1], s[2]}), w, b, opt);
    const Shape& ys = y.shape();
    return reshape(y, Shape{ys[1], ys[2], ys[3]});
  }
  const auto& xv = xv0;
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(2) != xv.dim(3)) {
    throw DimensionError("conv2d: input " + to_string(xv.shape()) + " incompatible with kernel " +
                         to_string(wv.shape()));
  }
  if (opt.stride < 1 || opt.pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");
  if (wv.dim(0) % 2 == 0 || wv.dim(1) % 2 == 0) throw ConfigError("conv2d: kernel sizes must be odd");
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(1), wv.dim(3), 0, 0,
             opt.stride, opt.pad};
  const std::int64_t span_h = g.h + 2 * g.pad - g.kh;
  const std::int64_t span_w = g.w + 2 * g.pad - g.kw;
  if (span_h < 0 || span_w < 0 || span_h % g.stride != 0 || span_w % g.stride != 0) {
    throw ConfigError("conv2d: non-integral output size for input " + to_string(xv.shape()) +
                      " kernel " + to_string(wv.shape()) + " stride " + std::to_string(g.stride) +
                      " pad " + std::to_string(g.pad));
  }
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;

  std::vector<Var<T>> inputs{x, w};
  const T* bias = nullptr;
  if (b) {
    if (b->value().numel() != g.cout) throw DimensionError("conv2d: bias size mismatch");
    inputs.push_back(*b);
    bias = b->value().ptr();
  }

  Tensor<T> out(Shape{g.n, g.ho, g.wo, g.cout});
  const T* xp = xv.ptr();
  const T* wp = wv.ptr();
  T* op = out.ptr();
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oy = 0; oy < g.ho; ++oy) {
      for (std::int64_t ox = 0; ox < g.wo; ++ox) {
        T* o = op + ((n * g.ho + oy) * g.wo + ox) * g.cout;
        if (bias) std::copy_n(bias, g.cout, o);
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            const T* in = xp + ((n * g.h + iy) * g.w + ix) * g.cin;
            const T* wk = wp + (ky * g.kw + kx) * g.cin * g.cout;
            for (std::int64_t ci = 0; ci < g.cin; ++ci) {
              const T v = in[ci];
              const T* wr = wk + ci * g.cout;
              for (std::int64_t co = 0; co < g.cout; ++co) o[co] += v * wr[co];
            }
          }
        }
      }
    }
  }

  const bool has_bias = b.has_value();
  return x.tape->record(std::move(out), inputs, [g, has_bias](auto& ctx) {
    const T* gp = ctx.grad_out().ptr();
    const T* xp = ctx.in(0).ptr();
    const T* wp = ctx.in(1).ptr();
    const bool need_x = ctx.needs(0), need_w = ctx.needs(1);
    T* dx = need_x ? ctx.grad_in(0).ptr() : nullptr;
    T* dw = need_w ? ctx.grad_in(1).ptr() : nullptr;
    if (has_bias && ctx.needs(2)) {
      T* db = ctx.grad_in(2).ptr();
      const std::int64_t rows = g.n * g.ho * g.wo;
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t co = 0; co < g.cout; ++co) db[co] += gp[r * g.cout + co];
      }
    }
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t oy = 0; oy < g.ho; ++oy) {
        for (std::int64_t ox = 0; ox < g.wo; ++ox) {
          const T* go = gp + ((n * g.ho + oy) * g.wo + ox) * g.cout;
          for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.w) continue;
              const std::int64_t in_off = ((n * g.h + iy) * g.w + ix) * g.cin;
              const std::int64_t w_off = (ky * g.kw + kx) * g.cin * g.cout;
              for (std::int64_t ci = 0; ci < g.cin; ++ci) {
                const T* wr = wp + w_off + ci * g.cout;
                if (need_x) {
                  T s = 0;
                  for (std::int64_t co = 0; co < g.cout; ++co) s += go[co] * wr[co];
                  dx[in_off + ci] += s;
                }
                if (need_w) {
                  const T v = xp[in_off + ci];
                  T* dwr = dw + w_off + ci * g.cout;
                  for (std::int64_t co = 0; co < g.cout; ++co) dwr[co] += v * go[co];
                }
              }
            }
          }
        }
      }
    }
    if (need_w && fault::backward_corrupted("conv2d")) {
      auto& dwt = ctx.grad_in(1);
      for (auto& v : dwt.data()) v *= T(1.5);
    }
  });
}

template <typename T>
Var<T> pool_resample(Var<T> x, Resample mode) {
  const auto& xv0 = x.value();
  if (xv0.rank() == 3) {
    Shape s = xv0.shape();
    Var<T> y = pool_resample(reshape(x, Shape{1, s[0], s[1], s[2]}), mode);
    const Shape& ys = y.shape();
    return reshape(y, Shape{ys[1], ys[2], ys[3]});
  }
  const auto& xv = xv0;
  if (xv.rank() != 4) throw DimensionError("pool_resample: expected [N,H,W,C], got " + to_string(xv.shape()));
  const std::int64_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);

  if (mode == Resample::kMaxPool2) {
    if (h % 2 != 0 || w % 2 != 0) {
      throw ConfigError("maxpool2: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                        " must be even");
    }
    const std::int64_t ho = h / 2, wo = w / 2;
    Tensor<T> out(Shape{n, ho, wo, c});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    const T* xp = xv.ptr();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const std::int64_t o = ((b * ho + oy) * wo + ox) * c;
          for (std::int64_t k = 0; k < c; ++k) {
            std::int64_t best = ((b * h + 2 * oy) * w + 2 * ox) * c + k;
            for (std::int64_t dy = 0; dy < 2; ++dy) {
              for (std::int64_t dx = 0; dx < 2; ++dx) {
                const std::int64_t i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + k;
                if (xp[i] > xp[best]) best = i;
              }
            }
            out[o + k] = xp[best];
            (*argmax)[o + k] = best;
          }
        }
      }
    }
    return x.tape->record(std::move(out), {x}, [argmax](auto& ctx) {
      const auto& g = ctx.grad_out();
      auto& dx = ctx.grad_in(0);
      for (std::int64_t i = 0; i < g.numel(); ++i) dx[(*argmax)[i]] += g[i];
    });
  }

  const std::int64_t ho = 2 * h, wo = 2 * w;
  Tensor<T> out(Shape{n, ho, wo, c});
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        std::copy_n(xv.ptr() + ((b * h + oy / 2) * w + ox / 2) * c, c,
                    out.ptr() + ((b * ho + oy) * wo + ox) * c);
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [n, h, w, c](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    T* dx = ctx.grad_in(0).ptr();
    const std::int64_t ho = 2 * h, wo = 2 * w;
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const T* src = g + ((b * ho + oy) * wo + ox) * c;
          T* dst = dx + ((b * h + oy / 2) * w + ox / 2) * c;
          for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  });
}

// ---- normalization and activation -----------------------------------------

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats,
                  BatchNormOptions opt) {
  const auto& xv = x.value();
  if (xv.rank() < 1) throw DimensionError("batch_norm on a scalar");
  const std::int64_t c = xv.dim(xv.rank() - 1);
  const std::int64_t m = xv.numel() / c;
  if (gamma.value().numel() != c || beta.value().numel() != c ||
      stats.running_mean.numel() != c || stats.running_var.numel() != c) {
    throw DimensionError("batch_norm: parameter size does not match " + std::to_string(c) +
                         " channels");
  }
  if (opt.eps <= 0) throw ConfigError("batch_norm: eps must be positive");

  auto mu = std::make_shared<std::vector<T>>(c, T(0));
  auto inv_std = std::make_shared<std::vector<T>>(c, T(0));
  const T* xp = xv.ptr();
  if (opt.training) {
    std::vector<T> var(c, T(0));
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t k = 0; k < c; ++k) (*mu)[k] += xp[r * c + k];
    }
    for (auto& v : *mu) v /= static_cast<T>(m);
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t k = 0; k < c; ++k) {
        const T d = xp[r * c + k] - (*mu)[k];
        var[k] += d * d;
      }
    }
    const T mom = static_cast<T>(opt.momentum);
    for (std::int64_t k = 0; k < c; ++k) {
      var[k] /= static_cast<T>(m);
      (*inv_std)[k] = T(1) / std::sqrt(var[k] + static_cast<T>(opt.eps));
      const T unbiased = m > 1 ? var[k] * static_cast<T>(m) / static_cast<T>(m - 1) : var[k];
      stats.running_mean[k] = mom * stats.running_mean[k] + (T(1) - mom) * (*mu)[k];
      stats.running_var[k] = mom * stats.running_var[k] + (T(1) - mom) * unbiased;
    }
  } else {
    for (std::int64_t k = 0; k < c; ++k) {
      (*mu)[k] = stats.running_mean[k];
      (*inv_std)[k] = T(1) / std::sqrt(stats.running_var[k] + static_cast<T>(opt.eps));
    }
  }

  Tensor<T> out(xv.shape());
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t k = 0; k < c; ++k) {
      const std::int64_t i = r * c + k;
      out[i] = gp[k] * (xp[i] - (*mu)[k]) * (*inv_std)[k] + bp[k];
    }
  }
  const bool training = opt.training;
  return x.tape->record(std::move(out), {x, gamma, beta}, [mu, inv_std, m, c, training](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    const T* xp = ctx.in(0).ptr();
    const T* gp = ctx.in(1).ptr();
    std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t k = 0; k < c; ++k) {
        const std::int64_t i = r * c + k;
        const T xhat = (xp[i] - (*mu)[k]) * (*inv_std)[k];
        sum_g[k] += g[i];
        sum_gx[k] += g[i] * xhat;
      }
    }
    if (ctx.needs(1)) {
      T* dg = ctx.grad_in(1).ptr();
      for (std::int64_t k = 0; k < c; ++k) dg[k] += sum_gx[k];
    }
    if (ctx.needs(2)) {
      T* db = ctx.grad_in(2).ptr();
      for (std::int64_t k = 0; k < c; ++k) db[k] += sum_g[k];
    }
    if (ctx.needs(0)) {
      T* dx = ctx.grad_in(0).ptr();
      const T inv_m = T(1) / static_cast<T>(m);
      for (std::int64_t r = 0; r < m; ++r) {
        for (std::int64_t k = 0; k < c; ++k) {
          const std::int64_t i = r * c + k;
          const T s = gp[k] * (*inv_std)[k];
          if (training) {
            const T xhat = (xp[i] - (*mu)[k]) * (*inv_std)[k];
            dx[i] += s * (g[i] - sum_g[k] * inv_m - xhat * sum_gx[k] * inv_m);
          } else {
            dx[i] += s * g[i];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> group_norm(Var<T> x, std::int64_t groups, double eps) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("group_norm expects [N, ..., Ch], got " + to_string(xv.shape()));
  const std::int64_t n = xv.dim(0);
  const std::int64_t ch = xv.dim(xv.rank() - 1);
  if (groups <= 0 || ch % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(ch) + " channels");
  }
  if (eps <= 0) throw ConfigError("group_norm: eps must be positive");
  const std::int64_t gs = ch / groups;
  const std::int64_t spatial = xv.numel() / (n * ch);
  const std::int64_t count = spatial * gs;

  auto mu = std::make_shared<std::vector<T>>(n * groups, T(0));
  auto inv_std = std::make_shared<std::vector<T>>(n * groups, T(0));
  const T* xp = xv.ptr();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      T s = 0;
      for (std::int64_t p = 0; p < spatial; ++p) {
        const T* row = xp + (b * spatial + p) * ch + gi * gs;
        for (std::int64_t k = 0; k < gs; ++k) s += row[k];
      }
      const T m = s / static_cast<T>(count);
      T v = 0;
      for (std::int64_t p = 0; p < spatial; ++p) {
        const T* row = xp + (b * spatial + p) * ch + gi * gs;
        for (std::int64_t k = 0; k < gs; ++k) v += (row[k] - m) * (row[k] - m);
      }
      v /= static_cast<T>(count);
      (*mu)[b * groups + gi] = m;
      (*inv_std)[b * groups + gi] = T(1) / std::sqrt(v + static_cast<T>(eps));
    }
  }
  Tensor<T> out(xv.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t p = 0; p < spatial; ++p) {
      for (std::int64_t k = 0; k < ch; ++k) {
        const std::int64_t i = (b * spatial + p) * ch + k;
        const std::int64_t s = b * groups + k / gs;
        out[i] = (xp[i] - (*mu)[s]) * (*inv_std)[s];
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [mu, inv_std, n, groups, gs, spatial, ch, count](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    const T* y = ctx.out().ptr();
    T* dx = ctx.grad_in(0).ptr();
    std::vector<T> sum_g(n * groups, T(0)), sum_gy(n * groups, T(0));
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t p = 0; p < spatial; ++p) {
        for (std::int64_t k = 0; k < ch; ++k) {
          const std::int64_t i = (b * spatial + p) * ch + k;
          const std::int64_t s = b * groups + k / gs;
          sum_g[s] += g[i];
          sum_gy[s] += g[i] * y[i];
        }
      }
    }
    const T inv_c = T(1) / static_cast<T>(count);
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t p = 0; p < spatial; ++p) {
        for (std::int64_t k = 0; k < ch; ++k) {
          const std::int64_t i = (b * spatial + p) * ch + k;
          const std::int64_t s = b * groups + k / gs;
          dx[i] += (*inv_std)[s] * (g[i] - sum_g[s] * inv_c - y[i] * sum_gy[s] * inv_c);
        }
      }
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> x, std::int64_t axis, T beta, std::span<const std::uint8_t> mask) {
  const auto& xv = x.value();
  axis = normalize_axis(axis, xv.rank(), "softmax");
  if (!(beta > T(0))) throw ConfigError("softmax: temperature beta must be positive");
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != xv.numel()) {
    throw DimensionError("softmax: mask size does not match input " + to_string(xv.shape()));
  }
  const AxisSplit sp = split_at(xv.shape(), axis);
  Tensor<T> out(xv.shape());
  const T* xp = xv.ptr();
  const bool masked = !mask.empty();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.n * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const std::int64_t i = base + k * sp.inner;
        if (masked && !mask[i]) continue;
        mx = std::max(mx, xp[i] / beta);
      }
      if (mx == -std::numeric_limits<T>::infinity()) continue;  // fully masked slice
      T z = 0;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const std::int64_t i = base + k * sp.inner;
        if (masked && !mask[i]) continue;
        out[i] = std::exp(xp[i] / beta - mx);
        z += out[i];
      }
      for (std::int64_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  }
  return x.tape->record(std::move(out), {x}, [sp, beta](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    const T* y = ctx.out().ptr();
    T* dx = ctx.grad_in(0).ptr();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const std::int64_t base = o * sp.n * sp.inner + in;
        T dot = 0;
        for (std::int64_t k = 0; k < sp.n; ++k) dot += y[base + k * sp.inner] * g[base + k * sp.inner];
        for (std::int64_t k = 0; k < sp.n; ++k) {
          const std::int64_t i = base + k * sp.inner;
          dx[i] += y[i] * (g[i] - dot) / beta;
        }
      }
    }
    if (fault::backward_corrupted("softmax")) {
      for (auto& v : ctx.grad_in(0).data()) v *= T(1.5);
    }
  });
}

#define VTN_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                           \
  template Var<T> sub(Var<T>, Var<T>);                                                           \
  template Var<T> mul(Var<T>, Var<T>);                                                           \
  template Var<T> scale(Var<T>, T);                                                              \
  template Var<T> add_scalar(Var<T>, T);                                                         \
  template Var<T> square(Var<T>);                                                                \
  template Var<T> relu(Var<T>);                                                                  \
  template Var<T> tanh(Var<T>);                                                                  \
  template Var<T> add_bias(Var<T>, Var<T>);                                                      \
  template Var<T> sum(Var<T>);                                                                   \
  template Var<T> mean(Var<T>);                                                                  \
  template Var<T> sum_axis(Var<T>, std::int64_t);                                                \
  template Var<T> reshape(Var<T>, Shape);                                                        \
  template Var<T> permute(Var<T>, std::vector<std::int64_t>);                                    \
  template Var<T> index_select(Var<T>, std::span<const std::int64_t>);                           \
  template Tensor<T> permuted(const Tensor<T>&, const std::vector<std::int64_t>&);               \
  template Var<T> matmul(Var<T>, Var<T>);                                                        \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, Conv2dOptions);                  \
  template Var<T> pool_resample(Var<T>, Resample);                                               \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, BatchNormOptions);      \
  template Var<T> group_norm(Var<T>, std::int64_t, double);                                      \
  template Var<T> softmax(Var<T>, std::int64_t, T, std::span<const std::uint8_t>);

VTN_INSTANTIATE_OPS(float)
VTN_INSTANTIATE_OPS(double)

}  // namespace vtn
