// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/vtn_layer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace vtn {

std::vector<std::int64_t> VtnConfig::widths() const {
  std::vector<std::int64_t> w{groups};
  for (std::int64_t l = 0; l < levels; ++l) {
    if (!channel_mixing) {
      w.push_back(groups);
    } else if (!squeeze_widths.empty()) {
      w.push_back(squeeze_widths.at(static_cast<std::size_t>(l)));
    } else {
      w.push_back(std::max<std::int64_t>(1, w.back() / 2));
    }
  }
  return w;
}

void VtnConfig::validate(std::int64_t channels) const {
  if (groups < 1) throw ConfigError("vtn: groups must be >= 1");
  if (radius < 1) throw ConfigError("vtn: radius must be >= 1");
  if (!(beta > 0)) throw ConfigError("vtn: beta must be > 0");
  if (levels < 1) throw ConfigError("vtn: levels must be >= 1");
  if (feature_dim < 1) throw ConfigError("vtn: feature_dim must be >= 1");
  if (head_kernel < 1 || head_kernel % 2 == 0) throw ConfigError("vtn: head_kernel must be odd");
  if (!(gn_eps > 0)) throw ConfigError("vtn: gn_eps must be > 0");
  if (channel_mixing && !squeeze_widths.empty()) {
    if (static_cast<std::int64_t>(squeeze_widths.size()) != levels) {
      throw ConfigError("vtn: squeeze_widths needs one entry per level");
    }
    std::int64_t prev = groups;
    for (auto k : squeeze_widths) {
      if (k < 1) throw ConfigError("vtn: squeeze widths must be >= 1");
      if (prev > 1 ? k >= prev : k != 1) {
        throw ConfigError("vtn: squeeze width " + std::to_string(k) + " must be smaller than " +
                          std::to_string(prev));
      }
      prev = k;
    }
  }
  if (channels > 0 && channels % groups != 0) {
    throw ConfigError("vtn: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(channels) + " feature channels");
  }
}

// ---- parameters ------------------------------------------------------------

template <typename T>
VtnParams<T> VtnParams<T>::init(const VtnConfig& cfg, Rng& rng, const std::string& prefix) {
  cfg.validate();
  VtnParams p;
  const auto w = cfg.widths();
  const std::int64_t d = cfg.feature_dim;
  auto he = [&](std::int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  for (std::int64_t l = 0; l < cfg.levels; ++l) {
    const std::string enc = prefix + ".enc" + std::to_string(l + 1);
    const std::string dec = prefix + ".dec" + std::to_string(l + 1);
    const std::int64_t d_in = l == 0 ? 2 : d;
    VtnLevelParams<T> lv;
    lv.enc_w = Parameter<T>(enc + ".conv.w", normal_tensor<T>(Shape{3, 3, d_in, d}, he(9 * d_in), rng));
    lv.enc_gamma = Parameter<T>(enc + ".bn.gamma", Tensor<T>(Shape{d}, T(1)));
    lv.enc_beta = Parameter<T>(enc + ".bn.beta", Tensor<T>(Shape{d}, T(0)));
    lv.enc_bn = BatchNormStats<T>(d);
    const std::int64_t k_in = w[l], k_out = w[l + 1];
    if (cfg.channel_mixing) {
      lv.squeeze = Parameter<T>(enc + ".squeeze",
                                normal_tensor<T>(Shape{k_in, k_out}, 1.0 / std::sqrt(double(k_in)), rng));
    }
    lv.dec_w = Parameter<T>(dec + ".conv.w", normal_tensor<T>(Shape{3, 3, d, d}, he(9 * d), rng));
    lv.dec_gamma = Parameter<T>(dec + ".bn.gamma", Tensor<T>(Shape{d}, T(1)));
    lv.dec_beta = Parameter<T>(dec + ".bn.beta", Tensor<T>(Shape{d}, T(0)));
    lv.dec_bn = BatchNormStats<T>(d);
    if (cfg.channel_mixing) {
      lv.expand = Parameter<T>(dec + ".expand",
                               normal_tensor<T>(Shape{k_out, k_in}, 1.0 / std::sqrt(double(k_out)), rng));
    }
    p.levels.push_back(std::move(lv));
  }
  const std::int64_t head_out = cfg.probabilistic ? cfg.candidates() : 2;
  p.head_w = Parameter<T>(prefix + ".head.w", Tensor<T>(Shape{cfg.head_kernel, cfg.head_kernel, d, head_out}));
  p.head_b = Parameter<T>(prefix + ".head.b", Tensor<T>(Shape{head_out}));
  return p;
}

template <typename T>
std::vector<Parameter<T>*> VtnParams<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& l : levels) {
    for (auto* p : {&l.enc_w, &l.enc_gamma, &l.enc_beta, &l.squeeze, &l.dec_w, &l.dec_gamma,
                    &l.dec_beta, &l.expand}) {
      if (!p->name.empty()) out.push_back(p);
    }
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> VtnParams<T>::buffers(const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::string enc = prefix + ".enc" + std::to_string(l + 1) + ".bn";
    const std::string dec = prefix + ".dec" + std::to_string(l + 1) + ".bn";
    out.emplace_back(enc + ".running_mean", &levels[l].enc_bn.running_mean);
    out.emplace_back(enc + ".running_var", &levels[l].enc_bn.running_var);
    out.emplace_back(dec + ".running_mean", &levels[l].dec_bn.running_mean);
    out.emplace_back(dec + ".running_var", &levels[l].dec_bn.running_var);
  }
  return out;
}

// ---- group sampling and normalization -------------------------------------

template <typename T>
Var<T> group_pool(Var<T> u, std::int64_t groups) {
  const auto& uv = u.value();
  if (uv.rank() != 4) throw DimensionError("group_pool: expected [B,H,W,K], got " + to_string(uv.shape()));
  const std::int64_t b = uv.dim(0), h = uv.dim(1), w = uv.dim(2), k = uv.dim(3);
  if (groups < 1 || k % groups != 0) {
    throw ConfigError("group_pool: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(k) + " channels");
  }
  const std::int64_t per = k / groups;
  const std::int64_t pixels = b * h * w;
  Tensor<T> out(Shape{b, h, w, 2, groups});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(pixels * groups));
  const T* up = uv.ptr();
  for (std::int64_t p = 0; p < pixels; ++p) {
    for (std::int64_t c = 0; c < groups; ++c) {
      const T* src = up + p * k + c * per;
      std::int64_t best = 0;
      T s = 0;
      for (std::int64_t j = 0; j < per; ++j) {
        if (src[j] > src[best]) best = j;
        s += src[j];
      }
      out[(p * 2) * groups + c] = src[best];
      out[(p * 2 + 1) * groups + c] = s / static_cast<T>(per);
      (*argmax)[p * groups + c] = p * k + c * per + best;
    }
  }
  return u.tape->record(std::move(out), {u}, [argmax, pixels, groups, per, k](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    T* du = ctx.grad_in(0).ptr();
    const T inv = T(1) / static_cast<T>(per);
    for (std::int64_t p = 0; p < pixels; ++p) {
      for (std::int64_t c = 0; c < groups; ++c) {
        du[(*argmax)[p * groups + c]] += g[(p * 2) * groups + c];
        const T ga = g[(p * 2 + 1) * groups + c] * inv;
        T* dst = du + p * k + c * per;
        for (std::int64_t j = 0; j < per; ++j) dst[j] += ga;
      }
    }
  });
}

template <typename T>
GroupedResponse<T> group_sample_normalize(Var<T> u, const VtnConfig& cfg) {
  const auto& s = u.shape();
  if (s.size() != 4) throw DimensionError("group_sample_normalize: expected [B,H,W,K], got " + to_string(s));
  cfg.validate(s[3]);
  const std::int64_t b = s[0], h = s[1], w = s[2], c = cfg.groups;
  GroupedResponse<T> r;
  r.pooled = group_pool(u, c);
  // group c's block {max_c, avg_c} made contiguous for group_norm
  Var<T> blocks = reshape(permute(r.pooled, {0, 1, 2, 4, 3}), Shape{b, h, w, 2 * c});
  Var<T> normed = group_norm(blocks, c, cfg.gn_eps);
  r.normalized = permute(reshape(normed, Shape{b, h, w, c, 2}), {0, 1, 2, 4, 3});
  r.response = sum_axis(r.pooled, 3);
  return r;
}

// ---- channel squeeze / expansion ------------------------------------------

namespace {

template <typename T>
Var<T> channel_mix(Var<T> y, Var<T> w, const char* name) {
  const auto& s = y.shape();
  const auto& ws = w.shape();
  if (s.size() < 2 || ws.size() != 2 || ws[0] != s.back()) {
    throw DimensionError(std::string(name) + ": features " + to_string(s) + " incompatible with weights " +
                         to_string(ws));
  }
  const std::int64_t rows = y.value().numel() / s.back();
  Shape out_shape = s;
  out_shape.back() = ws[1];
  return reshape(matmul(reshape(y, Shape{rows, s.back()}), w), out_shape);
}

}  // namespace

template <typename T>
Var<T> channel_squeeze(Var<T> y, Var<T> w) {
  const auto& ws = w.shape();
  if (ws.size() == 2 && ws[0] > 1 && ws[1] >= ws[0]) {
    throw DimensionError("channel_squeeze: output width " + std::to_string(ws[1]) +
                         " must be smaller than input width " + std::to_string(ws[0]));
  }
  return channel_mix(y, w, "channel_squeeze");
}

template <typename T>
Var<T> channel_expand(Var<T> z, Var<T> w) {
  const auto& ws = w.shape();
  if (ws.size() == 2 && ws[0] > 1 && ws[1] < ws[0]) {
    throw DimensionError("channel_expand: output width " + std::to_string(ws[1]) +
                         " must not be smaller than input width " + std::to_string(ws[0]));
  }
  return channel_mix(z, w, "channel_expand");
}

// ---- estimator -------------------------------------------------------------

namespace {

// Conv-BN-ReLU applied to each group-channel of y [B,H,W,D,K] with shared weights.
template <typename T>
Var<T> shared_conv_block(Var<T> y, Parameter<T>& w, Parameter<T>& gamma, Parameter<T>& beta,
                         BatchNormStats<T>& stats, bool training) {
  Tape<T>& tape = *y.tape;
  const Shape s = y.shape();
  const std::int64_t b = s[0], h = s[1], wd = s[2], d = s[3], k = s[4];
  Var<T> x = reshape(permute(y, {0, 4, 1, 2, 3}), Shape{b * k, h, wd, d});
  Var<T> conv = conv2d(x, tape.parameter(w), std::nullopt, Conv2dOptions{1, w.value.dim(0) / 2});
  BatchNormOptions bn;
  bn.training = training;
  Var<T> act = relu(batch_norm(conv, tape.parameter(gamma), tape.parameter(beta), stats, bn));
  const std::int64_t d_out = w.value.dim(3);
  return permute(reshape(act, Shape{b, k, h, wd, d_out}), {0, 2, 3, 4, 1});
}

template <typename T>
Var<T> spatial_resample(Var<T> y, Resample mode) {
  const Shape s = y.shape();
  Var<T> flat = reshape(y, Shape{s[0], s[1], s[2], s[3] * s[4]});
  Var<T> r = pool_resample(flat, mode);
  return reshape(r, Shape{s[0], r.dim(1), r.dim(2), s[3], s[4]});
}

}  // namespace

template <typename T>
Var<T> estimate_logits(Var<T> x, VtnParams<T>& params, const VtnConfig& cfg, bool training) {
  const Shape s = x.shape();
  if (s.size() != 5 || s[3] != 2 || s[4] != cfg.groups) {
    throw DimensionError("estimate_logits: expected [B,H,W,2," + std::to_string(cfg.groups) + "], got " +
                         to_string(s));
  }
  if (static_cast<std::int64_t>(params.levels.size()) != cfg.levels) {
    throw ConfigError("estimate_logits: parameters built for a different depth");
  }
  const std::int64_t m = std::int64_t{1} << cfg.levels;
  if (s[1] % m != 0 || s[2] % m != 0) {
    const std::int64_t ph = (m - s[1] % m) % m, pw = (m - s[2] % m) % m;
    throw ConfigError("estimate_logits: " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                      " map must be divisible by 2^" + std::to_string(cfg.levels) + "; pad by " +
                      std::to_string(ph) + " rows and " + std::to_string(pw) + " columns");
  }
  Tape<T>& tape = *x.tape;
  Var<T> y = x;
  for (auto& lv : params.levels) {
    y = shared_conv_block(y, lv.enc_w, lv.enc_gamma, lv.enc_beta, lv.enc_bn, training);
    if (cfg.channel_mixing) y = channel_squeeze(y, tape.parameter(lv.squeeze));
    y = spatial_resample(y, Resample::kMaxPool2);
  }
  for (auto it = params.levels.rbegin(); it != params.levels.rend(); ++it) {
    auto& lv = *it;
    y = shared_conv_block(y, lv.dec_w, lv.dec_gamma, lv.dec_beta, lv.dec_bn, training);
    if (cfg.channel_mixing) y = channel_expand(y, tape.parameter(lv.expand));
    y = spatial_resample(y, Resample::kUpsample2);
  }
  const Shape ys = y.shape();
  const std::int64_t b = ys[0], h = ys[1], w = ys[2], d = ys[3], c = ys[4];
  Var<T> flat = reshape(permute(y, {0, 4, 1, 2, 3}), Shape{b * c, h, w, d});
  Var<T> head = conv2d(flat, tape.parameter(params.head_w), std::optional<Var<T>>(tape.parameter(params.head_b)),
                       Conv2dOptions{1, cfg.head_kernel / 2});
  const std::int64_t n = head.dim(3);
  return permute(reshape(head, Shape{b, c, h, w, n}), {0, 2, 3, 4, 1});
}

// ---- probabilistic transformation inference -------------------------------

std::vector<std::uint8_t> candidate_mask(std::int64_t h, std::int64_t w, std::int64_t radius) {
  const std::int64_t win = 2 * radius + 1, n = win * win;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w * n), 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t j = 0; j < n; ++j) {
        const std::int64_t sy = y + j / win - radius, sx = x + j % win - radius;
        mask[(y * w + x) * n + j] = sy >= 0 && sy < h && sx >= 0 && sx < w;
      }
    }
  }
  return mask;
}

std::vector<std::uint8_t> candidate_mask_volume(std::int64_t b, std::int64_t h, std::int64_t w,
                                                std::int64_t radius, std::int64_t c) {
  const auto base = candidate_mask(h, w, radius);
  std::vector<std::uint8_t> vol;
  vol.reserve(static_cast<std::size_t>(b) * base.size() * static_cast<std::size_t>(c));
  for (std::int64_t i = 0; i < b; ++i) {
    for (auto m : base) vol.insert(vol.end(), static_cast<std::size_t>(c), m);
  }
  return vol;
}

template <typename T>
Var<T> window_gather(Var<T> r, std::int64_t radius) {
  const auto& rv = r.value();
  if (rv.rank() != 4) throw DimensionError("window_gather: expected [B,H,W,C], got " + to_string(rv.shape()));
  if (radius < 1) throw ConfigError("window_gather: radius must be >= 1");
  const std::int64_t b = rv.dim(0), h = rv.dim(1), w = rv.dim(2), c = rv.dim(3);
  const std::int64_t win = 2 * radius + 1, n = win * win;
  Tensor<T> out(Shape{b, h, w, n, c});
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        for (std::int64_t j = 0; j < n; ++j) {
          const std::int64_t sy = y + j / win - radius, sx = x + j % win - radius;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
          std::copy_n(rv.ptr() + ((bi * h + sy) * w + sx) * c, c,
                      out.ptr() + (((bi * h + y) * w + x) * n + j) * c);
        }
      }
    }
  }
  return r.tape->record(std::move(out), {r}, [b, h, w, c, radius, win, n](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    T* dr = ctx.grad_in(0).ptr();
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t sy = y + j / win - radius, sx = x + j % win - radius;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            const T* src = g + (((bi * h + y) * w + x) * n + j) * c;
            T* dst = dr + ((bi * h + sy) * w + sx) * c;
            for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> infer_probabilities(Var<T> logits, Var<T> response, const VtnConfig& cfg) {
  const Shape& es = logits.shape();
  const Shape& rs = response.shape();
  if (es.size() != 5 || rs.size() != 4 || es[0] != rs[0] || es[1] != rs[1] || es[2] != rs[2] ||
      es[3] != cfg.candidates() || es[4] != rs[3]) {
    throw DimensionError("infer_probabilities: logits " + to_string(es) + " incompatible with responses " +
                         to_string(rs) + " for radius " + std::to_string(cfg.radius));
  }
  const auto mask = candidate_mask_volume(es[0], es[1], es[2], cfg.radius, es[4]);
  Var<T> scores = add(window_gather(response, cfg.radius), logits);
  return softmax(scores, 3, static_cast<T>(cfg.beta), std::span<const std::uint8_t>(mask));
}

template <typename T>
Var<T> aggregate_warp_field(Var<T> probs, const VtnConfig& cfg) {
  const auto& pv = probs.value();
  if (pv.rank() != 5 || pv.dim(3) != cfg.candidates()) {
    throw DimensionError("aggregate_warp_field: expected [B,H,W," + std::to_string(cfg.candidates()) +
                         ",C], got " + to_string(pv.shape()));
  }
  const std::int64_t r = cfg.radius, win = cfg.window(), n = cfg.candidates();
  const std::int64_t c = pv.dim(4);
  const std::int64_t pixels = pv.numel() / (n * c);
  Tensor<T> out(Shape{pv.dim(0), pv.dim(1), pv.dim(2), c, 2});
  // Offsets are paired +d/-d so a symmetric distribution yields exactly zero.
  std::vector<T> row_mass(static_cast<std::size_t>(win)), col_mass(static_cast<std::size_t>(win));
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(out.numel()));
  for (std::int64_t p = 0; p < pixels; ++p) {
    for (std::int64_t k = 0; k < c; ++k) {
      std::fill(row_mass.begin(), row_mass.end(), T(0));
      std::fill(col_mass.begin(), col_mass.end(), T(0));
      for (std::int64_t j = 0; j < n; ++j) {
        const T v = pv[(p * n + j) * c + k];
        row_mass[j / win] += v;
        col_mass[j % win] += v;
      }
      T gy = 0, gx = 0;
      for (std::int64_t d = 1; d <= r; ++d) {
        gy += static_cast<T>(d) * (row_mass[r + d] - row_mass[r - d]);
        gx += static_cast<T>(d) * (col_mass[r + d] - col_mass[r - d]);
      }
      // Mass sums can round past 1 when one corner dominates; a normalized
      // distribution never leaves [-r, r], so clamp with the usual subgradient.
      const T lim = static_cast<T>(r);
      const std::int64_t o = (p * c + k) * 2;
      out[o] = std::clamp(gy, -lim, lim);
      out[o + 1] = std::clamp(gx, -lim, lim);
      inside[o] = out[o] == gy;
      inside[o + 1] = out[o + 1] == gx;
    }
  }
  return probs.tape->record(std::move(out), {probs}, [pixels, c, n, win, r, inside = std::move(inside)](auto& ctx) {
    const T* g = ctx.grad_out().ptr();
    T* dp = ctx.grad_in(0).ptr();
    for (std::int64_t p = 0; p < pixels; ++p) {
      for (std::int64_t k = 0; k < c; ++k) {
        const std::int64_t o = (p * c + k) * 2;
        const T gy = inside[o] ? g[o] : T(0), gx = inside[o + 1] ? g[o + 1] : T(0);
        for (std::int64_t j = 0; j < n; ++j) {
          dp[(p * n + j) * c + k] += gy * static_cast<T>(j / win - r) + gx * static_cast<T>(j % win - r);
        }
      }
    }
  });
}

template <typename T>
VtnOutput<T> vtn_forward(Var<T> u, VtnParams<T>& params, const VtnConfig& cfg, bool training) {
  const Shape& s = u.shape();
  if (s.size() != 4) throw DimensionError("vtn_forward: expected [B,H,W,K], got " + to_string(s));
  cfg.validate(s[3]);
  VtnOutput<T> out;
  out.grouped = group_sample_normalize(u, cfg);
  out.logits = estimate_logits(out.grouped.normalized, params, cfg, training);
  if (cfg.probabilistic) {
    out.probs = infer_probabilities(out.logits, out.grouped.response, cfg);
    out.field = aggregate_warp_field(out.probs, cfg);
  } else {
    if (out.logits.dim(3) != 2) throw ConfigError("vtn_forward: direct regression needs a 2-channel head");
    out.field = scale(tanh(permute(out.logits, {0, 1, 2, 4, 3})), static_cast<T>(cfg.radius));
  }
  out.warped = grouped_bilinear_sample(u, out.field);
  return out;
}

template <typename T>
std::vector<WarpField<T>> split_fields(const Tensor<T>& field, std::int64_t b) {
  if (field.rank() != 5 || field.dim(4) != 2) {
    throw DimensionError("split_fields: expected [B,H,W,C,2], got " + to_string(field.shape()));
  }
  const std::int64_t h = field.dim(1), w = field.dim(2), c = field.dim(3);
  std::vector<WarpField<T>> out;
  for (std::int64_t k = 0; k < c; ++k) {
    WarpField<T> f{Tensor<T>(Shape{h, w, 2})};
    for (std::int64_t p = 0; p < h * w; ++p) {
      const std::int64_t src = ((b * h * w + p) * c + k) * 2;
      f.offsets[p * 2] = field[src];
      f.offsets[p * 2 + 1] = field[src + 1];
    }
    out.push_back(std::move(f));
  }
  return out;
}

#define VTN_INSTANTIATE_LAYER(T)                                                              \
  template struct VtnParams<T>;                                                               \
  template Var<T> group_pool(Var<T>, std::int64_t);                                           \
  template GroupedResponse<T> group_sample_normalize(Var<T>, const VtnConfig&);               \
  template Var<T> channel_squeeze(Var<T>, Var<T>);                                            \
  template Var<T> channel_expand(Var<T>, Var<T>);                                             \
  template Var<T> estimate_logits(Var<T>, VtnParams<T>&, const VtnConfig&, bool);             \
  template Var<T> window_gather(Var<T>, std::int64_t);                                        \
  template Var<T> infer_probabilities(Var<T>, Var<T>, const VtnConfig&);                      \
  template Var<T> aggregate_warp_field(Var<T>, const VtnConfig&);                             \
  template VtnOutput<T> vtn_forward(Var<T>, VtnParams<T>&, const VtnConfig&, bool);           \
  template std::vector<WarpField<T>> split_fields(const Tensor<T>&, std::int64_t);

VTN_INSTANTIATE_LAYER(float)
VTN_INSTANTIATE_LAYER(double)

}  // namespace vtn
