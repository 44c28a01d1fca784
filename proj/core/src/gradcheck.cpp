// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>

#include "vtn/losses.hpp"
#include "vtn/vtn_layer.hpp"

namespace vtn {

double max_relative_error(const std::function<Var<double>(Tape<double>&)>& f,
                          const std::vector<Parameter<double>*>& leaves, double h, double floor) {
  for (auto* p : leaves) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = f(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape<double> tape;
    return f(tape).value().item();
  };
  double worst = 0;
  for (auto* p : leaves) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      const double num = (up - down) / (2 * h);
      const double ana = p->grad[i];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      if (!(err <= worst)) worst = std::isnan(err) ? INFINITY : err;
    }
  }
  return worst;
}

bool GradcheckReport::passed() const { return failing_ops().empty(); }

std::vector<std::string> GradcheckReport::failing_ops() const {
  std::vector<std::string> out;
  for (const auto& c : cases) {
    if (!c.passed) out.push_back(c.op);
  }
  return out;
}

std::string GradcheckReport::format() const {
  std::string s;
  char buf[160];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof(buf), "%-26s max rel err %.3e  %s\n", c.op.c_str(), c.max_rel_error,
                  c.passed ? "ok" : "FAIL");
    s += buf;
  }
  const auto bad = failing_ops();
  std::snprintf(buf, sizeof(buf), "%zu ops, %zu failing, tolerance %.0e, %.2f s\n", cases.size(), bad.size(),
                tolerance, seconds);
  s += buf;
  return s;
}

namespace {

using D = double;
using Leaf = Parameter<D>;
using Fn = std::function<Var<D>(Tape<D>&)>;

struct Case {
  std::string op;
  std::function<double(Rng&)> run;
};

Tensor<D> randn(Shape s, Rng& rng, double std = 1.0) { return normal_tensor<D>(std::move(s), std, rng); }

// Values bounded away from zero, for inputs that meet a kink at 0.
Tensor<D> away_from_zero(Shape s, Rng& rng) {
  Tensor<D> t(std::move(s));
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values spaced at least 0.05 apart, in random order.
Tensor<D> distinct(Shape s, Rng& rng) {
  Tensor<D> t(std::move(s));
  std::vector<double> vals(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.05 * static_cast<double>(i) - 0.5;
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.ptr());
  return t;
}

// Projection weights are drawn once so the functional is identical in every
// evaluation of f.
struct Projector {
  std::map<int, Tensor<D>> weights;
  Rng rng;
  explicit Projector(std::uint64_t seed) : rng(seed) {}
  Var<D> operator()(int slot, Var<D> v) {
    if (v.value().rank() == 0) return scale(v, 1.3);
    auto it = weights.find(slot);
    if (it == weights.end()) it = weights.emplace(slot, randn(v.shape(), rng)).first;
    return sum(mul(v, v.tape->constant(it->second)));
  }
};

double check(const Fn& f, std::vector<Leaf*> leaves) { return max_relative_error(f, leaves); }

std::vector<Case> build_cases() {
  std::vector<Case> cs;
  auto unary = [&](std::string name, auto op, bool kink_at_zero) {
    cs.push_back({name, [op, kink_at_zero](Rng& rng) {
                    Leaf x("x", kink_at_zero ? away_from_zero({2, 3}, rng) : randn({2, 3}, rng));
                    Projector proj(rng());
                    return check([&](Tape<D>& t) { return proj(0, op(t.parameter(x))); }, {&x});
                  }});
  };
  auto binary = [&](std::string name, auto op) {
    cs.push_back({name, [op](Rng& rng) {
                    Leaf a("a", randn({2, 3}, rng)), b("b", randn({2, 3}, rng));
                    Projector proj(rng());
                    return check([&](Tape<D>& t) { return proj(0, op(t.parameter(a), t.parameter(b))); },
                                 {&a, &b});
                  }});
  };
  binary("add", [](Var<D> a, Var<D> b) { return add(a, b); });
  binary("sub", [](Var<D> a, Var<D> b) { return sub(a, b); });
  binary("mul", [](Var<D> a, Var<D> b) { return mul(a, b); });
  unary("scale", [](Var<D> x) { return scale(x, 1.7); }, false);
  unary("add_scalar", [](Var<D> x) { return add_scalar(x, -0.4); }, false);
  unary("square", [](Var<D> x) { return square(x); }, false);
  unary("relu", [](Var<D> x) { return relu(x); }, true);
  unary("tanh", [](Var<D> x) { return vtn::tanh(x); }, false);
  cs.push_back({"add_bias", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 4}, rng)), b("b", randn({4}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, add_bias(t.parameter(x), t.parameter(b))); },
                               {&x, &b});
                }});
  cs.push_back({"sum", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 4}, rng));
                  return check([&](Tape<D>& t) { return scale(sum(t.parameter(x)), 0.7); }, {&x});
                }});
  cs.push_back({"mean", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 4}, rng));
                  return check([&](Tape<D>& t) { return scale(mean(t.parameter(x)), 1.9); }, {&x});
                }});
  cs.push_back({"sum_axis", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 4}, rng));
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) {
                        Var<D> v = t.parameter(x);
                        return add(proj(0, sum_axis(v, 1)), proj(1, sum_axis(v, -1)));
                      },
                      {&x});
                }});
  cs.push_back({"reshape", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 4}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, reshape(t.parameter(x), Shape{4, 6})); }, {&x});
                }});
  cs.push_back({"permute", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 4}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, permute(t.parameter(x), {2, 0, 1})); }, {&x});
                }});
  cs.push_back({"index_select", [](Rng& rng) {
                  Leaf x("x", randn({4, 3}, rng));
                  Projector proj(rng());
                  const std::vector<std::int64_t> rows{2, 0, 2};
                  return check([&](Tape<D>& t) { return proj(0, index_select(t.parameter(x), rows)); }, {&x});
                }});
  cs.push_back({"matmul", [](Rng& rng) {
                  Leaf a("a", randn({3, 4}, rng)), b("b", randn({4, 5}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, matmul(t.parameter(a), t.parameter(b))); },
                               {&a, &b});
                }});
  cs.push_back({"conv2d", [](Rng& rng) {
                  Leaf x("x", randn({2, 5, 5, 3}, rng)), w("w", randn({3, 3, 3, 4}, rng, 0.3)),
                      b("b", randn({4}, rng));
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) {
                        Var<D> xv = t.parameter(x), wv = t.parameter(w);
                        Var<D> same = conv2d(xv, wv, std::optional<Var<D>>(t.parameter(b)), Conv2dOptions{1, 1});
                        Var<D> strided = conv2d(xv, wv, std::nullopt, Conv2dOptions{2, 1});
                        return add(proj(0, same), proj(1, strided));
                      },
                      {&x, &w, &b});
                }});
  cs.push_back({"maxpool2", [](Rng& rng) {
                  Leaf x("x", distinct({2, 4, 4, 2}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, maxpool2(t.parameter(x))); }, {&x});
                }});
  cs.push_back({"upsample2", [](Rng& rng) {
                  Leaf x("x", randn({2, 2, 3, 2}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, upsample2(t.parameter(x))); }, {&x});
                }});
  cs.push_back({"batch_norm", [](Rng& rng) {
                  Leaf x("x", randn({4, 3, 3, 2}, rng)), g("g", randn({2}, rng)), b("b", randn({2}, rng));
                  BatchNormStats<D> stats(2);
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) {
                        return proj(0, batch_norm(t.parameter(x), t.parameter(g), t.parameter(b), stats,
                                                  BatchNormOptions{0.9, 1e-5, true}));
                      },
                      {&x, &g, &b});
                }});
  cs.push_back({"group_norm", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 3, 4}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, group_norm(t.parameter(x), 2)); }, {&x});
                }});
  cs.push_back({"softmax", [](Rng& rng) {
                  Leaf x("x", randn({2, 3, 5}, rng));
                  std::vector<std::uint8_t> mask(30, 1);
                  mask[3] = mask[7] = mask[21] = 0;
                  for (int j = 10; j < 15; ++j) mask[j] = 0;  // one fully masked slice
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) {
                        Var<D> v = t.parameter(x);
                        return add(proj(0, softmax(v, 2, 2.0, mask)), proj(1, softmax(v, 1)));
                      },
                      {&x});
                }});
  cs.push_back({"bilinear_sample", [](Rng& rng) {
                  // Targets stay inside the image with fractional parts in [0.2, 0.8].
                  const std::int64_t h = 4, w = 5;
                  std::uniform_real_distribution<double> frac(0.2, 0.8);
                  auto field = [&](Shape s) {
                    Tensor<D> f(s);
                    const std::int64_t per_pixel = f.numel() / (s[0] * h * w) / 2;
                    for (std::int64_t b = 0; b < s[0]; ++b) {
                      for (std::int64_t y = 0; y < h; ++y) {
                        for (std::int64_t x = 0; x < w; ++x) {
                          for (std::int64_t c = 0; c < per_pixel; ++c) {
                            const std::int64_t base = (((b * h + y) * w + x) * per_pixel + c) * 2;
                            std::uniform_int_distribution<std::int64_t> ty(0, h - 2), tx(0, w - 2);
                            f[base] = static_cast<double>(ty(rng)) + frac(rng) - static_cast<double>(y);
                            f[base + 1] = static_cast<double>(tx(rng)) + frac(rng) - static_cast<double>(x);
                          }
                        }
                      }
                    }
                    return f;
                  };
                  Leaf u("u", randn({1, h, w, 4}, rng)), g("g", field({1, h, w, 2, 2}));
                  Leaf u1("u1", randn({h, w}, rng)), g1("g1", field({1, h, w, 1, 2}).reshaped({h, w, 2}));
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) {
                        return add(proj(0, grouped_bilinear_sample(t.parameter(u), t.parameter(g))),
                                   proj(1, bilinear_sample(t.parameter(u1), t.parameter(g1))));
                      },
                      {&u, &g, &u1, &g1});
                }});
  cs.push_back({"group_pool", [](Rng& rng) {
                  Leaf u("u", distinct({2, 3, 3, 6}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, group_pool(t.parameter(u), 3)); }, {&u});
                }});
  cs.push_back({"channel_squeeze", [](Rng& rng) {
                  Leaf y("y", randn({2, 3, 3, 4, 3}, rng)), w("w", randn({3, 2}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, channel_squeeze(t.parameter(y), t.parameter(w))); },
                               {&y, &w});
                }});
  cs.push_back({"channel_expand", [](Rng& rng) {
                  Leaf z("z", randn({2, 3, 3, 4, 2}, rng)), w("w", randn({2, 3}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, channel_expand(t.parameter(z), t.parameter(w))); },
                               {&z, &w});
                }});
  cs.push_back({"window_gather", [](Rng& rng) {
                  Leaf r("r", randn({1, 4, 4, 2}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, window_gather(t.parameter(r), 1)); }, {&r});
                }});
  cs.push_back({"infer_probabilities", [](Rng& rng) {
                  VtnConfig cfg;
                  cfg.groups = 2;
                  cfg.radius = 1;
                  cfg.beta = 2.0;
                  Leaf e("e", randn({1, 4, 4, 9, 2}, rng)), r("r", randn({1, 4, 4, 2}, rng));
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) { return proj(0, infer_probabilities(t.parameter(e), t.parameter(r), cfg)); },
                      {&e, &r});
                }});
  cs.push_back({"aggregate_warp_field", [](Rng& rng) {
                  VtnConfig cfg;
                  cfg.groups = 2;
                  cfg.radius = 1;
                  Leaf p("p", randn({1, 3, 3, 9, 2}, rng));
                  Projector proj(rng());
                  return check([&](Tape<D>& t) { return proj(0, aggregate_warp_field(t.parameter(p), cfg)); }, {&p});
                }});
  cs.push_back({"estimate_logits", [](Rng& rng) {
                  VtnConfig cfg;
                  cfg.groups = 2;
                  cfg.radius = 1;
                  cfg.levels = 1;
                  cfg.feature_dim = 3;
                  auto params = std::make_shared<VtnParams<D>>(VtnParams<D>::init(cfg, rng));
                  params->head_w.value = randn(params->head_w.value.shape(), rng, 0.3);
                  params->head_b.value = randn(params->head_b.value.shape(), rng, 0.3);
                  Leaf x("x", randn({2, 4, 4, 2, 2}, rng));
                  std::vector<Leaf*> leaves{&x};
                  for (auto* p : params->parameters()) leaves.push_back(p);
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) { return proj(0, estimate_logits(t.parameter(x), *params, cfg, true)); },
                      leaves);
                }});
  cs.push_back({"vtn_forward", [](Rng& rng) {
                  VtnConfig cfg;
                  cfg.groups = 2;
                  cfg.radius = 1;
                  cfg.levels = 1;
                  cfg.feature_dim = 3;
                  cfg.beta = 1.5;
                  VtnConfig direct = cfg;
                  direct.probabilistic = false;
                  auto init = [&](const VtnConfig& c) {
                    auto p = std::make_shared<VtnParams<D>>(VtnParams<D>::init(c, rng));
                    p->head_w.value = randn(p->head_w.value.shape(), rng, 0.3);
                    p->head_b.value = randn(p->head_b.value.shape(), rng, 0.3);
                    return p;
                  };
                  auto prob = init(cfg);
                  auto reg = init(direct);
                  Leaf u("u", randn({2, 4, 4, 4}, rng));
                  std::vector<Leaf*> leaves{&u};
                  for (auto* p : prob->parameters()) leaves.push_back(p);
                  for (auto* p : reg->parameters()) leaves.push_back(p);
                  Projector proj(rng());
                  return check(
                      [&](Tape<D>& t) {
                        Var<D> uv = t.parameter(u);
                        return add(proj(0, vtn_forward(uv, *prob, cfg, true).warped),
                                   proj(1, vtn_forward(uv, *reg, direct, true).warped));
                      },
                      leaves);
                }});
  cs.push_back({"cross_entropy", [](Rng& rng) {
                  Leaf x("x", randn({4, 5}, rng));
                  const std::vector<std::int64_t> labels{0, 3, 4, 1};
                  return check([&](Tape<D>& t) { return cross_entropy(t.parameter(x), labels); }, {&x});
                }});
  cs.push_back({"consistency_triplet_loss", [](Rng& rng) {
                  // Per-pixel hinge arguments kept at least 0.2 away from the kink;
                  // roughly half the pixels are active.
                  const Shape s{2, 3, 3, 4};
                  Tensor<D> a = randn(s, rng), p(s), n(s);
                  const double alpha = 1.0;
                  std::normal_distribution<double> nd(0.0, 1.0);
                  for (std::int64_t px = 0; px < 18; ++px) {
                    for (;;) {
                      double dp = 0, dn = 0;
                      for (int k = 0; k < 4; ++k) {
                        p[px * 4 + k] = a[px * 4 + k] + 0.6 * nd(rng);
                        n[px * 4 + k] = a[px * 4 + k] + 0.6 * nd(rng);
                        dp += (p[px * 4 + k] - a[px * 4 + k]) * (p[px * 4 + k] - a[px * 4 + k]);
                        dn += (n[px * 4 + k] - a[px * 4 + k]) * (n[px * 4 + k] - a[px * 4 + k]);
                      }
                      if (std::abs(dp - dn + alpha) >= 0.2) break;
                    }
                  }
                  Leaf la("a", a), lp("p", p), ln("n", n);
                  return check(
                      [&](Tape<D>& t) {
                        return consistency_triplet_loss(t.parameter(la), t.parameter(lp), t.parameter(ln), alpha);
                      },
                      {&la, &lp, &ln});
                }});
  cs.push_back({"square_consistency_loss", [](Rng& rng) {
                  Leaf a("a", randn({3, 3, 2}, rng)), b("b", randn({3, 3, 2}, rng));
                  return check([&](Tape<D>& t) { return square_consistency_loss(t.parameter(a), t.parameter(b)); },
                               {&a, &b});
                }});
  cs.push_back({"total_loss", [](Rng& rng) {
                  Leaf a("a", randn({}, rng)), b("b", randn({}, rng));
                  return check([&](Tape<D>& t) { return total_loss(t.parameter(a), t.parameter(b), 0.7); }, {&a, &b});
                }});
  return cs;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> out;
  for (const auto& c : build_cases()) out.push_back(c.op);
  return out;
}

GradcheckReport run_gradcheck(double tolerance, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckReport rep;
  rep.tolerance = tolerance;
  Rng rng(seed);
  for (const auto& c : build_cases()) {
    GradcheckCase gc;
    gc.op = c.op;
    gc.max_rel_error = c.run(rng);
    gc.passed = gc.max_rel_error < tolerance;
    rep.cases.push_back(gc);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace vtn
