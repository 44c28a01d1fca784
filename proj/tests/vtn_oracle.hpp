// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Direct per-pixel evaluation of the candidate probabilities and the
// expected-offset field, written without the library's tensor ops. Shared by
// the unit tests and the acceptance binary.

#ifndef VTN_TESTS_VTN_ORACLE_HPP_
#define VTN_TESTS_VTN_ORACLE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "vtn/random.hpp"
#include "vtn/tensor.hpp"
#include "vtn/vtn_layer.hpp"

namespace vtn::oracle {

struct Result {
  Tensor<double> probs;  // [B,H,W,N,C]
  Tensor<double> field;  // [B,H,W,C,2]
};

// u [B,H,W,K] features, e [B,H,W,N,C] residual logits.
inline Result probabilities_and_field(const Tensor<double>& u, const Tensor<double>& e, std::int64_t groups,
                                      std::int64_t radius, double beta) {
  const std::int64_t b = u.dim(0), h = u.dim(1), w = u.dim(2), k = u.dim(3), per = k / groups;
  const std::int64_t win = 2 * radius + 1, n = win * win;
  // Raw group responses: channel max plus channel mean.
  auto response = [&](std::int64_t s, std::int64_t y, std::int64_t x, std::int64_t c) {
    double mx = -std::numeric_limits<double>::infinity(), sum = 0;
    for (std::int64_t j = 0; j < per; ++j) {
      const double v = u.at({s, y, x, c * per + j});
      mx = std::max(mx, v);
      sum += v;
    }
    return mx + sum / static_cast<double>(per);
  };
  Result r{Tensor<double>(Shape{b, h, w, n, groups}), Tensor<double>(Shape{b, h, w, groups, 2})};
  std::vector<double> score(static_cast<std::size_t>(n));
  std::vector<bool> valid(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < b; ++s)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t c = 0; c < groups; ++c) {
          double top = -std::numeric_limits<double>::infinity();
          for (std::int64_t dy = -radius; dy <= radius; ++dy)
            for (std::int64_t dx = -radius; dx <= radius; ++dx) {
              const std::int64_t j = (dy + radius) * win + (dx + radius);
              const std::int64_t sy = y + dy, sx = x + dx;
              valid[j] = sy >= 0 && sy < h && sx >= 0 && sx < w;
              if (!valid[j]) continue;
              score[j] = (response(s, sy, sx, c) + e.at({s, y, x, j, c})) / beta;
              top = std::max(top, score[j]);
            }
          double z = 0;
          for (std::int64_t j = 0; j < n; ++j)
            if (valid[j]) z += std::exp(score[j] - top);
          double gy = 0, gx = 0;
          for (std::int64_t j = 0; j < n; ++j) {
            const double p = valid[j] ? std::exp(score[j] - top) / z : 0.0;
            r.probs.at({s, y, x, j, c}) = p;
            gy += p * static_cast<double>(j / win - radius);
            gx += p * static_cast<double>(j % win - radius);
          }
          r.field.at({s, y, x, c, 0}) = gy;
          r.field.at({s, y, x, c, 1}) = gx;
        }
  return r;
}

// Overwrites the zero head with random weights so the residual logits are
// not identically zero.
template <typename T>
void randomize_head(VtnParams<T>& p, Rng& rng, double stddev = 0.5) {
  p.head_w.value = normal_tensor<T>(p.head_w.value.shape(), stddev, rng);
  p.head_b.value = normal_tensor<T>(p.head_b.value.shape(), stddev, rng);
}

}  // namespace vtn::oracle

#endif  // VTN_TESTS_VTN_ORACLE_HPP_
