// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Volumetric transformer: predicts one warping field per channel group and
// warps every channel of the group with it.
//
// Pipeline for a feature map U [B,H,W,K] split into C contiguous groups:
//   1. group sampling: per-group channel max and mean, stacked as
//      X [B,H,W,2,C] and group-normalized (no affine);
//   2. estimator: L encoder levels (shared conv over each of the C
//      group-channels -> channel squeeze -> max-pool) and L decoder levels
//      (shared conv -> channel expansion -> upsample), then a zero-initialised
//      head giving logits E [B,H,W,N,C], N = (2r+1)^2;
//   3. P_c(i,j) = softmax_j((Umax_c(j) + Uavg_c(j) + E_c(i,j)) / beta) over the
//      window candidates j, with candidates outside the image masked out;
//   4. G_c(i) = sum_j P_c(i,j) (j - i);
//   5. V = bilinear warp of each group's channels by G_c.
//
// Candidate n of the window has offset (n / (2r+1) - r, n % (2r+1) - r).

#ifndef VTN_VTN_LAYER_HPP_
#define VTN_VTN_LAYER_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vtn/ops.hpp"
#include "vtn/random.hpp"
#include "vtn/warp.hpp"

namespace vtn {

struct VtnConfig {
  std::int64_t groups = 8;       // C
  std::int64_t radius = 2;       // r; window is (2r+1) x (2r+1)
  double beta = 10.0;            // softmax temperature
  std::int64_t levels = 2;       // encoder/decoder depth L
  std::int64_t feature_dim = 8;  // D, per-group-channel spatial feature width
  // Squeeze output widths K'_l per level. Empty: halve the width at every
  // level (a width of 1 stays 1).
  std::vector<std::int64_t> squeeze_widths;
  std::int64_t head_kernel = 3;
  double gn_eps = 1e-5;
  // Ablation switches.
  bool channel_mixing = true;  // false: no W_cs / W_ce, groups processed independently
  bool probabilistic = true;   // false: head regresses G directly as r * tanh(.)

  std::int64_t candidates() const { return (2 * radius + 1) * (2 * radius + 1); }
  std::int64_t window() const { return 2 * radius + 1; }
  // Group-channel width entering each level, then after each squeeze:
  // widths()[0] == C, widths()[l] == K'_l.
  std::vector<std::int64_t> widths() const;
  // Throws ConfigError on an inconsistent configuration. `channels` is K of
  // the feature map the layer will see (0 skips that check).
  void validate(std::int64_t channels = 0) const;
};

template <typename T>
struct VtnLevelParams {
  Parameter<T> enc_w, enc_gamma, enc_beta;
  BatchNormStats<T> enc_bn;
  Parameter<T> squeeze;  // [K_in, K']
  Parameter<T> dec_w, dec_gamma, dec_beta;
  BatchNormStats<T> dec_bn;
  Parameter<T> expand;  // [K', K_in]
};

template <typename T>
struct VtnParams {
  std::vector<VtnLevelParams<T>> levels;
  Parameter<T> head_w, head_b;

  // Random estimator weights; head weights and bias are exactly zero.
  static VtnParams init(const VtnConfig& cfg, Rng& rng, const std::string& prefix = "vtn");

  std::vector<Parameter<T>*> parameters();
  // Batch-norm running statistics, named like parameters.
  std::vector<std::pair<std::string, Tensor<T>*>> buffers(const std::string& prefix = "vtn");
};

// Group sampling and normalization output.
template <typename T>
struct GroupedResponse {
  Var<T> pooled;      // [B,H,W,2,C]: [...,0,c] channel max, [...,1,c] channel mean
  Var<T> normalized;  // group-normalized `pooled`, input of the estimator
  Var<T> response;    // [B,H,W,C]: max + mean, the raw candidate responses
};

template <typename T>
struct VtnOutput {
  Var<T> warped;  // V [B,H,W,K]
  Var<T> field;   // G [B,H,W,C,2]
  Var<T> logits;  // E [B,H,W,N,C] (probabilistic) or raw head output
  Var<T> probs;   // P [B,H,W,N,C]; invalid when !cfg.probabilistic
  GroupedResponse<T> grouped;
};

// Differentiable per-group max and mean over contiguous channel groups:
// u [B,H,W,K] -> [B,H,W,2,C].
template <typename T>
Var<T> group_pool(Var<T> u, std::int64_t groups);

template <typename T>
GroupedResponse<T> group_sample_normalize(Var<T> u, const VtnConfig& cfg);

// y [..., D, K_in] x w [K_in, K'] -> [..., D, K']. Requires K' < K_in unless K_in == 1.
template <typename T>
Var<T> channel_squeeze(Var<T> y, Var<T> w);
// z [..., D, K'] x w [K', K_out] -> [..., D, K_out]. Requires K_out > K' unless K' == 1.
template <typename T>
Var<T> channel_expand(Var<T> z, Var<T> w);

template <typename T>
Var<T> estimate_logits(Var<T> x, VtnParams<T>& params, const VtnConfig& cfg, bool training);

// Gathers r [B,H,W,C] over the window of every pixel -> [B,H,W,N,C];
// out-of-image candidates read 0.
template <typename T>
Var<T> window_gather(Var<T> r, std::int64_t radius);

// mask[(h*W + w)*N + n] == 1 iff candidate n of pixel (h,w) lies in the image.
std::vector<std::uint8_t> candidate_mask(std::int64_t h, std::int64_t w, std::int64_t radius);
// Same mask broadcast to a [B,H,W,N,C] volume.
std::vector<std::uint8_t> candidate_mask_volume(std::int64_t b, std::int64_t h, std::int64_t w,
                                                std::int64_t radius, std::int64_t c);

template <typename T>
Var<T> infer_probabilities(Var<T> logits, Var<T> response, const VtnConfig& cfg);

// Expected offset under P: [B,H,W,N,C] -> [B,H,W,C,2].
template <typename T>
Var<T> aggregate_warp_field(Var<T> probs, const VtnConfig& cfg);

template <typename T>
VtnOutput<T> vtn_forward(Var<T> u, VtnParams<T>& params, const VtnConfig& cfg, bool training);

// Splits G [B,H,W,C,2] into the C fields of sample `b`.
template <typename T>
std::vector<WarpField<T>> split_fields(const Tensor<T>& field, std::int64_t b = 0);

}  // namespace vtn

#endif  // VTN_VTN_LAYER_HPP_
