// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Small classification networks for the synthetic benchmark: a conv backbone,
// an optional warping module after the last conv block, and a linear
// classifier.

#ifndef VTN_MODEL_HPP_
#define VTN_MODEL_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vtn/vtn_layer.hpp"

namespace vtn {

enum class Variant { kBase, kStnStyle, kVtn };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

enum class ClassifierHead {
  kGap,      // global average pool, then linear
  kFlatten,  // linear over the whole feature map
};

std::string to_string(ClassifierHead h);
ClassifierHead classifier_from_string(const std::string& s);

struct ModelSpec {
  Variant variant = Variant::kVtn;
  std::int64_t height = 32, width = 32, in_channels = 1;
  std::int64_t classes = 10;
  // Conv-BN-ReLU blocks; block i has widths[i] output channels and is
  // followed by a 2x2 max-pool when pool[i] is set.
  std::vector<std::int64_t> widths{8, 16, 16};
  std::vector<bool> pool{true, true, false};
  ClassifierHead classifier = ClassifierHead::kGap;

  std::int64_t feature_channels() const { return widths.back(); }
  std::int64_t feature_height() const;
  std::int64_t feature_width() const;
  void validate() const;
};

template <typename T>
struct ConvBlockParams {
  Parameter<T> w, b, gamma, beta;
  BatchNormStats<T> bn;
};

template <typename T>
struct ModelOutput {
  Var<T> logits;    // [B, classes]
  Var<T> features;  // U, backbone output [B,h,w,K]
  Var<T> warped;    // V, classifier input; equals `features` for base
  std::optional<VtnOutput<T>> warp;
};

template <typename T>
class Model {
 public:
  // The backbone and classifier draw from one random stream and the warping
  // module from another, so every variant built from the same seed shares
  // identical backbone and classifier weights. `vtn` must be absent for base
  // and is required for vtn; stn-style defaults to a single group and
  // rejects more than one.
  static Model build(const ModelSpec& spec, std::optional<VtnConfig> vtn, std::uint64_t seed);

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // images: [B,H,W,Cin]
  ModelOutput<T> forward(Tape<T>& tape, const Tensor<T>& images, bool training);

  const ModelSpec& spec() const { return spec_; }
  const std::optional<VtnConfig>& vtn_config() const { return vtn_cfg_; }
  bool has_warp() const { return vtn_cfg_.has_value(); }

  std::vector<Parameter<T>*> parameters();
  std::vector<std::pair<std::string, Tensor<T>*>> buffers();
  // Parameters then buffers, in a fixed order; the checkpoint table.
  std::vector<std::pair<std::string, Tensor<T>*>> state();
  std::int64_t parameter_count();

 private:
  ModelSpec spec_;
  std::optional<VtnConfig> vtn_cfg_;
  std::vector<ConvBlockParams<T>> blocks_;
  VtnParams<T> vtn_;
  Parameter<T> fc_w_, fc_b_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace vtn

#endif  // VTN_MODEL_HPP_
