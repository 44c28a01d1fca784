// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/model.hpp"

#include <cmath>

#include "vtn/hash.hpp"

namespace vtn {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kStnStyle: return "stn-style";
    case Variant::kVtn: return "vtn";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "base") return Variant::kBase;
  if (s == "stn-style") return Variant::kStnStyle;
  if (s == "vtn") return Variant::kVtn;
  throw ConfigError("unknown variant '" + s + "' (expected base, stn-style or vtn)");
}

std::string to_string(ClassifierHead h) { return h == ClassifierHead::kGap ? "gap" : "flatten"; }

ClassifierHead classifier_from_string(const std::string& s) {
  if (s == "gap") return ClassifierHead::kGap;
  if (s == "flatten") return ClassifierHead::kFlatten;
  throw ConfigError("unknown classifier '" + s + "' (expected gap or flatten)");
}

namespace {

std::int64_t pooled_size(std::int64_t size, const std::vector<bool>& pool) {
  for (bool p : pool) {
    if (p) size /= 2;
  }
  return size;
}

}  // namespace

std::int64_t ModelSpec::feature_height() const { return pooled_size(height, pool); }
std::int64_t ModelSpec::feature_width() const { return pooled_size(width, pool); }

void ModelSpec::validate() const {
  if (widths.empty()) throw ConfigError("model: need at least one conv block");
  if (pool.size() != widths.size()) throw ConfigError("model: pool flags must match conv blocks");
  if (classes < 2) throw ConfigError("model: need at least two classes");
  if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
  for (auto w : widths) {
    if (w < 1) throw ConfigError("model: block widths must be >= 1");
  }
  std::int64_t h = height, w = width;
  for (bool p : pool) {
    if (p && (h % 2 != 0 || w % 2 != 0)) {
      throw ConfigError("model: input " + std::to_string(height) + "x" + std::to_string(width) +
                        " cannot be halved by every pooling block");
    }
    if (p) h /= 2, w /= 2;
  }
}

template <typename T>
Model<T> Model<T>::build(const ModelSpec& spec, std::optional<VtnConfig> vtn, std::uint64_t seed) {
  spec.validate();
  switch (spec.variant) {
    case Variant::kBase:
      if (vtn) throw ConfigError("model: base variant takes no vtn configuration");
      break;
    case Variant::kStnStyle:
      if (!vtn) {
        vtn = VtnConfig{};
        vtn->groups = 1;
      }
      if (vtn->groups != 1) {
        throw ConfigError("model: stn-style uses a single warping field (groups must be 1, got " +
                          std::to_string(vtn->groups) + ")");
      }
      break;
    case Variant::kVtn:
      if (!vtn) throw ConfigError("model: vtn variant requires a vtn configuration");
      break;
  }
  if (vtn) vtn->validate(spec.feature_channels());

  Model m;
  m.spec_ = spec;
  m.vtn_cfg_ = vtn;
  Rng rng(mix_seed(seed, 1));
  std::int64_t cin = spec.in_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    const std::int64_t cout = spec.widths[i];
    const std::string p = "backbone.block" + std::to_string(i + 1);
    ConvBlockParams<T> b;
    b.w = Parameter<T>(p + ".conv.w",
                       normal_tensor<T>(Shape{3, 3, cin, cout}, std::sqrt(2.0 / double(9 * cin)), rng));
    b.b = Parameter<T>(p + ".conv.b", Tensor<T>(Shape{cout}));
    b.gamma = Parameter<T>(p + ".bn.gamma", Tensor<T>(Shape{cout}, T(1)));
    b.beta = Parameter<T>(p + ".bn.beta", Tensor<T>(Shape{cout}));
    b.bn = BatchNormStats<T>(cout);
    m.blocks_.push_back(std::move(b));
    cin = cout;
  }
  std::int64_t fan_in = spec.feature_channels();
  if (spec.classifier == ClassifierHead::kFlatten) fan_in *= spec.feature_height() * spec.feature_width();
  m.fc_w_ = Parameter<T>("classifier.w",
                         normal_tensor<T>(Shape{fan_in, spec.classes}, 1.0 / std::sqrt(double(fan_in)), rng));
  m.fc_b_ = Parameter<T>("classifier.b", Tensor<T>(Shape{spec.classes}));
  if (vtn) {
    Rng vrng(mix_seed(seed, 2));
    m.vtn_ = VtnParams<T>::init(*vtn, vrng, "vtn");
  }
  return m;
}

template <typename T>
ModelOutput<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& images, bool training) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != spec_.height || s[2] != spec_.width || s[3] != spec_.in_channels) {
    throw DimensionError("model: expected images [B," + std::to_string(spec_.height) + "," +
                         std::to_string(spec_.width) + "," + std::to_string(spec_.in_channels) + "], got " +
                         to_string(s));
  }
  const BatchNormOptions bn{0.9, 1e-5, training};
  Var<T> x = tape.constant(images);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    x = conv2d(x, tape.parameter(b.w), std::optional<Var<T>>(tape.parameter(b.b)), Conv2dOptions{1, 1});
    x = relu(batch_norm(x, tape.parameter(b.gamma), tape.parameter(b.beta), b.bn, bn));
    if (spec_.pool[i]) x = maxpool2(x);
  }
  ModelOutput<T> out;
  out.features = x;
  out.warped = x;
  if (vtn_cfg_) {
    out.warp = vtn_forward(x, vtn_, *vtn_cfg_, training);
    out.warped = out.warp->warped;
  }
  const Shape& fs = out.warped.shape();
  const std::int64_t b = fs[0], hw = fs[1] * fs[2], k = fs[3];
  Var<T> pooled;
  if (spec_.classifier == ClassifierHead::kGap) {
    pooled = scale(sum_axis(reshape(out.warped, Shape{b, hw, k}), 1), T(1) / static_cast<T>(hw));
  } else {
    pooled = reshape(out.warped, Shape{b, hw * k});
  }
  out.logits = add_bias(matmul(pooled, tape.parameter(fc_w_)), tape.parameter(fc_b_));
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& b : blocks_) {
    for (auto* p : {&b.w, &b.b, &b.gamma, &b.beta}) out.push_back(p);
  }
  if (vtn_cfg_) {
    for (auto* p : vtn_.parameters()) out.push_back(p);
  }
  out.push_back(&fc_w_);
  out.push_back(&fc_b_);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "backbone.block" + std::to_string(i + 1) + ".bn.running_";
    out.emplace_back(p + "mean", &blocks_[i].bn.running_mean);
    out.emplace_back(p + "var", &blocks_[i].bn.running_var);
  }
  if (vtn_cfg_) {
    for (auto& e : vtn_.buffers("vtn")) out.push_back(e);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto* p : parameters()) out.emplace_back(p->name, &p->value);
  for (auto& e : buffers()) out.push_back(e);
  return out;
}

template <typename T>
std::int64_t Model<T>::parameter_count() {
  std::int64_t n = 0;
  for (auto* p : parameters()) n += p->value.numel();
  return n;
}

template class Model<float>;
template class Model<double>;

}  // namespace vtn
