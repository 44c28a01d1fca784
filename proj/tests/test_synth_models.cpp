// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "vtn/errors.hpp"
#include "vtn/hash.hpp"
#include "vtn/model.hpp"
#include "vtn/synth.hpp"
#include "vtn/training.hpp"

namespace vtn {
namespace {

SceneSpec frozen(SceneSpec s) {
  s.translation = 0;
  s.rotation = 0;
  s.scale_min = s.scale_max = 1.0;
  s.global_jitter = 0;
  s.noise_sigma = 0;
  return s;
}

std::pair<double, double> centroid(const Tensor<float>& img) {
  double m = 0, sy = 0, sx = 0;
  for (std::int64_t y = 0; y < img.dim(0); ++y)
    for (std::int64_t x = 0; x < img.dim(1); ++x) {
      const double v = img.at({y, x, 0});
      m += v, sy += v * y, sx += v * x;
    }
  return {sy / m, sx / m};
}

TEST(Render, FrozenRangesGiveTheTemplate) {
  const SceneSpec s = frozen(SceneSpec::desk_default());
  for (std::int64_t c = 0; c < s.class_count(); ++c) {
    const auto ref = render_instance(s, c, 1);
    for (std::uint64_t seed = 2; seed < 6; ++seed) EXPECT_EQ(render_instance(s, c, seed), ref) << "class " << c;
  }
}

TEST(Render, Deterministic) {
  const SceneSpec s = SceneSpec::desk_default();
  EXPECT_EQ(render_instance(s, 3, 99), render_instance(s, 3, 99));
  EXPECT_NE(render_instance(s, 3, 99), render_instance(s, 3, 100));
  EXPECT_THROW(render_instance(s, 10, 1), ConfigError);
}

TEST(Render, TranslationBoundsCentroidShift) {
  SceneSpec s = frozen(SceneSpec::desk_default());
  s.classes = {{PartSpec{Primitive::kDisk, 16, 16, 1.0, 4.0, 0}}, {PartSpec{Primitive::kCross, 15, 17, 1.0, 4.0, 0}}};
  const auto base0 = centroid(render_instance(s, 0, 0)), base1 = centroid(render_instance(s, 1, 0));
  s.translation = 3.0;
  double largest = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    for (std::int64_t c = 0; c < 2; ++c) {
      const auto b = c == 0 ? base0 : base1;
      const auto m = centroid(render_instance(s, c, seed));
      largest = std::max({largest, std::abs(m.first - b.first), std::abs(m.second - b.second)});
    }
  }
  EXPECT_LE(largest, 3.0 + 0.05);
  EXPECT_GT(largest, 2.0);  // the range is actually used
}

TEST(Render, PartsMoveIndependently) {
  // Two-part class: the offset between part centroids varies across seeds.
  SceneSpec s = frozen(SceneSpec::desk_default());
  s.classes = {{PartSpec{Primitive::kDisk, 9.5, 16, 1.0, 3.0, 0}, PartSpec{Primitive::kDisk, 22.5, 16, 1.0, 3.0, 0}},
               {PartSpec{Primitive::kDisk, 16, 16, 1.0, 3.0, 0}}};
  s.translation = 2.0;
  std::set<long> gaps;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = render_instance(s, 0, seed);
    Tensor<float> top(Shape{16, 32, 1}), bottom(Shape{16, 32, 1});
    std::copy_n(img.ptr(), 16 * 32, top.ptr());
    std::copy_n(img.ptr() + 16 * 32, 16 * 32, bottom.ptr());
    gaps.insert(std::lround(10 * (centroid(bottom).first + 16 - centroid(top).first)));
  }
  EXPECT_GT(gaps.size(), 5u);
}

TEST(SceneSpec, ValidationErrors) {
  SceneSpec s = SceneSpec::desk_default();
  EXPECT_NO_THROW(s.validate());
  SceneSpec off = s;
  off.classes[0][0].row = 1.0;
  EXPECT_THROW(off.validate(), ConfigError);
  SceneSpec wide = s;
  wide.translation = 12.0;
  EXPECT_THROW(wide.validate(), ConfigError);
  SceneSpec neg = s;
  neg.noise_sigma = -0.1;
  EXPECT_THROW(neg.validate(), ConfigError);
  SceneSpec one = s;
  one.classes.resize(1);
  EXPECT_THROW(one.validate(), ConfigError);
  EXPECT_THROW(make_dataset(s, 0, 5, 1), ConfigError);
}

TEST(SceneSpec, JsonRoundTripAndUnknownKeys) {
  const SceneSpec s = SceneSpec::desk_default();
  const SceneSpec back = scene_spec_from_json(scene_spec_to_json(s));
  EXPECT_EQ(scene_spec_to_json(back), scene_spec_to_json(s));
  std::string bad = scene_spec_to_json(s);
  bad.insert(1, "\"colour\": 3, ");
  EXPECT_THROW(scene_spec_from_json(bad), ConfigError);
}

TEST(Dataset, BalancedDisjointAndDeterministic) {
  const SceneSpec s = SceneSpec::desk_default();
  const auto a = make_dataset(s, 2000, 500, 4);
  std::vector<int> count(10);
  for (auto l : a.train.labels) ++count[static_cast<std::size_t>(l)];
  for (int c : count) EXPECT_EQ(c, 200);
  std::set<std::uint64_t> train_hashes(a.train.hashes.begin(), a.train.hashes.end());
  EXPECT_EQ(train_hashes.size(), 2000u);
  for (auto h : a.test.hashes) EXPECT_EQ(train_hashes.count(h), 0u);
  const auto b = make_dataset(s, 2000, 500, 4);
  EXPECT_EQ(manifest_hash(dataset_manifest(s, a)), manifest_hash(dataset_manifest(s, b)));
  const auto c = make_dataset(s, 2000, 500, 5);
  EXPECT_NE(manifest_hash(dataset_manifest(s, a)), manifest_hash(dataset_manifest(s, c)));
}

TEST(Dataset, BatchAndFlip) {
  const auto d = make_dataset(SceneSpec::desk_default(), 20, 10, 2);
  std::vector<std::int64_t> idx{3, 7};
  std::vector<std::uint8_t> flip{0, 1};
  const auto b = d.train.batch<double>(idx, flip);
  EXPECT_EQ(b.shape(), (Shape{2, 32, 32, 1}));
  const auto img3 = d.train.image(3), img7 = d.train.image(7);
  EXPECT_EQ(b.at({0, 5, 9, 0}), static_cast<double>(img3[5 * 32 + 9]));
  EXPECT_EQ(b.at({1, 5, 9, 0}), static_cast<double>(img7[5 * 32 + 22]));
}

TEST(Dataset, DiskRoundTripVerifiesHashes) {
  const auto dir = std::filesystem::temp_directory_path() / "vtn_test_dataset";
  std::filesystem::remove_all(dir);
  const SceneSpec s = SceneSpec::desk_default();
  const auto d = make_dataset(s, 30, 10, 8);
  write_dataset(dir, s, d);
  SceneSpec back_spec;
  const auto back = read_dataset(dir, &back_spec);
  EXPECT_EQ(back.train.pixels, d.train.pixels);
  EXPECT_EQ(back.test.labels, d.test.labels);
  EXPECT_EQ(scene_spec_to_json(back_spec), scene_spec_to_json(s));
  // Corrupt one pixel of the test blob.
  {
    std::fstream f(dir / "test.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8 + 12 + 4 * 100);
    const float v = 0.123f;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(read_dataset(dir), DataError);
  std::filesystem::remove_all(dir);
}

ModelSpec spec_for(Variant v) {
  ModelSpec s;
  s.variant = v;
  return s;
}

TEST(Model, LogitShapeAndBuildRules) {
  auto base = Model<double>::build(spec_for(Variant::kBase), std::nullopt, 1);
  Tape<double> t;
  auto out = base.forward(t, Tensor<double>(Shape{3, 32, 32, 1}, 0.5), false);
  EXPECT_EQ(out.logits.shape(), (Shape{3, 10}));
  EXPECT_EQ(out.features.shape(), (Shape{3, 8, 8, 16}));
  EXPECT_FALSE(out.warp.has_value());
  EXPECT_THROW(Model<double>::build(spec_for(Variant::kBase), VtnConfig{}, 1), ConfigError);
  EXPECT_THROW(Model<double>::build(spec_for(Variant::kVtn), std::nullopt, 1), ConfigError);
  EXPECT_THROW(Model<double>::build(spec_for(Variant::kStnStyle), VtnConfig{}, 1), ConfigError);
  VtnConfig bad;
  bad.groups = 3;
  EXPECT_THROW(Model<double>::build(spec_for(Variant::kVtn), bad, 1), ConfigError);
}

TEST(Model, StnStyleIsVtnWithOneGroup) {
  VtnConfig one;
  one.groups = 1;
  auto stn = Model<double>::build(spec_for(Variant::kStnStyle), std::nullopt, 3);
  auto vtn = Model<double>::build(spec_for(Variant::kVtn), one, 3);
  EXPECT_EQ(stn.parameter_count(), vtn.parameter_count());
  const auto d = make_dataset(SceneSpec::desk_default(), 10, 10, 1);
  std::vector<std::int64_t> idx{0, 1, 2, 3};
  Tape<double> t1, t2;
  EXPECT_EQ(stn.forward(t1, d.test.batch<double>(idx), false).logits.value(),
            vtn.forward(t2, d.test.batch<double>(idx), false).logits.value());
}

TEST(Model, VariantsAgreeAtInitWithDirectRegressionHead) {
  VtnConfig direct;
  direct.probabilistic = false;
  VtnConfig direct_one = direct;
  direct_one.groups = 1;
  auto base = Model<double>::build(spec_for(Variant::kBase), std::nullopt, 9);
  auto stn = Model<double>::build(spec_for(Variant::kStnStyle), direct_one, 9);
  auto vtn = Model<double>::build(spec_for(Variant::kVtn), direct, 9);
  const auto d = make_dataset(SceneSpec::desk_default(), 10, 10, 1);
  std::vector<std::int64_t> idx{0, 1, 2, 3, 4};
  const auto x = d.test.batch<double>(idx);
  Tape<double> t1, t2, t3;
  const auto lb = base.forward(t1, x, false).logits.value();
  EXPECT_EQ(stn.forward(t2, x, false).logits.value(), lb);
  EXPECT_EQ(vtn.forward(t3, x, false).logits.value(), lb);
  // Shared backbone and classifier: parameter counts differ only by the warping module.
  std::int64_t warp_params = 0;
  for (auto* p : vtn.parameters())
    if (p->name.rfind("vtn.", 0) == 0) warp_params += p->value.numel();
  EXPECT_EQ(vtn.parameter_count() - warp_params, base.parameter_count());
}

// A classifier fit to undeformed templates loses accuracy on deformed
// instances: the benchmark's nuisance is real. The flatten head is used
// because pooled features cannot separate the arrangements at all.
TEST(Benchmark, DeformationIsANuisance) {
  const SceneSpec deformed = SceneSpec::desk_default();
  SceneSpec templ = frozen(deformed);
  templ.noise_sigma = deformed.noise_sigma;
  const auto clean = make_dataset(templ, 200, 200, 1);
  const auto hard = make_dataset(deformed, 10, 500, 2);
  ModelSpec ms = spec_for(Variant::kBase);
  ms.classifier = ClassifierHead::kFlatten;
  auto model = Model<float>::build(ms, std::nullopt, 1);
  auto optim = OptimState<float>::init(model.parameters(), 0.05, 0.9, 5e-4);
  TrainOptions opt;
  for (int e = 0; e < 8; ++e) train_epoch(model, clean.train, optim, opt, static_cast<std::uint64_t>(e));
  const double acc_clean = evaluate(model, clean.test, opt, 0).accuracy;
  const double acc_hard = evaluate(model, hard.test, opt, 0).accuracy;
  EXPECT_GT(acc_clean, 0.9);
  EXPECT_GE(acc_clean - acc_hard, 0.10) << "clean " << acc_clean << " deformed " << acc_hard;
}

}  // namespace
}  // namespace vtn
