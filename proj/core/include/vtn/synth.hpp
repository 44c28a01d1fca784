// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural benchmark whose classes are arrangements of a few primitive
// parts, each part moving independently of the others. Class identity lives
// in which parts appear and where; the per-part jitter is pure nuisance.

#ifndef VTN_SYNTH_HPP_
#define VTN_SYNTH_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vtn/tensor.hpp"

namespace vtn {

enum class Primitive { kDisk, kBar, kCross, kRing };

std::string to_string(Primitive p);
Primitive primitive_from_string(const std::string& s);

struct PartSpec {
  Primitive shape = Primitive::kDisk;
  double row = 16, col = 16;  // canonical centre in pixels
  double intensity = 1.0;
  double size = 4.0;   // radius (disk, ring) or half-length (bar, cross)
  double angle = 0.0;  // canonical orientation, degrees
};

struct SceneSpec {
  std::int64_t height = 32, width = 32;
  std::vector<std::vector<PartSpec>> classes;  // parts of each class
  // Independent per-part deformation ranges.
  double translation = 3.0;  // +-px per axis
  double rotation = 20.0;    // +-degrees
  double scale_min = 0.85, scale_max = 1.15;
  double global_jitter = 1.0;  // +-px per axis, shared by all parts of an instance
  double noise_sigma = 0.05;

  std::int64_t class_count() const { return static_cast<std::int64_t>(classes.size()); }
  // Throws ConfigError if a part can leave the canvas under the maximal
  // deformation or the spec is otherwise inconsistent.
  void validate() const;
  // 10 classes of 2-3 parts on a 32x32 canvas.
  static SceneSpec desk_default();
};

// Deterministic render of one instance, [H,W,1] in 32-bit. Label is class_id.
Tensor<float> render_instance(const SceneSpec& spec, std::int64_t class_id, std::uint64_t seed);

struct Dataset {
  std::int64_t height = 0, width = 0;
  std::vector<float> pixels;  // count x H x W
  std::vector<std::int64_t> labels;
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> hashes;  // FNV-1a of each image's bytes

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  // Stacks the selected images into [B,H,W,1]; hflip[i] != 0 mirrors image i.
  template <typename T>
  Tensor<T> batch(std::span<const std::int64_t> indices, std::span<const std::uint8_t> hflip = {}) const;
  std::span<const float> image(std::int64_t i) const;
};

struct DatasetSplits {
  Dataset train, test;
  std::uint64_t seed = 0;
};

// Class-balanced splits (label = index mod class count) with disjoint seed
// ranges: train instance i uses base+i, test instance i uses base+n_train+i.
DatasetSplits make_dataset(const SceneSpec& spec, std::int64_t n_train, std::int64_t n_test,
                           std::uint64_t seed);

// Manifest JSON with the generating spec, seed and per-sample seeds, labels
// and content hashes. Serialization is canonical, so equal inputs give equal
// text.
std::string dataset_manifest(const SceneSpec& spec, const DatasetSplits& splits);
std::uint64_t manifest_hash(const std::string& manifest);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);

// Image blob: magic "VTNDATA1", then little-endian u32 H, W, count, then
// count*H*W little-endian float32 pixels.
void write_image_blob(const std::filesystem::path& path, const Dataset& data);
// Fills height/width/pixels; labels etc. come from the manifest.
void read_image_blob(const std::filesystem::path& path, Dataset& data);

// Writes train.bin, test.bin and manifest.json into `dir`.
void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, const DatasetSplits& splits);
DatasetSplits read_dataset(const std::filesystem::path& dir, SceneSpec* spec = nullptr);

}  // namespace vtn

#endif  // VTN_SYNTH_HPP_
