// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a flat JSON object with an explicit schema version.
// Unknown keys and ill-typed values are rejected with the offending field
// named in the error.

#ifndef VTN_CONFIG_HPP_
#define VTN_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vtn/model.hpp"
#include "vtn/synth.hpp"
#include "vtn/training.hpp"

namespace vtn {

inline constexpr int kConfigSchemaVersion = 1;

enum class Precision { kFloat32, kFloat64 };

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  // Data: a pre-generated dataset directory, or a scene spec file (empty:
  // built-in benchmark) rendered on the fly.
  std::string dataset_dir;
  std::string dataset_spec;
  std::int64_t n_train = 2000, n_test = 500;
  std::uint64_t data_seed = 1;
  // Model.
  std::vector<Variant> variants{Variant::kVtn};
  ClassifierHead classifier = ClassifierHead::kGap;
  VtnConfig vtn;  // groups applies to vtn; stn-style always uses one group
  // Objective.
  double lambda = 1.0;
  double alpha = 1.0;
  // Optimizer and schedule.
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::int64_t epochs = 10;
  std::int64_t batch_size = 32;
  bool hflip = false;
  std::vector<std::uint64_t> seeds{0};
  Precision precision = Precision::kFloat32;
  std::string output_dir = "runs";

  void validate() const;
  // Model spec and warping-module configuration for one variant.
  ModelSpec model_spec(Variant v, std::int64_t height, std::int64_t width, std::int64_t classes) const;
  std::optional<VtnConfig> vtn_config(Variant v) const;
  TrainOptions train_options() const;

  // Canonical JSON (fixed key order), so equal configs serialize equally.
  std::string to_json() const;
  std::uint64_t hash() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);
};

std::string to_string(Precision p);

}  // namespace vtn

#endif  // VTN_CONFIG_HPP_
