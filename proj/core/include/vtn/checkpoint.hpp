// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint file layout (all integers little-endian):
//   "VTNCKPT1" | u32 version | u32 epoch | str config | str meta
//   | u32 tensor count | per tensor: str name, u32 rank, u64 dims[rank], f32 data
//   | u32 metrics rows | per row: u64 epoch, str split, f64 task, f64 cons, f64 accuracy
// where str is a u32 byte length followed by the bytes.

#ifndef VTN_CHECKPOINT_HPP_
#define VTN_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vtn/model.hpp"

namespace vtn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct MetricsRow {
  std::int64_t epoch = 0;
  std::string split;
  double task_loss = 0, cons_loss = 0, accuracy = 0;
  bool operator==(const MetricsRow&) const = default;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t epoch = 0;
  std::string config;  // run configuration snapshot (JSON)
  std::string meta;    // model identity: variant, seed, input geometry (JSON)
  std::vector<CheckpointTensor> tensors;
  std::vector<MetricsRow> metrics;
};

std::string encode_checkpoint(const Checkpoint& c);
// Throws ParseError (with byte offset) on bad magic, version or truncation.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Parameters and buffers of `model`, in Model::state() order.
template <typename T>
std::vector<CheckpointTensor> capture_state(Model<T>& model);
// Copies tensors into `model`. Throws DimensionError naming the parameter on
// a shape mismatch, and DataError on missing or unexpected entries.
template <typename T>
void restore_state(Model<T>& model, const std::vector<CheckpointTensor>& tensors);

}  // namespace vtn

#endif  // VTN_CHECKPOINT_HPP_
