// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/checkpoint.hpp"

#include <map>

#include "vtn/binary_io.hpp"

namespace vtn {

namespace {
constexpr std::string_view kMagic = "VTNCKPT1";
}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(c.version);
  w.u32(c.epoch);
  w.str(c.config);
  w.str(c.meta);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != numel(t.shape)) {
      throw ContractError("checkpoint: tensor " + t.name + " has " + std::to_string(t.data.size()) +
                          " values for shape " + to_string(t.shape));
    }
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    for (float v : t.data) w.f32(v);
  }
  w.u32(static_cast<std::uint32_t>(c.metrics.size()));
  for (const auto& m : c.metrics) {
    w.u64(static_cast<std::uint64_t>(m.epoch));
    w.str(m.split);
    w.f64(m.task_loss);
    w.f64(m.cons_loss);
    w.f64(m.accuracy);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  binary::Reader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw ParseError("checkpoint: bad magic", 0);
  Checkpoint c;
  const std::size_t version_at = r.offset();
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(c.version), version_at);
  }
  c.epoch = r.u32("epoch");
  c.config = r.str("config");
  c.meta = r.str("meta");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) r.fail("checkpoint: implausible rank " + std::to_string(rank) + " for " + t.name);
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t d = r.u64("tensor dim");
      if (d == 0 || d > (1ULL << 32)) r.fail("checkpoint: bad dimension for " + t.name);
      t.shape.push_back(static_cast<std::int64_t>(d));
      n *= d;
    }
    if (n * 4 > r.remaining()) r.fail("truncated input while reading data of " + t.name);
    t.data.resize(static_cast<std::size_t>(n));
    for (auto& v : t.data) v = r.f32("tensor data");
    c.tensors.push_back(std::move(t));
  }
  const std::uint32_t rows = r.u32("metrics count");
  for (std::uint32_t i = 0; i < rows; ++i) {
    MetricsRow m;
    m.epoch = static_cast<std::int64_t>(r.u64("metrics epoch"));
    m.split = r.str("metrics split");
    m.task_loss = r.f64("metrics task loss");
    m.cons_loss = r.f64("metrics consistency loss");
    m.accuracy = r.f64("metrics accuracy");
    c.metrics.push_back(std::move(m));
  }
  if (r.remaining() != 0) r.fail("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  binary::write_file(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(binary::read_file(path)); }

template <typename T>
std::vector<CheckpointTensor> capture_state(Model<T>& model) {
  std::vector<CheckpointTensor> out;
  for (auto& [name, t] : model.state()) {
    CheckpointTensor c;
    c.name = name;
    c.shape = t->shape();
    c.data.reserve(static_cast<std::size_t>(t->numel()));
    for (T v : t->data()) c.data.push_back(static_cast<float>(v));
    out.push_back(std::move(c));
  }
  return out;
}

template <typename T>
void restore_state(Model<T>& model, const std::vector<CheckpointTensor>& tensors) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto state = model.state();
  // Validate everything before touching the model.
  for (auto& [name, t] : state) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: missing parameter " + name);
    if (it->second->shape != t->shape()) {
      throw DimensionError("checkpoint: parameter " + name + " has shape " + to_string(it->second->shape) +
                           ", model expects " + to_string(t->shape()));
    }
  }
  if (by_name.size() != state.size()) {
    for (const auto& t : tensors) {
      bool known = false;
      for (auto& e : state) known = known || e.first == t.name;
      if (!known) throw DataError("checkpoint: unexpected parameter " + t.name);
    }
  }
  for (auto& [name, t] : state) {
    const auto& src = by_name.at(name)->data;
    for (std::size_t i = 0; i < src.size(); ++i) (*t)[static_cast<std::int64_t>(i)] = static_cast<T>(src[i]);
  }
}

template std::vector<CheckpointTensor> capture_state(Model<float>&);
template std::vector<CheckpointTensor> capture_state(Model<double>&);
template void restore_state(Model<float>&, const std::vector<CheckpointTensor>&);
template void restore_state(Model<double>&, const std::vector<CheckpointTensor>&);

}  // namespace vtn
