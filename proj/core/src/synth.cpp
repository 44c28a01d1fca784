// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "vtn/binary_io.hpp"
#include "vtn/hash.hpp"
#include "vtn/random.hpp"

namespace vtn {

using json = nlohmann::ordered_json;

namespace {

constexpr double kHalfWidth = 0.9;  // bar / cross arm half-thickness
constexpr double kRingHalf = 0.75;  // ring wall half-thickness

double box_sdf(double u, double v, double hu, double hv) {
  const double qu = std::abs(u) - hu, qv = std::abs(v) - hv;
  const double ou = std::max(qu, 0.0), ov = std::max(qv, 0.0);
  return std::hypot(ou, ov) + std::min(std::max(qu, qv), 0.0);
}

// Signed distance (pixels) from local offset (u, v) to a primitive of the given size.
double primitive_sdf(Primitive p, double u, double v, double size) {
  switch (p) {
    case Primitive::kDisk:
      return std::hypot(u, v) - size;
    case Primitive::kRing:
      return std::abs(std::hypot(u, v) - (size - kRingHalf)) - kRingHalf;
    case Primitive::kBar:
      return box_sdf(u, v, size, kHalfWidth);
    case Primitive::kCross:
      return std::min(box_sdf(u, v, size, kHalfWidth), box_sdf(u, v, kHalfWidth, size));
  }
  return 1e9;
}

}  // namespace

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::kDisk: return "disk";
    case Primitive::kBar: return "bar";
    case Primitive::kCross: return "cross";
    case Primitive::kRing: return "ring";
  }
  return "?";
}

Primitive primitive_from_string(const std::string& s) {
  if (s == "disk") return Primitive::kDisk;
  if (s == "bar") return Primitive::kBar;
  if (s == "cross") return Primitive::kCross;
  if (s == "ring") return Primitive::kRing;
  throw ConfigError("unknown primitive '" + s + "'");
}

void SceneSpec::validate() const {
  if (height < 8 || width < 8) throw ConfigError("scene: canvas must be at least 8x8");
  if (classes.size() < 2) throw ConfigError("scene: need at least two classes");
  if (translation < 0 || rotation < 0 || global_jitter < 0 || noise_sigma < 0) {
    throw ConfigError("scene: deformation ranges and noise must be non-negative");
  }
  if (!(scale_min > 0) || scale_max < scale_min) throw ConfigError("scene: need 0 < scale_min <= scale_max");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].empty()) throw ConfigError("scene: class " + std::to_string(c) + " has no parts");
    for (std::size_t k = 0; k < classes[c].size(); ++k) {
      const PartSpec& p = classes[c][k];
      if (!(p.size > 0) || !(p.intensity > 0)) {
        throw ConfigError("scene: class " + std::to_string(c) + " part " + std::to_string(k) +
                          " needs positive size and intensity");
      }
      const double reach = p.size * scale_max + kHalfWidth + translation + global_jitter + 0.5;
      if (p.row - reach < 0 || p.row + reach > static_cast<double>(height - 1) || p.col - reach < 0 ||
          p.col + reach > static_cast<double>(width - 1)) {
        throw ConfigError("scene: class " + std::to_string(c) + " part " + std::to_string(k) + " (" +
                          to_string(p.shape) + ") can leave the canvas under maximal deformation");
      }
    }
  }
}

SceneSpec SceneSpec::desk_default() {
  SceneSpec s;
  constexpr double lo = 9.5, mid = 15.5, hi = 21.5;
  using P = Primitive;
  // Every class holds the same three parts; only their arrangement differs.
  const PartSpec parts[3] = {{P::kDisk, 0, 0, 1.0, 3.0}, {P::kRing, 0, 0, 1.0, 3.5}, {P::kCross, 0, 0, 1.0, 3.5}};
  const double layout_a[3][2] = {{lo, lo}, {lo, hi}, {hi, mid}};
  const double layout_b[3][2] = {{lo, mid}, {hi, lo}, {hi, hi}};
  // All six orders in layout a, the first four in layout b.
  for (const auto* slots : {&layout_a, &layout_b}) {
    int order[3] = {0, 1, 2};
    const int count = slots == &layout_a ? 6 : 4;
    for (int n = 0; n < count; ++n, std::next_permutation(order, order + 3)) {
      std::vector<PartSpec> cls;
      for (int i = 0; i < 3; ++i) {
        PartSpec p = parts[order[i]];
        p.row = (*slots)[i][0];
        p.col = (*slots)[i][1];
        cls.push_back(p);
      }
      s.classes.push_back(std::move(cls));
    }
  }
  return s;
}

Tensor<float> render_instance(const SceneSpec& spec, std::int64_t class_id, std::uint64_t seed) {
  if (class_id < 0 || class_id >= spec.class_count()) {
    throw ConfigError("render_instance: class " + std::to_string(class_id) + " out of range");
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(class_id)));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> scale_dist(spec.scale_min, std::nextafter(spec.scale_max, 1e300));
  std::normal_distribution<double> noise(0.0, 1.0);

  const double gy = spec.global_jitter * unit(rng);
  const double gx = spec.global_jitter * unit(rng);
  struct Placed {
    Primitive shape;
    double cy, cx, cos_t, sin_t, scale, size, intensity;
  };
  std::vector<Placed> parts;
  for (const PartSpec& p : spec.classes[class_id]) {
    const double ty = spec.translation * unit(rng);
    const double tx = spec.translation * unit(rng);
    const double rot = spec.rotation * unit(rng);
    const double sc = spec.scale_min == spec.scale_max ? spec.scale_min : scale_dist(rng);
    const double theta = (p.angle + rot) * std::numbers::pi / 180.0;
    parts.push_back({p.shape, p.row + ty + gy, p.col + tx + gx, std::cos(theta), std::sin(theta), sc, p.size,
                     p.intensity});
  }

  Tensor<float> img(Shape{spec.height, spec.width, 1});
  for (std::int64_t y = 0; y < spec.height; ++y) {
    for (std::int64_t x = 0; x < spec.width; ++x) {
      double v = 0;
      for (const auto& p : parts) {
        const double dy = static_cast<double>(y) - p.cy, dx = static_cast<double>(x) - p.cx;
        // rotate into the part frame; u runs along the part's main axis
        const double u = (p.cos_t * dx + p.sin_t * dy) / p.scale;
        const double w = (-p.sin_t * dx + p.cos_t * dy) / p.scale;
        const double sd = primitive_sdf(p.shape, u, w, p.size) * p.scale;
        const double cover = std::clamp(0.5 - sd, 0.0, 1.0);
        v = std::max(v, p.intensity * cover);
      }
      if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
      img[y * spec.width + x] = static_cast<float>(v);
    }
  }
  return img;
}

// ---- datasets --------------------------------------------------------------

template <typename T>
Tensor<T> Dataset::batch(std::span<const std::int64_t> indices, std::span<const std::uint8_t> hflip) const {
  const std::int64_t b = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(Shape{b, height, width, 1});
  const std::int64_t px = height * width;
  for (std::int64_t i = 0; i < b; ++i) {
    const float* src = pixels.data() + indices[i] * px;
    T* dst = out.ptr() + i * px;
    const bool flip = !hflip.empty() && hflip[i];
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        dst[y * width + x] = static_cast<T>(src[y * width + (flip ? width - 1 - x : x)]);
      }
    }
  }
  return out;
}

template Tensor<float> Dataset::batch(std::span<const std::int64_t>, std::span<const std::uint8_t>) const;
template Tensor<double> Dataset::batch(std::span<const std::int64_t>, std::span<const std::uint8_t>) const;

std::span<const float> Dataset::image(std::int64_t i) const {
  const std::size_t px = static_cast<std::size_t>(height * width);
  return std::span<const float>(pixels).subspan(static_cast<std::size_t>(i) * px, px);
}

namespace {

Dataset render_split(const SceneSpec& spec, std::int64_t count, std::uint64_t first_seed) {
  Dataset d;
  d.height = spec.height;
  d.width = spec.width;
  d.pixels.reserve(static_cast<std::size_t>(count * spec.height * spec.width));
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t label = i % spec.class_count();
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    Tensor<float> img = render_instance(spec, label, seed);
    d.hashes.push_back(fnv1a64(std::as_bytes(img.data())));
    d.pixels.insert(d.pixels.end(), img.data().begin(), img.data().end());
    d.labels.push_back(label);
    d.seeds.push_back(seed);
  }
  return d;
}

json spec_json(const SceneSpec& s) {
  json classes = json::array();
  for (const auto& parts : s.classes) {
    json arr = json::array();
    for (const auto& p : parts) {
      arr.push_back({{"shape", to_string(p.shape)},
                     {"row", p.row},
                     {"col", p.col},
                     {"intensity", p.intensity},
                     {"size", p.size},
                     {"angle", p.angle}});
    }
    classes.push_back(std::move(arr));
  }
  return {{"height", s.height},           {"width", s.width},         {"translation", s.translation},
          {"rotation", s.rotation},       {"scale_min", s.scale_min}, {"scale_max", s.scale_max},
          {"global_jitter", s.global_jitter}, {"noise_sigma", s.noise_sigma}, {"classes", std::move(classes)}};
}

SceneSpec spec_from(const json& j) {
  static const char* kKeys[] = {"height", "width", "translation", "rotation", "scale_min",
                                "scale_max", "global_jitter", "noise_sigma", "classes"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(kKeys), std::end(kKeys), it.key()) == std::end(kKeys)) {
      throw ConfigError("scene spec: unknown key '" + it.key() + "'");
    }
  }
  SceneSpec s = SceneSpec::desk_default();
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.translation = j.value("translation", s.translation);
  s.rotation = j.value("rotation", s.rotation);
  s.scale_min = j.value("scale_min", s.scale_min);
  s.scale_max = j.value("scale_max", s.scale_max);
  s.global_jitter = j.value("global_jitter", s.global_jitter);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  if (j.contains("classes")) {
    s.classes.clear();
    for (const auto& parts : j.at("classes")) {
      std::vector<PartSpec> ps;
      for (const auto& p : parts) {
        PartSpec q;
        q.shape = primitive_from_string(p.at("shape").get<std::string>());
        q.row = p.at("row").get<double>();
        q.col = p.at("col").get<double>();
        q.intensity = p.value("intensity", 1.0);
        q.size = p.value("size", 4.0);
        q.angle = p.value("angle", 0.0);
        ps.push_back(q);
      }
      s.classes.push_back(std::move(ps));
    }
  }
  s.validate();
  return s;
}

json split_json(const Dataset& d) {
  json hashes = json::array();
  for (auto h : d.hashes) hashes.push_back(hex64(h));
  return {{"count", d.size()}, {"labels", d.labels}, {"seeds", d.seeds}, {"hashes", std::move(hashes)}};
}

void split_from(const json& j, Dataset& d) {
  d.labels = j.at("labels").get<std::vector<std::int64_t>>();
  d.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  d.hashes.clear();
  for (const auto& h : j.at("hashes")) d.hashes.push_back(std::stoull(h.get<std::string>(), nullptr, 16));
  const std::int64_t count = j.at("count").get<std::int64_t>();
  if (static_cast<std::int64_t>(d.labels.size()) != count || d.seeds.size() != d.labels.size() ||
      d.hashes.size() != d.labels.size()) {
    throw DataError("dataset manifest: inconsistent split lengths");
  }
}

}  // namespace

DatasetSplits make_dataset(const SceneSpec& spec, std::int64_t n_train, std::int64_t n_test, std::uint64_t seed) {
  if (n_train <= 0 || n_test <= 0) throw ConfigError("make_dataset: split sizes must be positive");
  spec.validate();
  DatasetSplits s;
  s.seed = seed;
  const std::uint64_t base = mix_seed(seed) >> 8;  // headroom so base + n never wraps
  s.train = render_split(spec, n_train, base);
  s.test = render_split(spec, n_test, base + static_cast<std::uint64_t>(n_train));
  return s;
}

std::string dataset_manifest(const SceneSpec& spec, const DatasetSplits& splits) {
  json j = {{"format", "vtn-dataset"},
            {"version", 1},
            {"seed", splits.seed},
            {"spec", spec_json(spec)},
            {"train", split_json(splits.train)},
            {"test", split_json(splits.test)}};
  return j.dump(2) + "\n";
}

std::uint64_t manifest_hash(const std::string& manifest) { return fnv1a64(manifest); }

std::string scene_spec_to_json(const SceneSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

SceneSpec scene_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec: invalid JSON: ") + e.what());
  }
  try {
    return spec_from(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
}

void write_image_blob(const std::filesystem::path& path, const Dataset& data) {
  binary::Writer w;
  w.bytes("VTNDATA1");
  w.u32(static_cast<std::uint32_t>(data.height));
  w.u32(static_cast<std::uint32_t>(data.width));
  w.u32(static_cast<std::uint32_t>(data.size()));
  for (float v : data.pixels) w.f32(v);
  binary::write_file(path.string(), w.data());
}

void read_image_blob(const std::filesystem::path& path, Dataset& data) {
  const std::string raw = binary::read_file(path.string());
  binary::Reader r(raw);
  if (r.bytes(8, "magic") != "VTNDATA1") throw ParseError("bad image blob magic in " + path.string(), 0);
  data.height = r.u32("height");
  data.width = r.u32("width");
  const std::uint32_t count = r.u32("count");
  const std::size_t n = static_cast<std::size_t>(count) * data.height * data.width;
  data.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.pixels[i] = r.f32("pixel data");
  if (r.remaining() != 0) r.fail("trailing bytes after image data in " + path.string());
}

void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, const DatasetSplits& splits) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_image_blob(dir / "train.bin", splits.train);
  write_image_blob(dir / "test.bin", splits.test);
  binary::write_file((dir / "manifest.json").string(), dataset_manifest(spec, splits));
}

DatasetSplits read_dataset(const std::filesystem::path& dir, SceneSpec* spec) {
  json j;
  try {
    j = json::parse(binary::read_file((dir / "manifest.json").string()));
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  }
  DatasetSplits s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    split_from(j.at("train"), s.train);
    split_from(j.at("test"), s.test);
    if (spec) *spec = spec_from(j.at("spec"));
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  }
  for (auto* d : {&s.train, &s.test}) {
    const auto labels = d->labels;
    read_image_blob(dir / (d == &s.train ? "train.bin" : "test.bin"), *d);
    if (static_cast<std::int64_t>(d->pixels.size()) != d->size() * d->height * d->width) {
      throw DataError("dataset: image count does not match manifest");
    }
    for (std::int64_t i = 0; i < d->size(); ++i) {
      if (fnv1a64(std::as_bytes(d->image(i))) != d->hashes[i]) {
        throw DataError("dataset: content hash mismatch for sample " + std::to_string(i));
      }
    }
  }
  return s;
}

}  // namespace vtn
