// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/config.hpp"

#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "vtn/binary_io.hpp"
#include "vtn/hash.hpp"

namespace vtn {

using json = nlohmann::ordered_json;

std::string to_string(Precision p) { return p == Precision::kFloat32 ? "float32" : "float64"; }

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw ConfigError("config field '" + field + "': " + msg);
  };
  if (schema_version != kConfigSchemaVersion) {
    fail("schema_version", "unsupported version " + std::to_string(schema_version) + " (expected " +
                               std::to_string(kConfigSchemaVersion) + ")");
  }
  if (!dataset_dir.empty() && !dataset_spec.empty()) {
    fail("dataset_spec", "give either dataset_dir or dataset_spec, not both");
  }
  if (n_train < 1) fail("n_train", "must be >= 1");
  if (n_test < 1) fail("n_test", "must be >= 1");
  if (variants.empty()) fail("variant", "need at least one variant");
  if (lambda < 0) fail("lambda", "must be >= 0");
  if (!(alpha > 0)) fail("alpha", "must be > 0");
  if (!(lr >= 0)) fail("lr", "must be >= 0");
  if (momentum < 0 || momentum >= 1) fail("momentum", "must be in [0, 1)");
  if (weight_decay < 0) fail("weight_decay", "must be >= 0");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (seeds.empty()) fail("seed", "need at least one seed");
  if (output_dir.empty()) fail("output_dir", "must not be empty");
  try {
    vtn.validate(ModelSpec{}.feature_channels());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ModelSpec RunConfig::model_spec(Variant v, std::int64_t height, std::int64_t width,
                                std::int64_t classes) const {
  ModelSpec m;
  m.variant = v;
  m.height = height;
  m.width = width;
  m.classes = classes;
  m.classifier = classifier;
  return m;
}

std::optional<VtnConfig> RunConfig::vtn_config(Variant v) const {
  if (v == Variant::kBase) return std::nullopt;
  VtnConfig c = vtn;
  if (v == Variant::kStnStyle) {
    c.groups = 1;
    c.squeeze_widths.clear();
  }
  return c;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.batch_size = batch_size;
  t.lambda = lambda;
  t.alpha = alpha;
  t.hflip = hflip;
  return t;
}

namespace {

json config_json(const RunConfig& c) {
  json variants = json::array();
  for (auto v : c.variants) variants.push_back(to_string(v));
  return {{"schema_version", c.schema_version},
          {"dataset_dir", c.dataset_dir},
          {"dataset_spec", c.dataset_spec},
          {"n_train", c.n_train},
          {"n_test", c.n_test},
          {"data_seed", c.data_seed},
          {"variant", variants},
          {"classifier", to_string(c.classifier)},
          {"groups", c.vtn.groups},
          {"radius", c.vtn.radius},
          {"beta", c.vtn.beta},
          {"levels", c.vtn.levels},
          {"feature_dim", c.vtn.feature_dim},
          {"squeeze_widths", c.vtn.squeeze_widths},
          {"head_kernel", c.vtn.head_kernel},
          {"channel_mixing", c.vtn.channel_mixing},
          {"probabilistic", c.vtn.probabilistic},
          {"lambda", c.lambda},
          {"alpha", c.alpha},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"hflip", c.hflip},
          {"seed", c.seeds},
          {"precision", to_string(c.precision)},
          {"output_dir", c.output_dir}};
}

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
  throw ConfigError("config field '" + key + "': expected " + expected);
}

double get_number(const std::string& key, const json& v) {
  if (!v.is_number()) bad_type(key, "a number");
  return v.get<double>();
}

std::int64_t get_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) bad_type(key, "an integer");
  return v.get<std::int64_t>();
}

std::uint64_t get_uint(const std::string& key, const json& v) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    bad_type(key, "a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool get_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad_type(key, "true or false");
  return v.get<bool>();
}

std::string get_string(const std::string& key, const json& v) {
  if (!v.is_string()) bad_type(key, "a string");
  return v.get<std::string>();
}

}  // namespace

std::string RunConfig::to_json() const { return config_json(*this).dump(2) + "\n"; }

std::uint64_t RunConfig::hash() const { return fnv1a64(config_json(*this).dump()); }

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (!j.contains("schema_version")) throw ConfigError("config field 'schema_version': required");

  RunConfig c;
  using Setter = std::function<void(const std::string&, const json&)>;
  const std::map<std::string, Setter> fields = {
      {"schema_version", [&](auto& k, auto& v) { c.schema_version = static_cast<int>(get_int(k, v)); }},
      {"dataset_dir", [&](auto& k, auto& v) { c.dataset_dir = get_string(k, v); }},
      {"dataset_spec", [&](auto& k, auto& v) { c.dataset_spec = get_string(k, v); }},
      {"n_train", [&](auto& k, auto& v) { c.n_train = get_int(k, v); }},
      {"n_test", [&](auto& k, auto& v) { c.n_test = get_int(k, v); }},
      {"data_seed", [&](auto& k, auto& v) { c.data_seed = get_uint(k, v); }},
      {"variant",
       [&](auto& k, auto& v) {
         c.variants.clear();
         auto one = [&](const json& s) {
           try {
             c.variants.push_back(variant_from_string(get_string(k, s)));
           } catch (const ConfigError& e) {
             throw ConfigError("config field '" + k + "': " + e.what());
           }
         };
         if (v.is_array()) {
           for (const auto& s : v) one(s);
         } else {
           one(v);
         }
       }},
      {"classifier",
       [&](auto& k, auto& v) {
         try {
           c.classifier = classifier_from_string(get_string(k, v));
         } catch (const ConfigError& e) {
           throw ConfigError("config field '" + k + "': " + e.what());
         }
       }},
      {"groups", [&](auto& k, auto& v) { c.vtn.groups = get_int(k, v); }},
      {"radius", [&](auto& k, auto& v) { c.vtn.radius = get_int(k, v); }},
      {"beta", [&](auto& k, auto& v) { c.vtn.beta = get_number(k, v); }},
      {"levels", [&](auto& k, auto& v) { c.vtn.levels = get_int(k, v); }},
      {"feature_dim", [&](auto& k, auto& v) { c.vtn.feature_dim = get_int(k, v); }},
      {"squeeze_widths",
       [&](auto& k, auto& v) {
         if (!v.is_array()) bad_type(k, "an array of integers");
         c.vtn.squeeze_widths.clear();
         for (const auto& e : v) c.vtn.squeeze_widths.push_back(get_int(k, e));
       }},
      {"head_kernel", [&](auto& k, auto& v) { c.vtn.head_kernel = get_int(k, v); }},
      {"channel_mixing", [&](auto& k, auto& v) { c.vtn.channel_mixing = get_bool(k, v); }},
      {"probabilistic", [&](auto& k, auto& v) { c.vtn.probabilistic = get_bool(k, v); }},
      {"lambda", [&](auto& k, auto& v) { c.lambda = get_number(k, v); }},
      {"alpha", [&](auto& k, auto& v) { c.alpha = get_number(k, v); }},
      {"lr", [&](auto& k, auto& v) { c.lr = get_number(k, v); }},
      {"momentum", [&](auto& k, auto& v) { c.momentum = get_number(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { c.weight_decay = get_number(k, v); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = get_int(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = get_int(k, v); }},
      {"hflip", [&](auto& k, auto& v) { c.hflip = get_bool(k, v); }},
      {"seed",
       [&](auto& k, auto& v) {
         c.seeds.clear();
         if (v.is_array()) {
           for (const auto& s : v) c.seeds.push_back(get_uint(k, s));
         } else {
           c.seeds.push_back(get_uint(k, v));
         }
       }},
      {"precision",
       [&](auto& k, auto& v) {
         const std::string p = get_string(k, v);
         if (p == "float32") {
           c.precision = Precision::kFloat32;
         } else if (p == "float64") {
           c.precision = Precision::kFloat64;
         } else {
           throw ConfigError("config field '" + k + "': expected \"float32\" or \"float64\", got \"" + p + "\"");
         }
       }},
      {"output_dir", [&](auto& k, auto& v) { c.output_dir = get_string(k, v); }},
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto f = fields.find(it.key());
    if (f == fields.end()) throw ConfigError("config: unknown field '" + it.key() + "'");
    f->second(it.key(), it.value());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return from_json(binary::read_file(path)); }

}  // namespace vtn
