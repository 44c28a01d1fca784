// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// vtn: train, evaluate, gradient-check and visualize volumetric transformer
// models on the synthetic parts benchmark.
//
// Exit codes: 0 ok, 1 gradient check failed or internal error, 2 invalid
// configuration or arguments, 3 numeric abort, 4 I/O or file-format error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vtn/binary_io.hpp"
#include "vtn/gradcheck.hpp"
#include "vtn/hash.hpp"
#include "vtn/runner.hpp"
#include "vtn/visualize.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kConfig = 2;
constexpr int kNumeric = 3;
constexpr int kIo = 4;

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_train(const std::string& config_path, const std::string& output_dir) {
  vtn::RunConfig cfg = vtn::RunConfig::load(config_path);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  const auto reports = vtn::run_grid(cfg, log_line);
  for (const auto& r : reports) {
    std::printf("%-10s mean test accuracy %.4f  mean intra-class distance %.4f  (%zu seeds)\n",
                vtn::to_string(r.variant).c_str(), r.mean_test_accuracy, r.mean_intra_class_distance, r.runs.size());
  }
  std::printf("config hash %s, outputs in %s\n", vtn::hex64(cfg.hash()).c_str(), cfg.output_dir.c_str());
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir) {
  const vtn::Checkpoint ck = vtn::load_checkpoint(ckpt_path);
  vtn::RunConfig cfg = vtn::RunConfig::from_json(ck.config);
  if (!dataset_dir.empty()) {
    cfg.dataset_dir = dataset_dir;
    cfg.dataset_spec.clear();
  }
  const auto data = vtn::load_data(cfg);
  const auto r = vtn::evaluate_checkpoint(ck, data);
  std::printf(
      "{\"variant\": \"%s\", \"epoch\": %u, \"test_accuracy\": %.6f, \"task_loss\": %.6f, \"cons_loss\": %.6f, "
      "\"intra_class_distance\": %.6f}\n",
      vtn::to_string(r.variant).c_str(), ck.epoch, r.metrics.accuracy, r.metrics.task_loss, r.metrics.cons_loss,
      r.intra_class_distance);
  return kOk;
}

int cmd_gradcheck(const std::string& fault) {
  if (!fault.empty()) vtn::fault::corrupt_backward(fault);
  const auto rep = vtn::run_gradcheck();
  std::fputs(rep.format().c_str(), stdout);
  if (!rep.passed()) {
    std::string names;
    for (const auto& op : rep.failing_ops()) names += (names.empty() ? "" : ", ") + op;
    std::fprintf(stderr, "gradient check failed: %s\n", names.c_str());
    return kFailed;
  }
  return kOk;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& image_path, std::optional<std::int64_t> index,
                  const std::string& split, const std::string& out_dir, const std::vector<std::string>& pixels) {
  const vtn::Checkpoint ck = vtn::load_checkpoint(ckpt_path);
  vtn::Tensor<float> image;
  if (!image_path.empty()) {
    image = vtn::decode_pgm(vtn::binary::read_file(image_path));
  } else {
    if (!index) throw vtn::ConfigError("visualize: give --image or --index");
    const auto data = vtn::load_data(vtn::RunConfig::from_json(ck.config));
    const vtn::Dataset& ds = split == "train" ? data.splits.train : data.splits.test;
    if (*index < 0 || *index >= ds.size()) {
      throw vtn::ConfigError("visualize: index " + std::to_string(*index) + " outside the " + split + " split (" +
                             std::to_string(ds.size()) + " images)");
    }
    const auto px = ds.image(*index);
    image = vtn::Tensor<float>(vtn::Shape{ds.height, ds.width, 1}, std::vector<float>(px.begin(), px.end()));
  }
  vtn::VisualizeOptions opt;
  for (const auto& p : pixels) {
    const auto comma = p.find(',');
    if (comma == std::string::npos) throw vtn::ConfigError("visualize: pixel '" + p + "' is not ROW,COL");
    try {
      opt.pixels.emplace_back(std::stoll(p.substr(0, comma)), std::stoll(p.substr(comma + 1)));
    } catch (const std::exception&) {
      throw vtn::ConfigError("visualize: pixel '" + p + "' is not ROW,COL");
    }
  }
  const auto files = vtn::visualize_checkpoint(ck, image, out_dir, opt);
  for (const auto& f : files) std::printf("%s\n", f.string().c_str());
  return kOk;
}

int cmd_dataset_gen(const std::string& spec_path, const std::string& out_dir, std::int64_t n_train,
                    std::int64_t n_test, std::uint64_t seed) {
  const vtn::SceneSpec spec = spec_path.empty() ? vtn::SceneSpec::desk_default()
                                                : vtn::scene_spec_from_json(vtn::binary::read_file(spec_path));
  const auto splits = vtn::make_dataset(spec, n_train, n_test, seed);
  vtn::write_dataset(out_dir, spec, splits);
  std::printf("wrote %lld train / %lld test images to %s (manifest %s)\n", static_cast<long long>(n_train),
              static_cast<long long>(n_test), out_dir.c_str(),
              vtn::hex64(vtn::manifest_hash(vtn::dataset_manifest(spec, splits))).c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric transformer networks on a synthetic parts benchmark"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  auto* train = app.add_subcommand("train", "Train the configured variants and seeds");
  train->add_option("config", config_path, "Run configuration (JSON)")->required();
  train->add_option("-o,--output-dir", output_dir, "Override the configured output directory");

  std::string ckpt_path, dataset_dir;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--dataset-dir", dataset_dir, "Use this generated dataset instead of the configured one");

  std::string fault;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--inject-fault", fault, "Corrupt the backward pass of an op (test fixture)");

  std::string image_path, split = "test", vis_out = "vis";
  std::optional<std::int64_t> index;
  std::vector<std::string> pixels;
  auto* vis = app.add_subcommand("visualize", "Export warp fields, warped features and probabilities");
  vis->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  auto* img_opt = vis->add_option("--image", image_path, "Input image (binary PGM)");
  vis->add_option("--index", index, "Dataset image index")->excludes(img_opt);
  vis->add_option("--split", split, "Dataset split for --index")->check(CLI::IsMember({"train", "test"}));
  vis->add_option("-o,--out", vis_out, "Output directory");
  vis->add_option("--pixel", pixels, "Feature-map pixel ROW,COL for probability maps (repeatable)");

  std::string spec_path, gen_out;
  std::int64_t n_train = 2000, n_test = 500;
  std::uint64_t seed = 1;
  auto* gen = app.add_subcommand("dataset-gen", "Render the synthetic dataset to disk");
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("--spec", spec_path, "Scene spec (JSON); default: built-in benchmark");
  gen->add_option("--n-train", n_train, "Training images");
  gen->add_option("--n-test", n_test, "Test images");
  gen->add_option("--seed", seed, "Generation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(config_path, output_dir);
    if (*eval) return cmd_eval(ckpt_path, dataset_dir);
    if (*grad) return cmd_gradcheck(fault);
    if (*vis) return cmd_visualize(ckpt_path, image_path, index, split, vis_out, pixels);
    if (*gen) return cmd_dataset_gen(spec_path, gen_out, n_train, n_test, seed);
  } catch (const vtn::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const vtn::DimensionError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const vtn::NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return kNumeric;
  } catch (const vtn::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const vtn::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kFailed;
}
