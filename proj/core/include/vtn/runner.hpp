// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment orchestration: data loading, the variant x seed training grid,
// metrics files, checkpoints and per-variant reports.

#ifndef VTN_RUNNER_HPP_
#define VTN_RUNNER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vtn/checkpoint.hpp"
#include "vtn/config.hpp"

namespace vtn {

using LogFn = std::function<void(const std::string&)>;

struct LoadedData {
  SceneSpec spec;
  DatasetSplits splits;
};

LoadedData load_data(const RunConfig& cfg);

struct RunResult {
  Variant variant = Variant::kVtn;
  std::uint64_t seed = 0;
  double final_test_accuracy = 0;
  double best_test_accuracy = 0;
  std::int64_t best_epoch = 0;
  double intra_class_distance = 0;  // test split, final model
  std::int64_t parameter_count = 0;
  double seconds = 0;
  std::vector<MetricsRow> metrics;
  std::filesystem::path dir;  // metrics.csv, last.ckpt, best.ckpt
};

struct VariantReport {
  Variant variant = Variant::kVtn;
  std::vector<RunResult> runs;
  double mean_test_accuracy = 0;
  double mean_intra_class_distance = 0;
};

// Trains one variant for one seed. Files go to `dir`. With zero epochs only
// the initialization checkpoint (last.ckpt) is written.
RunResult train_run(const RunConfig& cfg, Variant variant, std::uint64_t seed, const LoadedData& data,
                    const std::filesystem::path& dir, const LogFn& log = {});

// Runs every configured variant and seed under cfg.output_dir and writes
// report_<variant>.json next to the run directories.
std::vector<VariantReport> run_grid(const RunConfig& cfg, const LogFn& log = {});

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string report_json(const RunConfig& cfg, const VariantReport& report);

// Evaluation of a saved checkpoint on the test split of `data`.
struct EvalResult {
  Variant variant = Variant::kVtn;
  EpochMetrics metrics;
  double intra_class_distance = 0;
};
EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const LoadedData& data);

// Rebuilds the model a checkpoint was saved from and loads its tensors.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace vtn

#endif  // VTN_RUNNER_HPP_
