// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/runner.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vtn/binary_io.hpp"
#include "vtn/hash.hpp"

namespace vtn {

using json = nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_row(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + fmt_double(r.task_loss) + "," + fmt_double(r.cons_loss) +
         "," + fmt_double(r.accuracy) + "\n";
}

constexpr const char* kCsvHeader = "epoch,split,task_loss,cons_loss,accuracy\n";

void append(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for appending");
  out << text;
  out.flush();
  if (!out) throw IoError("write error on " + path.string());
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string model_meta(const ModelSpec& spec, std::uint64_t seed, Precision p) {
  json j = {{"variant", to_string(spec.variant)}, {"seed", seed},   {"height", spec.height},
            {"width", spec.width},                {"classes", spec.classes}, {"precision", to_string(p)}};
  return j.dump();
}

MetricsRow row(std::int64_t epoch, const char* split, const EpochMetrics& m) {
  return {epoch, split, m.task_loss, m.cons_loss, m.accuracy};
}

template <typename T>
RunResult train_impl(const RunConfig& cfg, Variant variant, std::uint64_t seed, const LoadedData& data,
                     const std::filesystem::path& dir, const LogFn& log) {
  const auto t0 = std::chrono::steady_clock::now();
  make_dirs(dir);
  const ModelSpec spec = cfg.model_spec(variant, data.spec.height, data.spec.width, data.spec.class_count());
  Model<T> model = Model<T>::build(spec, cfg.vtn_config(variant), seed);
  const auto params = model.parameters();
  OptimState<T> optim = OptimState<T>::init(params, cfg.lr, cfg.momentum, cfg.weight_decay);
  const TrainOptions opt = cfg.train_options();

  RunResult res;
  res.variant = variant;
  res.seed = seed;
  res.dir = dir;
  res.parameter_count = model.parameter_count();

  Checkpoint ck;
  ck.config = cfg.to_json();
  ck.meta = model_meta(spec, seed, cfg.precision);
  auto snapshot = [&](std::int64_t epoch) {
    ck.epoch = static_cast<std::uint32_t>(epoch);
    ck.tensors = capture_state(model);
    ck.metrics = res.metrics;
    return encode_checkpoint(ck);
  };

  const auto csv = dir / "metrics.csv";
  binary::write_file(csv.string(), kCsvHeader);
  binary::write_file((dir / "last.ckpt").string(), snapshot(0));
  res.best_test_accuracy = -1;
  for (std::int64_t e = 0; e < cfg.epochs; ++e) {
    optim.lr = scheduled_lr(cfg.lr, e, cfg.epochs);
    const std::uint64_t epoch_seed = mix_seed(seed, static_cast<std::uint64_t>(e));
    EpochMetrics tr;
    try {
      tr = train_epoch(model, data.splits.train, optim, opt, epoch_seed);
    } catch (const NumericError& err) {
      throw NumericError(to_string(variant) + " seed " + std::to_string(seed) + " epoch " + std::to_string(e + 1) +
                         ": " + err.what());
    }
    const EpochMetrics te = evaluate(model, data.splits.test, opt, mix_seed(seed, 0x7e57));
    res.metrics.push_back(row(e + 1, "train", tr));
    res.metrics.push_back(row(e + 1, "test", te));
    append(csv, csv_row(res.metrics[res.metrics.size() - 2]) + csv_row(res.metrics.back()));
    const std::string bytes = snapshot(e + 1);
    binary::write_file((dir / "last.ckpt").string(), bytes);
    if (te.accuracy > res.best_test_accuracy) {
      res.best_test_accuracy = te.accuracy;
      res.best_epoch = e + 1;
      binary::write_file((dir / "best.ckpt").string(), bytes);
    }
    res.final_test_accuracy = te.accuracy;
    if (log) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%s seed %llu epoch %lld/%lld: train loss %.4f acc %.3f | test acc %.3f",
                    to_string(variant).c_str(), static_cast<unsigned long long>(seed), static_cast<long long>(e + 1),
                    static_cast<long long>(cfg.epochs), tr.task_loss, tr.accuracy, te.accuracy);
      log(buf);
    }
  }
  if (cfg.epochs == 0) res.best_test_accuracy = 0;
  res.intra_class_distance =
      mean_intra_class_distance(warped_features(model, data.splits.test, cfg.batch_size), data.splits.test.labels);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

LoadedData load_data(const RunConfig& cfg) {
  LoadedData d;
  if (!cfg.dataset_dir.empty()) {
    d.splits = read_dataset(cfg.dataset_dir, &d.spec);
    return d;
  }
  d.spec = cfg.dataset_spec.empty() ? SceneSpec::desk_default()
                                    : scene_spec_from_json(binary::read_file(cfg.dataset_spec));
  d.splits = make_dataset(d.spec, cfg.n_train, cfg.n_test, cfg.data_seed);
  return d;
}

RunResult train_run(const RunConfig& cfg, Variant variant, std::uint64_t seed, const LoadedData& data,
                    const std::filesystem::path& dir, const LogFn& log) {
  cfg.validate();
  if (cfg.precision == Precision::kFloat64) return train_impl<double>(cfg, variant, seed, data, dir, log);
  return train_impl<float>(cfg, variant, seed, data, dir, log);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = kCsvHeader;
  for (const auto& r : rows) s += csv_row(r);
  return s;
}

std::string report_json(const RunConfig& cfg, const VariantReport& report) {
  json runs = json::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"seed", r.seed},
                    {"final_test_accuracy", r.final_test_accuracy},
                    {"best_test_accuracy", r.best_test_accuracy},
                    {"best_epoch", r.best_epoch},
                    {"intra_class_distance", r.intra_class_distance},
                    {"parameter_count", r.parameter_count},
                    {"seconds", r.seconds},
                    {"dir", r.dir.string()}});
  }
  json j = {{"variant", to_string(report.variant)},
            {"config_hash", hex64(cfg.hash())},
            {"runs", std::move(runs)},
            {"mean_test_accuracy", report.mean_test_accuracy},
            {"mean_intra_class_distance", report.mean_intra_class_distance}};
  return j.dump(2) + "\n";
}

std::vector<VariantReport> run_grid(const RunConfig& cfg, const LogFn& log) {
  cfg.validate();
  const LoadedData data = load_data(cfg);
  const std::filesystem::path root(cfg.output_dir);
  make_dirs(root);
  binary::write_file((root / "config.json").string(), cfg.to_json());
  std::vector<VariantReport> reports;
  for (Variant v : cfg.variants) {
    VariantReport rep;
    rep.variant = v;
    for (std::uint64_t s : cfg.seeds) {
      rep.runs.push_back(train_run(cfg, v, s, data, root / to_string(v) / ("seed_" + std::to_string(s)), log));
      rep.mean_test_accuracy += rep.runs.back().final_test_accuracy;
      rep.mean_intra_class_distance += rep.runs.back().intra_class_distance;
    }
    rep.mean_test_accuracy /= static_cast<double>(rep.runs.size());
    rep.mean_intra_class_distance /= static_cast<double>(rep.runs.size());
    binary::write_file((root / ("report_" + to_string(v) + ".json")).string(), report_json(cfg, rep));
    reports.push_back(std::move(rep));
  }
  return reports;
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = RunConfig::from_json(ckpt.config);
  json meta;
  try {
    meta = json::parse(ckpt.meta);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  try {
    const Variant v = variant_from_string(meta.at("variant").get<std::string>());
    const ModelSpec spec = cfg.model_spec(v, meta.at("height").get<std::int64_t>(), meta.at("width").get<std::int64_t>(),
                                          meta.at("classes").get<std::int64_t>());
    Model<T> m = Model<T>::build(spec, cfg.vtn_config(v), meta.at("seed").get<std::uint64_t>());
    restore_state(m, ckpt.tensors);
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
}

template Model<float> model_from_checkpoint(const Checkpoint&);
template Model<double> model_from_checkpoint(const Checkpoint&);

namespace {

template <typename T>
EvalResult eval_impl(const Checkpoint& ckpt, const LoadedData& data) {
  const RunConfig cfg = RunConfig::from_json(ckpt.config);
  Model<T> m = model_from_checkpoint<T>(ckpt);
  EvalResult r;
  r.variant = m.spec().variant;
  r.metrics = evaluate(m, data.splits.test, cfg.train_options(), 0x7e57);
  r.intra_class_distance =
      mean_intra_class_distance(warped_features(m, data.splits.test, cfg.batch_size), data.splits.test.labels);
  return r;
}

}  // namespace

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const LoadedData& data) {
  const RunConfig cfg = RunConfig::from_json(ckpt.config);
  if (cfg.precision == Precision::kFloat64) return eval_impl<double>(ckpt, data);
  return eval_impl<float>(ckpt, data);
}

}  // namespace vtn
