// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the vtn executable through every subcommand on a micro
// configuration and checks exit codes and outputs.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

#ifndef VTN_CLI_PATH
#error "VTN_CLI_PATH must name the vtn executable"
#endif

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome vtn(const std::string& args) {
  const std::string cmd = std::string(VTN_CLI_PATH) + " " + args + " 2>&1";
  Outcome r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "vtn_cli_e2e";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path write(const std::string& name, const std::string& text) {
  const auto p = workdir() / name;
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string micro_config(const std::string& out, int epochs, const std::string& extra = "") {
  return R"({"schema_version": 1, "variant": ["base", "vtn"], "n_train": 40, "n_test": 20, "batch_size": 20,)"
         R"( "epochs": )" + std::to_string(epochs) + R"(, "output_dir": ")" + out + "\"" + extra + "}";
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(vtn("--help").code, 0);
  EXPECT_EQ(vtn("").code, 2);
  EXPECT_EQ(vtn("frobnicate").code, 2);
  EXPECT_EQ(vtn("train").code, 2);
}

TEST(Cli, GradcheckPassesAndDetectsFaults) {
  const auto ok = vtn("gradcheck");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("bilinear_sample"), std::string::npos);
  const auto bad = vtn("gradcheck --inject-fault bilinear_sample");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("gradient check failed: bilinear_sample"), std::string::npos) << bad.out;
}

TEST(Cli, TrainEvalVisualize) {
  const auto out = workdir() / "run";
  const auto cfg = write("micro.json", micro_config(out.string(), 1));
  const auto train = vtn("train " + cfg.string());
  ASSERT_EQ(train.code, 0) << train.out;
  for (const char* v : {"base", "vtn"}) {
    EXPECT_TRUE(fs::exists(out / v / "seed_0" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(out / v / "seed_0" / "best.ckpt"));
    EXPECT_TRUE(fs::exists(out / ("report_" + std::string(v) + ".json")));
  }
  const auto ckpt = out / "vtn" / "seed_0" / "last.ckpt";
  const auto ev = vtn("eval " + ckpt.string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("\"variant\": \"vtn\""), std::string::npos);
  EXPECT_NE(ev.out.find("\"test_accuracy\""), std::string::npos);

  const auto vis_dir = workdir() / "vis";
  const auto vis = vtn("visualize " + ckpt.string() + " --index 3 -o " + vis_dir.string() + " --pixel 2,5");
  ASSERT_EQ(vis.code, 0) << vis.out;
  for (int g = 0; g < 8; ++g) {
    EXPECT_TRUE(fs::exists(vis_dir / ("field_" + std::to_string(g) + ".ppm")));
    EXPECT_TRUE(fs::exists(vis_dir / ("field_" + std::to_string(g) + ".csv")));
    EXPECT_TRUE(fs::exists(vis_dir / ("prob_" + std::to_string(g) + "_2_5.pgm")));
  }
  EXPECT_EQ(vtn("visualize " + ckpt.string() + " --index 999 -o " + vis_dir.string()).code, 2);
  EXPECT_EQ(vtn("visualize " + ckpt.string() + " --index 1 --pixel 9,9 -o " + vis_dir.string()).code, 2);
  EXPECT_EQ(vtn("visualize " + (out / "base" / "seed_0" / "last.ckpt").string() + " --index 1").code, 2);
}

TEST(Cli, ZeroEpochsWritesOnlyTheInitialCheckpoint) {
  const auto out = workdir() / "zero";
  const auto cfg = write("zero.json", micro_config(out.string(), 0));
  const auto train = vtn("train " + cfg.string());
  ASSERT_EQ(train.code, 0) << train.out;
  EXPECT_TRUE(fs::exists(out / "vtn" / "seed_0" / "last.ckpt"));
  EXPECT_FALSE(fs::exists(out / "vtn" / "seed_0" / "best.ckpt"));
  EXPECT_EQ(vtn("eval " + (out / "vtn" / "seed_0" / "last.ckpt").string()).code, 0);
}

TEST(Cli, DatasetGenAndReuse) {
  const auto data = workdir() / "data";
  const auto gen = vtn("dataset-gen -o " + data.string() + " --n-train 40 --n-test 20 --seed 3");
  ASSERT_EQ(gen.code, 0) << gen.out;
  EXPECT_TRUE(fs::exists(data / "manifest.json"));
  EXPECT_TRUE(fs::exists(data / "train.bin"));
  const auto again = vtn("dataset-gen -o " + (workdir() / "data2").string() + " --n-train 40 --n-test 20 --seed 3");
  EXPECT_EQ(slurp(data / "manifest.json"), slurp(workdir() / "data2" / "manifest.json"));

  const auto out = workdir() / "fromdisk";
  const auto cfg = write("disk.json", micro_config(out.string(), 1, R"(, "dataset_dir": ")" + data.string() + "\""));
  const auto train = vtn("train " + cfg.string());
  EXPECT_EQ(train.code, 0) << train.out;
  const auto ev = vtn("eval " + (out / "base" / "seed_0" / "last.ckpt").string() + " --dataset-dir " + data.string());
  EXPECT_EQ(ev.code, 0) << ev.out;
}

TEST(Cli, ErrorExitCodes) {
  EXPECT_EQ(vtn("train " + write("bad.json", R"({"schema_version": 1, "colour": 1})").string()).code, 2);
  EXPECT_EQ(vtn("train " + write("bad2.json", R"({"schema_version": 1, "lr": -1})").string()).code, 2);
  EXPECT_EQ(vtn("train /nonexistent/config.json").code, 4);
  EXPECT_EQ(vtn("eval /nonexistent/x.ckpt").code, 4);
  const auto junk = write("junk.ckpt", "VTNCKPT1\x01");
  EXPECT_EQ(vtn("eval " + junk.string()).code, 4);
  const auto nan_cfg = write("nan.json", R"({"schema_version": 1, "variant": "base", "n_train": 40, "n_test": 20,)"
                                         R"( "batch_size": 10, "epochs": 1, "lr": 1e30, "output_dir": ")" +
                                             (workdir() / "nan").string() + "\"}");
  const auto nan = vtn("train " + nan_cfg.string());
  EXPECT_EQ(nan.code, 3) << nan.out;
  EXPECT_NE(nan.out.find("batch seed"), std::string::npos);
}

}  // namespace
