#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <regex>

#include "test_support.hpp"

namespace fs = std::filesystem;

#ifndef GLCF_CLI
#error "GLCF_CLI must name the glcf executable"
#endif

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(GLCF_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// A tiny dataset and a one-epoch config shared by the pipeline tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = glcf::testing::scratch_dir("cli");
    write(dir_ / "spec.json",
          R"({"n_train": 8, "n_test_normal": 3, "n_test_structural": 3, "n_test_logical": 3, "seed": 1})");
    write(dir_ / "cfg.json", R"({"training": {"epochs": 1}})");
    ASSERT_EQ(run("-q generate-data --spec " + (dir_ / "spec.json").string() + " --out " + (dir_ / "data").string()).code, 0);
    ASSERT_EQ(run("-q --deterministic train --config " + (dir_ / "cfg.json").string() + " --data " +
                  (dir_ / "data").string() + " --out " + (dir_ / "run").string())
                  .code,
              0);
    ASSERT_EQ(run("-q calibrate --checkpoint " + (dir_ / "run/checkpoint.glcf").string() + " --data " +
                  (dir_ / "data").string() + " --out " + (dir_ / "run").string())
                  .code,
              0);
  }
  static fs::path dir_;
};
fs::path CliPipeline::dir_;

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --data x").code, 2);
  EXPECT_EQ(run("ablate --mode nonsense --out /tmp/x").code, 2);
}

TEST(Cli, GenerateDataDefaultCount) {
  auto dir = glcf::testing::scratch_dir("cli_gen");
  ASSERT_EQ(run("-q generate-data --out " + (dir / "d").string()).code, 0);
  int images = 0;
  for (const auto* sub : {"train/good", "test/good", "test/structural_anomalies", "test/logical_anomalies"}) {
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "d" / sub)) ++images;
  }
  EXPECT_EQ(images, 800);
  EXPECT_TRUE(fs::exists(dir / "d" / "spec.json"));
}

TEST(Cli, BadConfigExitsTwo) {
  auto dir = glcf::testing::scratch_dir("cli_cfg");
  write(dir / "bad.json", R"({"training": {"lr": 1}})");
  EXPECT_EQ(run("-q train --config " + (dir / "bad.json").string() + " --data " + dir.string() + " --out " +
                (dir / "o").string())
                .code,
            2);
}

TEST(Cli, MissingInputExitsThree) {
  auto dir = glcf::testing::scratch_dir("cli_missing");
  EXPECT_EQ(run("-q train --data " + (dir / "nope").string() + " --out " + (dir / "o").string()).code, 3);
  EXPECT_EQ(run("-q eval --checkpoint " + (dir / "none.glcf").string() + " --stats " + (dir / "s.json").string() +
                " --data " + dir.string() + " --out " + (dir / "o").string())
                .code,
            3);
}

TEST_F(CliPipeline, DivergenceExitsFour) {
  write(dir_ / "huge.json", R"({"training": {"epochs": 3, "learning_rate": 1e30}})");
  EXPECT_EQ(run("-q train --config " + (dir_ / "huge.json").string() + " --data " + (dir_ / "data").string() +
                " --out " + (dir_ / "huge").string())
                .code,
            4);
}

TEST_F(CliPipeline, ScorePrintsOneFloatPerImage) {
  auto r = run("-q score --checkpoint " + (dir_ / "run/checkpoint.glcf").string() + " --stats " +
               (dir_ / "run/calibration.json").string() + " --image " +
               (dir_ / "data/test/good/000000.png").string() + " --out " + (dir_ / "scored").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(000000\.png [-+0-9.eE]+\n)"))) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "scored" / "scores.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "scored" / "good_000000_map.tiff"));
  EXPECT_TRUE(fs::exists(dir_ / "scored" / "good_000000_overlay.png"));
}

TEST_F(CliPipeline, EvalWritesReport) {
  ASSERT_EQ(run("-q eval --checkpoint " + (dir_ / "run/checkpoint.glcf").string() + " --stats " +
                (dir_ / "run/calibration.json").string() + " --data " + (dir_ / "data").string() + " --out " +
                (dir_ / "eval").string())
                .code,
            0);
  const auto csv = glcf::testing::read_bytes(dir_ / "eval" / "report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "group,variant,kind,image_auroc,pixel_auroc,spro");
  EXPECT_TRUE(fs::exists(dir_ / "eval" / "report.json"));
}

TEST_F(CliPipeline, EvalWithoutAnomaliesExitsFive) {
  write(dir_ / "normal_only.json", R"({"n_train": 2, "n_test_normal": 2, "n_test_structural": 0, "n_test_logical": 0})");
  ASSERT_EQ(run("-q generate-data --spec " + (dir_ / "normal_only.json").string() + " --out " +
                (dir_ / "normal_only").string())
                .code,
            0);
  EXPECT_EQ(run("-q eval --checkpoint " + (dir_ / "run/checkpoint.glcf").string() + " --stats " +
                (dir_ / "run/calibration.json").string() + " --data " + (dir_ / "normal_only").string() +
                " --out " + (dir_ / "eval_normal").string())
                .code,
            5);
}
