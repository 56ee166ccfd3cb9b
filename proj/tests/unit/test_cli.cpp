#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("specmix_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + SPECMIX_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }
  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  void synth(const std::string& out, const std::string& extra = "") const {
    const auto r = run("synth --height 8 --width 8 --bands 24 --materials 3 --seed 4 --out " + p(out) + " " + extra);
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

TEST_F(Cli, SynthWritesExpectedFiles) {
  const auto r = run("synth --height 40 --width 40 --bands 200 --materials 4 --out " + p("scene"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(fs::file_size(p("scene/cube.f32")), 40u * 40 * 200 * 4);
  EXPECT_EQ(fs::file_size(p("scene/abundance.f32")), 40u * 40 * 4 * 4);
  for (const char* f : {"cube.json", "abundance.json", "endmembers.csv", "scene_config.json"})
    EXPECT_TRUE(fs::exists(p(std::string("scene/") + f))) << f;
}

TEST_F(Cli, EvalOfGroundTruthAgainstItselfIsZero) {
  synth("s");
  const auto r = run("eval --pred " + p("s/abundance") + " --gt " + p("s/abundance.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = nlohmann::json::parse(r.out);
  EXPECT_EQ(metrics["rmse"], 0.0);
  EXPECT_EQ(metrics["pixels"], 64);
  EXPECT_EQ(metrics["materials"], 3);
}

TEST_F(Cli, FclsOnCleanSceneIsNearExact) {
  synth("s", "--noise-sigma 0");
  ASSERT_EQ(run("fcls --cube " + p("s/cube") + " --endmembers " + p("s/endmembers.csv") + " --out " + p("f")).code, 0);
  const auto r = run("eval --pred " + p("f/abundance") + " --gt " + p("s/abundance"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(nlohmann::json::parse(r.out)["rmse"].get<double>(), 1e-4);
}

TEST_F(Cli, UnknownFlagIsAUsageError) {
  const auto r = run("synth --colour red");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_NE(r.err.find("specmix: error[usage]"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownConfigKeyIsAConfigError) {
  std::ofstream(p("bad.json")) << R"({"epochz": 3})";
  synth("s");
  const auto r = run("train --cube " + p("s/cube") + " --endmembers " + p("s/endmembers.csv") + " --config " +
                     p("bad.json") + " --out " + p("t"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("epochz"), std::string::npos) << r.err;
}

TEST_F(Cli, DimensionMismatchIsADataError) {
  synth("a");
  ASSERT_EQ(run("synth --height 8 --width 8 --bands 30 --materials 3 --out " + p("b")).code, 0);
  const auto r = run("fcls --cube " + p("a/cube") + " --endmembers " + p("b/endmembers.csv") + " --out " + p("f"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("error[data]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("24 bands"), std::string::npos) << r.err;
}

TEST_F(Cli, GradcheckFilterPasses) {
  const auto r = run("gradcheck --trials 20 --filter softmax");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("softmax"), std::string::npos);
}

TEST_F(Cli, TrainingTwiceGivesIdenticalArtifacts) {
  synth("s");
  const std::string train = "-q train --cube " + p("s/cube") + " --endmembers " + p("s/endmembers.csv") +
                            " --epochs 2 --batch-size 16 --components 4 --latent 6 --noise-dim 2 --seed 3 --out ";
  ASSERT_EQ(run(train + p("t1")).code, 0);
  ASSERT_EQ(run(train + p("t2")).code, 0);
  for (const char* f : {"checkpoint.json", "history.json", "train_config.json"})
    EXPECT_EQ(slurp(p(std::string("t1/") + f)), slurp(p(std::string("t2/") + f))) << f;

  ASSERT_EQ(run("unmix --cube " + p("s/cube") + " --checkpoint " + p("t1/checkpoint.json") + " --out " + p("u1")).code, 0);
  ASSERT_EQ(run("unmix --cube " + p("s/cube") + " --checkpoint " + p("t2/checkpoint.json") + " --out " + p("u2")).code, 0);
  EXPECT_EQ(slurp(p("u1/abundance.f32")), slurp(p("u2/abundance.f32")));
  const auto ev = run("eval --pred " + p("u1/abundance") + " --gt " + p("s/abundance"));
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(std::isfinite(nlohmann::json::parse(ev.out)["rmse"].get<double>()));

  const auto d = run("dump-latents --cube " + p("s/cube") + " --checkpoint " + p("t1/checkpoint.json") + " --out " +
                     p("lat.csv"));
  EXPECT_EQ(d.code, 0) << d.err;
  EXPECT_TRUE(fs::exists(p("lat.csv")));
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  synth("s");
  std::ofstream(p("cfg.json")) << R"({"epochs": 1, "batch_size": 16, "components": 4, "latent": 6, "noise": 2, "seed": 11})";
  const auto r = run("-q train --cube " + p("s/cube") + " --endmembers " + p("s/endmembers.csv") + " --config " +
                     p("cfg.json") + " --seed 12 --out " + p("t"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cfg = nlohmann::json::parse(slurp(p("t/train_config.json")));
  EXPECT_EQ(cfg["seed"], 12);
  EXPECT_EQ(cfg["components"], 4);
  EXPECT_EQ(cfg["epochs"], 1);
}

TEST_F(Cli, TruncatedCubeIsADataError) {
  synth("s");
  fs::resize_file(p("s/cube.f32"), 100);
  const auto r = run("fcls --cube " + p("s/cube") + " --endmembers " + p("s/endmembers.csv") + " --out " + p("f"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("expected"), std::string::npos) << r.err;
}

}  // namespace
