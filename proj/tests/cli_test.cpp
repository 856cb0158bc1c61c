// Copyright 2026 The fedaf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedaf/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fedaf {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fedaf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string without_times(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;
  fs::path config;

  void SetUp() override {
    dir = fs::path(FEDAF_TEST_TMP) / ("cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "c.json";
    std::ofstream(config) << R"({
      "dataset": {"kind": "blobs", "classes": 3, "per_class": 60, "test_per_class": 20, "dim": 9, "spread": 0.1},
      "seed": 4, "trials": 2, "classes": [1, 2],
      "model": {"hidden_dims": [8]},
      "federation": {"rounds": 3},
      "backdoor": {"trigger_size": 2},
      "unlearn": {"batch_size": 16}
    })";
  }
};

TEST_F(CliTest, NoArgumentsPrintsUsageAndExitsTwo) {
  const auto r = run({});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"unlearn"}).code, 2);  // --config is required
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, UnlearnRetrainWritesCsvAndJsonWithConfig) {
  const auto r = run({"unlearn", "--config", config.string(), "--arm", "retrain", "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "o" / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsCsvHeader);
  EXPECT_EQ(lines(csv), 1u + 2 * 2);
  const auto j = nlohmann::json::parse(slurp(dir / "o" / "metrics.json"));
  EXPECT_EQ(j["config"]["seed"], 4);
  EXPECT_EQ(j["records"].size(), 4u);
  EXPECT_EQ(j["records"][0]["arm"], "retrain");
  EXPECT_TRUE(fs::exists(dir / "o" / "config.json"));
}

TEST_F(CliTest, SweepWritesOneRowPerValueAndTrial) {
  const auto r = run({"sweep", "--config", config.string(), "--param", "lambda", "--values", "0.1,10", "--trials", "3",
                      "--out", (dir / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "s" / "sweep.csv");
  EXPECT_EQ(lines(csv), 1u + 2 * 3);
}

TEST_F(CliTest, RepeatedRunsAreByteIdenticalApartFromWallTime) {
  ASSERT_EQ(run({"unlearn", "--config", config.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"unlearn", "--config", config.string(), "--out", (dir / "b").string(), "--jobs", "3"}).code, 0);
  const auto a = slurp(dir / "a" / "metrics.csv"), b = slurp(dir / "b" / "metrics.csv");
  EXPECT_EQ(lines(a), 1u + 2 * 2 * 3);
  EXPECT_EQ(without_times(a), without_times(b));
  EXPECT_EQ(slurp(dir / "a" / "config.json"), slurp(dir / "b" / "config.json"));
}

TEST_F(CliTest, ConfigErrorsExitOneWithDiagnostic) {
  std::ofstream(dir / "bad.json") << R"({"dataset": {"kind": "blobs"}, "lamda": 3})";
  const auto r = run({"train", "--config", (dir / "bad.json").string(), "--out", (dir / "x").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lamda"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, OutputDirFallsBackToEnvironment) {
  const auto env_dir = dir / "env";
  ::setenv(kOutputDirEnv, env_dir.string().c_str(), 1);
  const auto r = run({"train", "--config", config.string()});
  ::unsetenv(kOutputDirEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rounds = slurp(env_dir / "rounds.csv");
  EXPECT_EQ(rounds.substr(0, rounds.find('\n')), kRoundsCsvHeader);
  EXPECT_EQ(lines(rounds), 1u + 3 * 4);
  EXPECT_TRUE(fs::exists(env_dir / "train.json"));
}

TEST_F(CliTest, OverlapAndReport) {
  ASSERT_EQ(run({"overlap", "--config", config.string(), "--label-kind", "uniform", "--out", (dir / "r").string()}).code, 0);
  ASSERT_EQ(run({"unlearn", "--config", config.string(), "--arm", "fedaf", "--out", (dir / "r").string()}).code, 0);
  const auto r = run({"report", "--out", (dir / "r").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("| fedaf |"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("| uniform |"), std::string::npos) << r.out;
  EXPECT_EQ(run({"report", (dir / "missing.csv").string()}).code, 1);
}

}  // namespace
}  // namespace fedaf
