// Copyright 2026 The diffplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("diffplan_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(DIFFPLAN_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
  }

  std::string gen(const std::string& name, int per_template, int seed = 0) const {
    const fs::path out = dir_ / name;
    EXPECT_EQ(run("gen-suite --seed " + std::to_string(seed) + " --per-template " + std::to_string(per_template) +
                  " --out " + out.string()),
              0);
    return out.string();
  }

  fs::path dir_;
};

TEST_F(Cli, GenSuiteIsDeterministic) {
  const fs::path a = gen("a", 1, 7);
  const fs::path b = gen("b", 1, 7);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 5);
  EXPECT_TRUE(fs::exists(dir_ / "a.manifest.json"));
}

TEST_F(Cli, SolveWritesResultAndManifest) {
  const fs::path suite = gen("suite", 1);
  const fs::path sc = suite / "blocked_adjacent_00.json";
  const fs::path out = dir_ / "solve.json";
  ASSERT_EQ(run("solve " + sc.string() + " --out " + out.string()), 0) << slurp(dir_ / "stderr.txt");
  const json doc = json::parse(slurp(out));
  EXPECT_EQ(doc.at("scenario"), "blocked_adjacent_00");
  EXPECT_TRUE(doc.at("converged").get<bool>());
  EXPECT_LE(doc.at("final_cost").get<double>(), doc.at("cost_trace").at(0).get<double>() + 1e-9);
  const json manifest = json::parse(slurp(out.string() + ".manifest.json"));
  EXPECT_EQ(manifest.at("command"), "solve");
}

TEST_F(Cli, ExitCodes) {
  const fs::path suite = gen("suite", 1);
  const std::string out = " --out " + (dir_ / "err.json").string();
  EXPECT_EQ(run("solve " + (dir_ / "missing.json").string() + out), 1);
  EXPECT_EQ(run("solve"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("solve " + (suite / "slow_lv_free_right_00.json").string() + " --beta 0" + out), 1);
  std::ofstream(dir_ / "broken.json") << "{\"schema\": ";
  EXPECT_EQ(run("solve " + (dir_ / "broken.json").string() + out), 1);
  // One iteration cannot converge from the heuristic guess.
  EXPECT_EQ(run("solve " + (suite / "slow_lv_free_right_00.json").string() + " --iters 1 --out " +
                (dir_ / "one.json").string()),
            2);
  // Not converged within the iteration budget: the plan is still written.
  EXPECT_EQ(run("solve " + (suite / "car_following_00.json").string() + " --out " + (dir_ / "cf.json").string()), 2);
  EXPECT_TRUE(fs::exists(dir_ / "cf.json"));
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, SimulateThenPlotData) {
  const fs::path suite = gen("suite", 1);
  const fs::path out = dir_ / "sim";
  ASSERT_EQ(run("simulate " + suite.string() + " --steps 5 --jobs 2 --out " + out.string()), 0)
      << slurp(dir_ / "stderr.txt");
  const json metrics = json::parse(slurp(out / "metrics.json"));
  EXPECT_EQ(metrics.at("schema"), "metrics-v1");
  EXPECT_EQ(metrics.at("metrics").at("episodes"), 5);
  const fs::path episode = out / "episodes" / "yielding_00.jsonl";
  const fs::path csv = dir_ / "plot.csv";
  ASSERT_EQ(run("plot-data " + episode.string() + " --out " + csv.string()), 0);
  std::istringstream lines(slurp(csv));
  std::string line;
  int rows = 0;
  std::getline(lines, line);
  EXPECT_EQ(line, "t,accel,steer,speed,maneuver");
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 5);
}

TEST_F(Cli, TrainWritesOneRowPerStepAndResumes) {
  const fs::path suite = gen("suite", 2);
  const fs::path out = dir_ / "train";
  const std::string common = suite.string() + " --epochs 1 --pretrain-epochs 0 --batch-size 4 --jobs 2";
  ASSERT_EQ(run("train " + common + " --out " + out.string()), 0) << slurp(dir_ / "stderr.txt");
  const std::string csv = slurp(out / "losses.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "phase,step,loss,prediction,score,decision,planning,imitation,updated");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3);
  const json ck = json::parse(slurp(out / "checkpoint.json"));
  EXPECT_EQ(ck.at("step"), 3);

  const fs::path again = dir_ / "again";
  ASSERT_EQ(run("train " + common + " --resume " + (out / "checkpoint.json").string() + " --out " + again.string()), 0);
  EXPECT_EQ(json::parse(slurp(again / "checkpoint.json")).at("step"), 6);
  EXPECT_EQ(slurp(again / "losses.csv").substr(0, csv.find('\n')), csv.substr(0, csv.find('\n')));
}

}  // namespace
