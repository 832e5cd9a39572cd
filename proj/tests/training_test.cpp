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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "diffplan/training.hpp"
#include "test_support.hpp"

namespace diffplan {
namespace {

using train::Track;

Track offset_line(int n, Vec2 offset) {
  Track out;
  for (int k = 0; k < n; ++k) out.push_back(Vec2(0.7 * k, 0.1 * k) + offset);
  return out;
}

TEST(Losses, SmoothL1Branches) {
  EXPECT_DOUBLE_EQ(train::smooth_l1(0.0), 0.0);
  EXPECT_DOUBLE_EQ(train::smooth_l1(2.0), 1.5);
  EXPECT_DOUBLE_EQ(train::smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(train::smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(train::smooth_l1(3.0, 2.0), 2.0);
  const std::vector<double> v = {2.0, -0.5, 0.0};
  EXPECT_DOUBLE_EQ(train::smooth_l1(v), 1.625);
}

TEST(Losses, SmoothL1GradientIsContinuousAtTheTransition) {
  for (double delta : {0.5, 1.0, 3.0}) {
    for (double sign : {-1.0, 1.0}) {
      const double x = sign * delta;
      EXPECT_NEAR(train::smooth_l1_grad(x - 1e-9, delta), train::smooth_l1_grad(x + 1e-9, delta), 1e-8);
      const double h = 1e-6;
      const double fd = (train::smooth_l1(x + h, delta) - train::smooth_l1(x - h, delta)) / (2 * h);
      EXPECT_NEAR(train::smooth_l1_grad(x, delta), fd, 1e-6);
    }
  }
}

TEST(Losses, PredictionSumsOverTheSelectedFuture) {
  const std::vector<Track> truth = {offset_line(50, {0, 0}), offset_line(50, {0, 3})};
  std::vector<Track> future = truth;
  EXPECT_EQ(train::prediction_loss(future, truth), 0.0);
  future[1] = offset_line(50, {1, 3 + 1});
  // Direct summation: 50 points, two coordinates each, 0.5 * 1^2.
  double want = 0.0;
  for (int k = 0; k < 50; ++k) want += 2 * 0.5 * 1.0 * 1.0;
  EXPECT_DOUBLE_EQ(train::prediction_loss(future, truth), want);
  EXPECT_DOUBLE_EQ(want, 50.0);
}

TEST(Losses, ScoreAndDecisionCrossEntropy) {
  const std::vector<double> one = {0.0, 1.0};
  EXPECT_EQ(train::score_loss(one, 1), 0.0);
  const std::vector<double> three = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_NEAR(train::score_loss(three, 2), std::log(3.0), 1e-15);
  const std::vector<double> half = {0.5, 0.5};
  EXPECT_NEAR(train::score_loss(half, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(train::score_loss(one, 0), -std::log(1e-12), 1e-12);

  EXPECT_EQ(train::decision_loss({0.0, 1.0, 0.0}, 0), 0.0);
  EXPECT_NEAR(train::decision_loss({1.0 / 3, 1.0 / 3, 1.0 / 3}, -1), std::log(3.0), 1e-15);
  EXPECT_NEAR(train::decision_loss({0.25, 0.5, 0.25}, 1), std::log(4.0), 1e-15);
  EXPECT_TRUE(std::isfinite(train::decision_loss({0.0, 1.0, 0.0}, 1)));
}

TEST(Losses, ImitationIsEvenInTheOffset) {
  const Track truth = offset_line(50, {0, 0});
  EXPECT_EQ(train::imitation_loss(truth, truth), 0.0);
  double want = 0.0;
  for (int k = 0; k < 50; ++k) want += 0.5 * 0.5 * 0.5;
  EXPECT_DOUBLE_EQ(train::imitation_loss(offset_line(50, {0.5, 0}), truth), want);
  EXPECT_DOUBLE_EQ(want, 6.25);
  EXPECT_DOUBLE_EQ(train::imitation_loss(offset_line(50, {-0.5, 0}), truth), want);
}

TEST(Losses, WeightedTotals) {
  const train::LossWeights lw;
  EXPECT_EQ(train::total_loss({}, lw), 0.0);
  EXPECT_NEAR(train::total_loss({1, 1, 1, 1, 1}, lw), 3.6, 1e-15);
  EXPECT_NEAR(train::pretrain_loss({1, 1, 0, 0, 0}, lw), 1.5, 1e-15);
  EXPECT_EQ(train::pretrain_loss({}, lw), 0.0);
  EXPECT_EQ(train::pretrain_loss({1, 1, 7, 8, 9}, lw), train::pretrain_loss({1, 1, 0, 0, 0}, lw));
}

TEST(Losses, TotalIsLinearAndMonotoneInEachPart) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  const train::LossWeights lw;
  for (int trial = 0; trial < 20; ++trial) {
    train::LossParts p{u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double base = train::total_loss(p, lw);
    train::LossParts scaled{2 * p.prediction, 2 * p.score, 2 * p.decision, 2 * p.planning, 2 * p.imitation};
    EXPECT_NEAR(train::total_loss(scaled, lw), 2 * base, 1e-12);
    p.imitation += 1.0;
    EXPECT_GE(train::total_loss(p, lw), base);
  }
}

TEST(Losses, PlanningEqualsTheAssembledCostAtTheSolution) {
  const auto sc = suite::generate_scenario("slow_lv_free_right", 0, 0);
  const CostWeights w;
  ContextOptions opt;
  opt.horizon = 10;
  const auto io = init::initialize(sc, 0, sc.ego_start, {}, w, opt);
  const SolverConfig cfg = SolverConfig::training();
  const SolveResult r = solve(io.ctx, io.init, w, cfg);
  const auto a = assemble(r.variables, cfg.layout(io.init.decisions), io.ctx, w, AssemblyMode::kResiduals);
  EXPECT_NEAR(train::planning_loss(r), a.cost, 1e-12 * a.cost);
  EXPECT_LE(train::planning_loss(r), r.cost_trace.front());
}

std::vector<world::Scenario> short_batch(int count) {
  std::vector<world::Scenario> out;
  const auto all = suite::generate_suite(0, 2);
  for (int i = 0; i < count; ++i) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

train::TrainingConfig short_config() {
  train::TrainingConfig cfg;
  cfg.context.horizon = 10;
  return cfg;
}

TEST(TrainStep, ZeroLearningRateLeavesTheStateUnchanged) {
  const auto batch = short_batch(3);
  auto cfg = short_config();
  cfg.learning_rate = 0.0;
  train::TrainState state;
  state.phi.setConstant(0.01);
  const auto before = train::to_json(state).dump();
  const auto rep = train::train_step(batch, state, cfg);
  EXPECT_TRUE(rep.nonfinite.empty());
  EXPECT_EQ(train::to_json(state).dump(), before);
}

TEST(TrainStep, FixedWeightsNeverMove) {
  const auto batch = short_batch(4);
  auto cfg = short_config();
  cfg.learning_rate = 0.05;
  train::TrainState state;
  const CostWeights start = state.weights;
  for (int i = 0; i < 3; ++i) {
    const auto rep = train::train_step(batch, state, cfg);
    ASSERT_TRUE(rep.updated);
    const auto pre = train::pretrain_step(batch, state, cfg);
    ASSERT_TRUE(pre.updated);
  }
  bool learnable_moved = false;
  for (int i = 0; i < kNumWeights; ++i) {
    if (is_learnable(i)) {
      learnable_moved = learnable_moved || state.weights[i] != start[i];
    } else {
      EXPECT_EQ(state.weights[i], start[i]) << i;
    }
  }
  EXPECT_TRUE(learnable_moved);
  EXPECT_EQ(state.step, 6);
}

TEST(TrainStep, PretrainingOnlyMovesTheInitializer) {
  const auto batch = short_batch(2);
  auto cfg = short_config();
  cfg.learning_rate = 0.05;
  train::TrainState state;
  const CostWeights start = state.weights;
  train::pretrain_step(batch, state, cfg);
  for (int i = 0; i < kNumWeights; ++i) EXPECT_EQ(state.weights[i], start[i]);
  EXPECT_GT(state.phi.norm(), 0.0);
}

TEST(TrainStep, LossesAreNonNegative) {
  const auto cfg = short_config();
  train::TrainState state;
  for (const auto& sc : short_batch(10)) {
    const auto l = train::scenario_loss(sc, state, cfg, false);
    EXPECT_GE(l.parts.prediction, 0.0);
    EXPECT_GE(l.parts.score, 0.0);
    EXPECT_GE(l.parts.decision, 0.0);
    EXPECT_GE(l.parts.planning, 0.0);
    EXPECT_GE(l.parts.imitation, 0.0);
    EXPECT_TRUE(l.finite) << sc.name;
  }
}

class GradientOnSuite : public ::testing::TestWithParam<std::string_view> {};

TEST_P(GradientOnSuite, MatchesFiniteDifferencesOfThePipeline) {
  const auto sc = suite::generate_scenario(GetParam(), 0, 0);
  const auto cfg = short_config();
  std::mt19937_64 rng(47);
  std::normal_distribution<double> n(0.0, 0.02);
  train::TrainState state;
  for (auto& p : state.phi) p = n(rng);
  const auto l = train::scenario_loss(sc, state, cfg, true);
  ASSERT_TRUE(l.finite);
  const train::ParamVector p0 = state.params();
  const double h = 1e-5;
  Eigen::VectorXd fd(train::kNumParams);
  for (int i = 0; i < train::kNumParams; ++i) {
    train::TrainState plus = state;
    train::TrainState minus = state;
    train::ParamVector p = p0;
    p[i] += h;
    plus.set_params(p);
    p[i] -= 2 * h;
    minus.set_params(p);
    fd[i] = (train::scenario_loss(sc, plus, cfg, false).total - train::scenario_loss(sc, minus, cfg, false).total) /
            (2 * h);
  }
  const Eigen::VectorXd an = l.grad;
  const auto w_an = an.head<kNumLearnable>();
  const auto w_fd = fd.head<kNumLearnable>();
  EXPECT_LT((w_an - w_fd).norm() / std::max(w_fd.norm(), 1e-2), 1e-2) << "analytic " << w_an.transpose()
                                                                       << "\nfd       " << w_fd.transpose();
  EXPECT_LT((an - fd).norm() / std::max(fd.norm(), 1e-2), 1e-2);
}

INSTANTIATE_TEST_SUITE_P(Templates, GradientOnSuite, ::testing::ValuesIn(suite::kTemplates));

TEST(Persistence, CheckpointRoundTrip) {
  train::TrainState s;
  s.step = 17;
  s.weights[0] = 3.25;
  for (int i = 0; i < train::kNumParams; ++i) {
    s.m[i] = 1e-3 * i;
    s.v[i] = 1e-6 * i * i;
  }
  s.phi.setConstant(-0.125);
  const auto doc = train::to_json(s);
  const auto back = train::state_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(train::to_json(back).dump(), doc.dump());
  EXPECT_EQ(back.m, s.m);
  auto bad = doc;
  bad["schema"] = "train-v0";
  EXPECT_THROW(train::state_from_json(bad), ParseError);
  bad = doc;
  bad["m"] = std::vector<double>{1.0};
  EXPECT_THROW(train::state_from_json(bad), ParseError);
}

TEST(Persistence, LossCsvColumnsAreStable) {
  EXPECT_EQ(train::loss_csv_header(), "phase,step,loss,prediction,score,decision,planning,imitation,updated\n");
  train::StepReport r;
  r.step = 3;
  r.mean_loss = 1.5;
  r.updated = true;
  const std::string row = train::loss_csv_row("joint", r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
  EXPECT_EQ(row.rfind("joint,3,1.5,", 0), 0u);
}

}  // namespace
}  // namespace diffplan
