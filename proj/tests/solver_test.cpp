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
#include <limits>
#include <random>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "diffplan/planner.hpp"
#include "diffplan/solver.hpp"
#include "test_support.hpp"

namespace diffplan {
namespace {

init::InitOutput heuristic(const world::Scenario& sc, int horizon, const CostWeights& w = {}) {
  ContextOptions opt;
  opt.horizon = horizon;
  return init::initialize(sc, 0, sc.ego_start, {}, w, opt);
}

TEST(GaussNewton, OneIterationMatchesDampedNormalEquations) {
  const CostWeights w;
  for (auto name : suite::kTemplates) {
    const auto io = heuristic(suite::generate_scenario(name, 0, 1), 8);
    SolverConfig cfg = SolverConfig::inference();
    cfg.max_iters = 1;
    const VariableLayout layout = cfg.layout(io.init.decisions);
    const Eigen::VectorXd theta0 = pack(io.init, layout);
    const auto a = assemble(io.init, layout, io.ctx, w, AssemblyMode::kJacobian);
    Eigen::MatrixXd h = a.jacobian.transpose() * a.jacobian;
    h.diagonal().array() += cfg.mu;
    const Eigen::VectorXd want =
        theta0 - cfg.beta * h.colPivHouseholderQr().solve(a.jacobian.transpose() * a.residuals);
    const Eigen::VectorXd got = pack(solve(io.ctx, io.init, w, cfg).variables, layout);
    EXPECT_LT((got - want).norm(), 1e-9 * std::max(1.0, want.norm())) << name;
  }
}

TEST(GaussNewton, StepScalesWithBeta) {
  const CostWeights w;
  const auto io = heuristic(suite::generate_scenario("slow_lv_free_right", 0, 0), 10);
  SolverConfig full = SolverConfig::inference();
  full.max_iters = 1;
  full.beta = 1.0;
  SolverConfig half = full;
  half.beta = 0.5;
  const VariableLayout layout = full.layout(io.init.decisions);
  const Eigen::VectorXd theta0 = pack(io.init, layout);
  const Eigen::VectorXd d1 = pack(solve(io.ctx, io.init, w, full).variables, layout) - theta0;
  const Eigen::VectorXd d2 = pack(solve(io.ctx, io.init, w, half).variables, layout) - theta0;
  EXPECT_LT((d1 - 2.0 * d2).norm(), 1e-12 * std::max(1.0, d1.norm()));
}

TEST(GaussNewton, FixedPointIsStationary) {
  // Controls only, so every residual is smooth along the path.
  const CostWeights w;
  const auto io = heuristic(suite::generate_scenario("car_following", 0, 2), 10);
  SolverConfig cfg = SolverConfig::inference();
  cfg.fix_decisions = true;
  cfg.max_iters = 400;
  cfg.step_tol = 1e-12;
  const auto res = solve(io.ctx, io.init, w, cfg);
  ASSERT_TRUE(res.converged);
  const VariableLayout layout = cfg.layout(io.init.decisions);
  const auto a0 = assemble(io.init, layout, io.ctx, w, AssemblyMode::kNormal);
  const auto a = assemble(res.variables, layout, io.ctx, w, AssemblyMode::kNormal);
  EXPECT_LT(a.gradient.norm(), 1e-8 * a0.gradient.norm());
  EXPECT_LT(a.cost, a0.cost);
}

TEST(Solve, ZeroIterationsEchoTheInitialGuess) {
  const CostWeights w;
  const auto io = heuristic(suite::generate_scenario("blocked_adjacent", 0, 0), 12);
  SolverConfig cfg = SolverConfig::inference();
  cfg.max_iters = 0;
  const auto res = solve(io.ctx, io.init, w, cfg);
  EXPECT_FALSE(res.converged);
  EXPECT_EQ(res.iterations_used, 0);
  EXPECT_TRUE(res.cost_trace.empty());
  for (std::size_t t = 0; t < io.init.controls.size(); ++t) {
    EXPECT_EQ(res.variables.controls[t].accel, io.init.controls[t].accel);
    EXPECT_EQ(res.variables.controls[t].steer, io.init.controls[t].steer);
  }
  EXPECT_LT((res.variables.decisions.b - io.init.decisions.b).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(res.final_cost(), res.initial_cost);
}

TEST(Solve, EmptyRoadKeepsLaneWithNearZeroControls) {
  const auto sc = testing::empty_road();
  const auto io = heuristic(sc, 50);
  const auto res = solve(io.ctx, io.init, {}, SolverConfig::inference());
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.maneuver, 0);
  for (const auto& u : res.variables.controls) {
    EXPECT_LT(std::abs(u.accel), 0.05);
    EXPECT_LT(std::abs(u.steer), 1e-3);
  }
}

TEST(Solve, SlowLeaderWithFreeRightLaneChangesRight) {
  for (int draw = 0; draw < 4; ++draw) {
    const auto io = heuristic(suite::generate_scenario("slow_lv_free_right", 0, draw), 50);
    EXPECT_EQ(solve(io.ctx, io.init, {}, SolverConfig::inference()).maneuver, 1) << "draw " << draw;
  }
}

TEST(Solve, NoWorseThanTheExhaustiveGridOnTinyInstances) {
  const CostWeights w;
  for (auto name : suite::kTemplates) {
    const auto io = heuristic(suite::generate_scenario(name, 0, 2), 5);
    const double grid = testing::grid_oracle(io.ctx, w);
    const double gn = solve(io.ctx, io.init, w, SolverConfig::inference()).final_cost();
    EXPECT_LE(gn, 1.05 * grid) << name;
  }
}

TEST(Solve, FinalCostNeverExceedsInitialOnTheSuite) {
  for (const auto& sc : suite::generate_suite(0, 2)) {
    const auto io = heuristic(sc, 50);
    for (const auto& cfg : {SolverConfig::training(), SolverConfig::inference()}) {
      const auto res = solve(io.ctx, io.init, {}, cfg);
      EXPECT_LE(res.final_cost(), res.initial_cost) << sc.name;
    }
  }
}

TEST(Solve, NonFiniteInitialGuessNamesTheBlock) {
  auto io = heuristic(suite::generate_scenario("car_following", 0, 0), 6);
  io.init.controls[2].accel = std::numeric_limits<double>::quiet_NaN();
  try {
    solve(io.ctx, io.init, {}, SolverConfig::inference());
    FAIL() << "expected SolveError";
  } catch (const SolveError& e) {
    EXPECT_NE(std::string(e.what()).find("block '"), std::string::npos) << e.what();
  }
}

TEST(Solve, RejectsInvalidConfiguration) {
  const auto io = heuristic(suite::generate_scenario("car_following", 0, 0), 6);
  SolverConfig cfg;
  cfg.beta = 0.0;
  EXPECT_THROW(solve(io.ctx, io.init, {}, cfg), ValidationError);
  cfg = {};
  cfg.max_iters = -1;
  EXPECT_THROW(solve(io.ctx, io.init, {}, cfg), ValidationError);
  PlanVariables short_init = io.init;
  short_init.controls.pop_back();
  EXPECT_THROW(solve(io.ctx, short_init, {}, SolverConfig{}), ValidationError);
}

TEST(Solve, IsDeterministic) {
  const auto io = heuristic(suite::generate_scenario("yielding", 0, 1), 50);
  const auto a = solve_to_json(solve(io.ctx, io.init, {}, SolverConfig::inference())).dump();
  const auto b = solve_to_json(solve(io.ctx, io.init, {}, SolverConfig::inference())).dump();
  EXPECT_EQ(a, b);
}

TEST(ConvergedRate, Examples) {
  std::vector<SolveResult> batch(4);
  for (auto& r : batch) r.converged = true;
  EXPECT_DOUBLE_EQ(converged_rate(batch), 100.0);
  for (int i = 1; i < 4; ++i) batch[static_cast<std::size_t>(i)].converged = false;
  EXPECT_DOUBLE_EQ(converged_rate(batch), 25.0);
  EXPECT_THROW(converged_rate(std::span<const SolveResult>{}), ValidationError);
}

TEST(Sensitivities, JetSolveKeepsTangentsOnZeroValues) {
  using Jet = ceres::Jet<double, 2>;
  MatrixX<Jet> h(3, 3);
  const Eigen::Matrix3d hv = (Eigen::Matrix3d() << 4, 1, 0, 1, 3, 1, 0, 1, 2).finished();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) h(i, j) = Jet(hv(i, j));
  }
  h(0, 1).v[1] = h(1, 0).v[1] = 0.5;
  VectorX<Jet> g(3);
  g << Jet(0.0, 0), Jet(1.0), Jet(0.0);
  VectorX<Jet> x;
  ASSERT_TRUE(detail::solve_spd(h, g, x));
  const Eigen::Vector3d gv(0.0, 1.0, 0.0);
  const Eigen::Vector3d xv = hv.llt().solve(gv);
  Eigen::Matrix3d dh = Eigen::Matrix3d::Zero();
  dh(0, 1) = dh(1, 0) = 0.5;
  const Eigen::Vector3d dx0 = hv.llt().solve(Eigen::Vector3d::UnitX());
  const Eigen::Vector3d dx1 = hv.llt().solve(-dh * xv);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(x[i].a, xv[i], 1e-14);
    EXPECT_NEAR(x[i].v[0], dx0[i], 1e-14);
    EXPECT_NEAR(x[i].v[1], dx1[i], 1e-14);
  }
}

TEST(Sensitivities, ZeroWeightHasZeroSensitivity) {
  CostWeights w;
  w.w[kLvVelocity] = 0.0;
  const auto io = heuristic(suite::generate_scenario("slow_lv_free_right", 0, 0), 10, w);
  const auto [res, sens] = solve_with_sensitivities(io.ctx, io.init, w, SolverConfig::training());
  EXPECT_EQ(sens.log_weights.col(kLvVelocity).norm(), 0.0);
  EXPECT_GT(sens.log_weights.col(kLvDistance).norm(), 0.0);
}

TEST(Sensitivities, PrimalMatchesPlainSolve) {
  const auto io = heuristic(suite::generate_scenario("red_light", 0, 1), 10);
  const auto plain = solve(io.ctx, io.init, {}, SolverConfig::inference());
  const auto [res, sens] = solve_with_sensitivities(io.ctx, io.init, {}, SolverConfig::inference());
  EXPECT_EQ(solve_to_json(plain).dump(), solve_to_json(res).dump());
  EXPECT_EQ(sens.initial.rows(), sens.initial.cols());
  EXPECT_EQ(sens.log_weights.cols(), kNumLearnable);
}

class SensitivitiesOnSuite : public ::testing::TestWithParam<std::string_view> {};

TEST_P(SensitivitiesOnSuite, MatchFiniteDifferencesOfTheUnrolledSolve) {
  const CostWeights w;
  const auto io = heuristic(suite::generate_scenario(GetParam(), 0, 0), 10);
  for (const auto& cfg : {SolverConfig::training(), SolverConfig::inference()}) {
    const auto raw = testing::check_sensitivities(io.ctx, io.init, w, cfg);
    EXPECT_LT(raw.weights, 1e-3);
    EXPECT_LT(raw.initial, 1e-3);
    const auto inner = testing::check_sensitivities(io.ctx, testing::interior_decisions(io.init), w, cfg);
    EXPECT_EQ(inner.kinks, 0);
    EXPECT_LT(inner.weights, 1e-3);
    EXPECT_LT(inner.initial, 1e-3);
  }
}

INSTANTIATE_TEST_SUITE_P(Templates, SensitivitiesOnSuite, ::testing::ValuesIn(suite::kTemplates));

}  // namespace
}  // namespace diffplan
