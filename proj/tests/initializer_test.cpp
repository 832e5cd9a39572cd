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
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "diffplan/initializer.hpp"
#include "test_support.hpp"

namespace diffplan {
namespace {

world::Scenario with_agent(world::Scenario sc, const world::AgentPose& pose) {
  world::AgentTrack tr;
  tr.id = 1;
  tr.poses.assign(static_cast<std::size_t>(sc.history_steps) + 1, pose);
  sc.agents = {tr};
  return sc;
}

TEST(ConstantVelocity, UniformMotionAlongAStraightLane) {
  const auto sc = with_agent(testing::empty_road(), {suite::kLaneStartX, 0.0, 0.0, 5.0});
  const auto pred = init::constant_velocity_predict(sc, 0, 50);
  ASSERT_EQ(pred.size(), 1u);
  ASSERT_EQ(pred[0].steps(), 50);
  for (int k = 1; k <= 50; ++k) {
    const Vec2 p = pred[0].positions[static_cast<std::size_t>(k)];
    EXPECT_NEAR(sc.lanes[0].project(p).s, 0.5 * k, 1e-12);
    EXPECT_NEAR(p.y(), 0.0, 1e-12);
  }
}

TEST(ConstantVelocity, StationaryAgentStaysPut) {
  const auto sc = with_agent(testing::empty_road(), {30.0, 0.0, 0.0, 0.0});
  const auto pred = init::constant_velocity_predict(sc, 0, 20);
  for (const auto& p : pred[0].positions) EXPECT_EQ(p, Vec2(30.0, 0.0));
}

TEST(ConstantVelocity, CurvedLaneKeepsArcSpacing) {
  world::Scenario sc;
  std::vector<Vec2> pts;
  for (int i = 0; i <= 180; ++i) {
    const double th = 0.5 * std::numbers::pi * i / 180.0;
    pts.emplace_back(50.0 * std::sin(th), 50.0 - 50.0 * std::cos(th));
  }
  sc.lanes.emplace_back(1, pts, 3.5, 10.0);
  sc.history_steps = 0;
  const world::Lane lane = sc.lanes[0];
  const Vec2 start = lane.point_at(5.0);
  sc = with_agent(sc, {start.x(), start.y(), lane.heading_at(5.0), 5.0});
  const auto pred = init::constant_velocity_predict(sc, 0, 50);
  // Oracle: the arc position after k steps is 5 + 0.5 k; walk the polyline
  // there independently by accumulating segment lengths.
  for (int k = 1; k <= 50; ++k) {
    const double target = 5.0 + 0.5 * k;
    double walked = 0.0;
    Vec2 want = pts.back();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const double len = (pts[i + 1] - pts[i]).norm();
      if (walked + len >= target) {
        want = pts[i] + (target - walked) / len * (pts[i + 1] - pts[i]);
        break;
      }
      walked += len;
    }
    const Vec2 got = pred[0].positions[static_cast<std::size_t>(k)];
    EXPECT_LT((got - want).norm(), 1e-3) << "k=" << k;
    EXPECT_LT(lane.project(got).distance, 1e-3);
  }
}

TEST(HistoryPrediction, SpeedsNeverGoNegative) {
  for (const auto& sc : suite::generate_suite(0, 2)) {
    for (const auto& p : init::history_predict(sc, 30, 50)) {
      for (double v : p.speeds) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(HeuristicInit, EmptyRoadPrefersLaneKeeping) {
  world::Scenario sc = suite::generate_scenario("slow_lv_free_right", 0, 0);
  sc.agents.clear();
  sc.ego_start.speed = sc.lanes[0].speed_limit();
  const CostWeights w;
  ContextOptions opt;
  const PlanContext ctx = build_context(sc, 0, sc.ego_start, {}, w, opt);
  const auto futures = init::heuristic_init(sc, ctx, w);
  ASSERT_EQ(futures.size(), 2u);
  const auto& d = futures.front().d;
  // Oracle: the coarse costs of the two rollouts, ranked directly.
  const double keep = init::coarse_cost(ctx, futures[0].maneuver == 0 ? futures[0].controls : futures[1].controls, 0, w);
  const double right = init::coarse_cost(ctx, futures[0].maneuver == 1 ? futures[0].controls : futures[1].controls, 1, w);
  ASSERT_LT(keep, right);
  EXPECT_GT(d[maneuver_index(0)], d[maneuver_index(1)]);
  EXPECT_EQ(d[maneuver_index(-1)], 0.0);
  EXPECT_NEAR(d[0] + d[1] + d[2], 1.0, 1e-15);
  for (const auto& f : futures) EXPECT_DOUBLE_EQ(f.score, 0.5);
}

TEST(HeuristicInit, EqualLogitsGiveUniformProbabilities) {
  const auto all = init::masked_softmax({2.0, 2.0, 2.0}, {true, true, true});
  for (double p : all) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const auto two = init::masked_softmax({-4.0, -4.0, 9.0}, {true, true, false});
  EXPECT_DOUBLE_EQ(two[0], 0.5);
  EXPECT_DOUBLE_EQ(two[1], 0.5);
  EXPECT_EQ(two[2], 0.0);
}

TEST(HeuristicInit, MaskedManeuversGetNothing) {
  for (const auto& sc : suite::generate_suite(0, 1)) {
    const auto io = init::initialize(sc, 0, sc.ego_start, {}, {}, {});
    for (int k = 0; k < kManeuvers; ++k) {
      if (!io.ctx.available[k]) EXPECT_EQ(io.init.decisions.b.col(k).norm(), 0.0) << sc.name;
    }
    EXPECT_TRUE(decision::compliance_check(io.init.decisions, 1e-9).rows.size() > 0);
  }
}

TEST(ConstantVelocityInit, ZeroControlsAndUniformDecisions) {
  const auto sc = suite::generate_scenario("slow_lv_free_right", 0, 0);
  init::Initializer ini;
  ini.kind = init::InitializerKind::kConstantVelocity;
  const auto io = init::initialize(sc, 0, sc.ego_start, ini, {}, {});
  for (const auto& u : io.init.controls) EXPECT_EQ(u, (vehicle::ControlInput{0.0, 0.0}));
  EXPECT_DOUBLE_EQ(io.init.decisions.b(7, maneuver_index(0)), 0.5);
  EXPECT_DOUBLE_EQ(io.init.decisions.b(7, maneuver_index(1)), 0.5);
}

TEST(ToyInitializer, ZeroParametersGiveUniformDecisions) {
  const auto sc = suite::generate_scenario("blocked_adjacent", 0, 0);
  init::Initializer toy;
  toy.kind = init::InitializerKind::kToy;
  const auto io = init::initialize(sc, 0, sc.ego_start, toy, {}, {});
  const auto base = init::initialize(sc, 0, sc.ego_start, {}, {}, {});
  EXPECT_EQ(io.toy_output, init::ToyOutput::Zero());
  for (const auto& f : io.futures) {
    EXPECT_DOUBLE_EQ(f.d[maneuver_index(0)], 0.5);
    EXPECT_DOUBLE_EQ(f.d[maneuver_index(1)], 0.5);
    EXPECT_DOUBLE_EQ(f.score, 0.5);
  }
  EXPECT_EQ(io.futures[0].controls, base.futures[0].controls);
}

TEST(ToyInitializer, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 0.05);
  init::ToyParams phi;
  for (auto& p : phi) p = n(rng);
  const auto sc = suite::generate_scenario("slow_lv_free_right", 0, 1);
  const auto io = init::initialize(sc, 0, sc.ego_start, {}, {}, {});
  const init::Features f = init::scene_features(sc, io.ctx);
  init::ToyJacobian jac;
  init::toy_forward(phi, f, &jac);
  const auto fn = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(init::toy_forward(init::ToyParams(x), f));
  };
  const Eigen::MatrixXd fd = testing::central_jacobian(fn, phi, 1e-6);
  EXPECT_LT(testing::relative_error(jac, fd), 1e-6);
}

TEST(ToyInitializer, IdenticalScenesGiveIdenticalOutputs) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  init::Initializer toy;
  toy.kind = init::InitializerKind::kToy;
  for (auto& p : toy.toy) p = u(rng);
  const auto a = init::initialize(suite::generate_scenario("yielding", 4, 2), 0,
                                  suite::generate_scenario("yielding", 4, 2).ego_start, toy, {}, {});
  const auto b = init::initialize(suite::generate_scenario("yielding", 4, 2), 0,
                                  suite::generate_scenario("yielding", 4, 2).ego_start, toy, {}, {});
  EXPECT_EQ(a.toy_output, b.toy_output);
  EXPECT_EQ(a.init.controls, b.init.controls);
}

TEST(ToyInitializer, ParametersRoundTripThroughJson) {
  init::ToyParams phi;
  for (int i = 0; i < init::kNumToyParams; ++i) phi[i] = 0.001 * i - 0.03;
  EXPECT_EQ(init::toy_from_json(init::toy_to_json(phi)), phi);
  EXPECT_THROW(init::toy_from_json(nlohmann::json{{"phi", {1.0, 2.0}}}), ParseError);
}

std::vector<Vec2> line(double y, int n) {
  std::vector<Vec2> out;
  for (int k = 0; k < n; ++k) out.emplace_back(k, y);
  return out;
}

TEST(SelectBestFuture, Examples) {
  const auto truth = line(0.0, 20);
  EXPECT_EQ(init::select_best_future({line(2.0, 20), truth, line(-1.0, 20)}, {}, truth, {}), 1u);
  EXPECT_EQ(init::select_best_future({line(1.0, 20), line(0.2, 20)}, {}, truth, {}), 1u);
}

TEST(SelectBestFuture, MatchesBruteForce) {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Vec2>> futures(3);
    std::vector<Vec2> truth;
    for (int k = 0; k < 15; ++k) truth.emplace_back(n(rng), n(rng));
    for (auto& f : futures) {
      for (const auto& p : truth) f.push_back(p + Vec2(n(rng), n(rng)));
    }
    std::size_t want = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < 3; ++k) {
      double e = 0.0;
      for (std::size_t i = 0; i < truth.size(); ++i) e += std::hypot(futures[k][i].x() - truth[i].x(), futures[k][i].y() - truth[i].y());
      if (e < best) {
        best = e;
        want = k;
      }
    }
    EXPECT_EQ(init::select_best_future(futures, {}, truth, {}), want);
  }
}

}  // namespace
}  // namespace diffplan
