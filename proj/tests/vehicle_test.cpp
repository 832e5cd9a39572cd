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

#include "diffplan/vehicle.hpp"
#include "test_support.hpp"

namespace diffplan {
namespace {

using vehicle::ControlInput;
using vehicle::EgoState;
using vehicle::VehicleParams;

TEST(VehicleStep, StraightLineAtConstantSpeed) {
  const VehicleParams p;
  const EgoState x = vehicle::step({0.0, 0.0, 0.0, 10.0}, {0.0, 0.0}, p);
  EXPECT_DOUBLE_EQ(x.px, 1.0);
  EXPECT_DOUBLE_EQ(x.py, 0.0);
  EXPECT_DOUBLE_EQ(x.heading, 0.0);
  EXPECT_DOUBLE_EQ(x.speed, 10.0);
}

TEST(VehicleStep, HeadingRateFromSteering) {
  // v/L * tan(delta) * dt with v = 2.8 and delta = atan(0.5): 0.5 * 0.1.
  const VehicleParams p;
  const EgoState x = vehicle::step({0.0, 0.0, 0.0, 2.8}, {0.0, std::atan(0.5)}, p);
  EXPECT_NEAR(x.heading, 0.05, 1e-15);
}

TEST(VehicleStep, ControlsClampToBox) {
  const VehicleParams p;
  const EgoState a = vehicle::step({0, 0, 0, 5.0}, {9.0, 2.0}, p);
  const EgoState b = vehicle::step({0, 0, 0, 5.0}, {5.0, 0.6}, p);
  EXPECT_EQ(a, b);
  const auto c = vehicle::clamp_control(ControlInput{-7.0, -0.9}, p);
  EXPECT_EQ(c.accel, -5.0);
  EXPECT_EQ(c.steer, -0.6);
}

TEST(VehicleStep, MatchesOracleOnRandomPairs) {
  const VehicleParams p;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const EgoState x{50 * u(rng), 50 * u(rng), std::numbers::pi * u(rng), 15 * u(rng)};
    const double a = 7 * u(rng);
    const double d = 0.8 * u(rng);
    const EgoState got = vehicle::step(x, {a, d}, p);
    const EgoState want = testing::bicycle_oracle(x, a, d, p);
    EXPECT_NEAR(got.px, want.px, 1e-12);
    EXPECT_NEAR(got.py, want.py, 1e-12);
    EXPECT_NEAR(got.heading, want.heading, 1e-12);
    EXPECT_NEAR(got.speed, want.speed, 1e-12);
  }
}

TEST(VehicleJacobian, MatchesCentralDifferences) {
  const VehicleParams p;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const EgoState x{10 * u(rng), 10 * u(rng), 3 * u(rng), 12 * u(rng)};
    const ControlInput c{4 * u(rng), 0.5 * u(rng)};
    const auto j = vehicle::step_jacobians(x, c, p);
    Eigen::VectorXd z(6);
    z << x.px, x.py, x.heading, x.speed, c.accel, c.steer;
    const auto f = [&](const Eigen::VectorXd& v) {
      const EgoState n = vehicle::step({v[0], v[1], v[2], v[3]}, {v[4], v[5]}, p);
      return Eigen::VectorXd(Eigen::Vector4d(n.px, n.py, n.heading, n.speed));
    };
    const Eigen::MatrixXd fd = testing::central_jacobian(f, z, 1e-6);
    Eigen::MatrixXd an(4, 6);
    an << j.wrt_state, j.wrt_control;
    EXPECT_LT(testing::relative_error(an, fd, 1e-3), 1e-7);
  }
}

TEST(VehicleJacobian, SaturatedControlHasNoColumn) {
  const VehicleParams p;
  const auto j = vehicle::step_jacobians({0, 0, 0, 5.0}, {6.0, -0.7}, p);
  EXPECT_EQ(j.wrt_control.norm(), 0.0);
}

TEST(VehicleRollout, VerifiesBitExactly) {
  const VehicleParams p;
  std::vector<ControlInput> u(30, {1.0, 0.1});
  u[3] = {8.0, 0.9};
  const auto traj = vehicle::rollout({0, 0, 0.2, 4.0}, u, p);
  ASSERT_EQ(traj.states.size(), 31u);
  EXPECT_EQ(traj.controls[3].accel, 5.0);
  EXPECT_TRUE(vehicle::verify_trajectory(traj, p));
  auto broken = traj;
  broken.states[10].px += 1e-13;
  EXPECT_FALSE(vehicle::verify_trajectory(broken, p));
}

TEST(VehicleRollout, SpeedMayBecomeNegative) {
  const VehicleParams p;
  std::vector<ControlInput> u(10, {-5.0, 0.0});
  const auto traj = vehicle::rollout({0, 0, 0, 1.0}, u, p);
  EXPECT_NEAR(traj.states.back().speed, -4.0, 1e-12);
}

TEST(VehicleLateralAcceleration, Formula) {
  const VehicleParams p;
  EXPECT_NEAR(vehicle::lateral_acceleration(10.0, std::atan(0.28), p), 10.0, 1e-12);
}

}  // namespace
}  // namespace diffplan
