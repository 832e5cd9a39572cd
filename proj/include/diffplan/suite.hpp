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

#ifndef DIFFPLAN_SUITE_HPP_
#define DIFFPLAN_SUITE_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "diffplan/core.hpp"
#include "diffplan/initializer.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/world.hpp"

namespace diffplan::suite {

inline constexpr std::array<std::string_view, 5> kTemplates = {
    "slow_lv_free_right", "blocked_adjacent", "red_light", "car_following", "yielding"};

inline constexpr double kLaneWidth = 3.5;
inline constexpr double kLaneStartX = -100.0;
inline constexpr double kLaneEndX = 700.0;
/// Recorded steps after t = 0 (ego ground truth and agent replay).
inline constexpr int kFutureSteps = 250;

/// Uniform draws in [lo, hi) from a mt19937_64 stream using a fixed 53-bit
/// mantissa mapping, so results do not depend on the standard library.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t draw) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(draw)};
    engine_.seed(seq);
  }

  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 engine_;
};

namespace detail {

/// Lane i (1-based) runs along +x at y = -(i - 1) * width.
inline world::Lane straight_lane(int id, int count, double limit) {
  std::vector<Vec2> pts;
  const double y = -(id - 1) * kLaneWidth;
  for (double x = kLaneStartX; x <= kLaneEndX + 1e-9; x += 25.0) pts.emplace_back(x, y);
  std::optional<int> left = id > 1 ? std::optional<int>(id - 1) : std::nullopt;
  std::optional<int> right = id < count ? std::optional<int>(id + 1) : std::nullopt;
  return {id, std::move(pts), kLaneWidth, limit, left, right};
}

inline double lane_y(int id) { return -(id - 1) * kLaneWidth; }

/// Track with x(t) given per time t = (k - H) dt.
inline world::AgentTrack scripted_track(int id, world::AgentKind kind, double length, double width, int history,
                                        double dt, const std::function<world::AgentPose(double)>& at) {
  world::AgentTrack tr;
  tr.id = id;
  tr.kind = kind;
  tr.length = length;
  tr.width = width;
  for (int k = 0; k <= history + kFutureSteps; ++k) tr.poses.push_back(at((k - history) * dt));
  return tr;
}

/// Vehicle at constant speed along a straight lane.
inline world::AgentTrack cruising(int id, int lane, double x0, double speed, int history, double dt) {
  return scripted_track(id, world::AgentKind::kVehicle, 4.8, 2.0, history, dt, [=](double t) {
    return world::AgentPose{x0 + speed * t, lane_y(lane), 0.0, speed};
  });
}

/// Scripted expert used as ground truth: lane-centering steering toward
/// `target_lane` and intelligent-driver speed control against the replayed
/// agents and red stop lines.
inline std::vector<vehicle::EgoState> expert_drive(const world::Scenario& sc, int target_lane) {
  init::HeuristicParams hp;
  hp.time_headway = 1.5;
  const world::Lane& lane = sc.lane(target_lane);
  std::vector<vehicle::EgoState> out{sc.ego_start};
  vehicle::EgoState x = sc.ego_start;
  for (int k = 0; k < kFutureSteps; ++k) {
    const auto f = lane.project(x.position());
    const double heading_err = wrap_angle(x.heading - lane.heading_at(f.s));
    const double steer = std::clamp(-heading_err - std::atan2(hp.lateral_gain * f.d, std::max(x.speed, 0.0) + 1.0), -hp.max_steer, hp.max_steer);
    init::detail::Leader lead;
    for (std::size_t i = 0; i < sc.agents.size(); ++i) {
      const auto& pose = sc.agent_pose(i, k);
      const auto g = lane.project(pose.position());
      bool in_path =
          std::abs(g.d - f.d) < 0.5 * (sc.ego_params.width + sc.agents[i].width) + hp.lateral_clearance;
      if (sc.agents[i].kind != world::AgentKind::kVehicle) {
        // Crossing agents block the lane from shortly before they enter it
        // until they have left it on the far side.
        const double lateral_speed = pose.speed * std::sin(pose.heading - lane.heading_at(g.s));
        const bool leaving = g.d * lateral_speed > 0.0 && std::abs(g.d) > 0.5 * lane.width() + 1.0;
        in_path = !leaving && std::abs(g.d) < 2.0 * lane.width();
      }
      if (!in_path || g.s <= f.s) continue;
      const double gap = g.s - f.s - 0.5 * (sc.ego_params.length + sc.agents[i].length);
      const bool crossing = sc.agents[i].kind != world::AgentKind::kVehicle;
      if (gap < lead.gap) lead = {gap, crossing ? 0.0 : pose.speed};
    }
    for (const auto& sig : sc.signals) {
      if (sig.lane_id != target_lane || sig.state_at(k) != world::SignalState::kRed) continue;
      if (f.s > sig.stop_line_s + 0.5) continue;
      const double gap = sig.stop_line_s - hp.stop_margin - f.s;
      if (gap < lead.gap) lead = {gap, 0.0};
    }
    const double accel = std::clamp(init::detail::idm_accel(x.speed, lane.speed_limit(), lead, hp),
                                    -sc.ego_params.max_accel, hp.max_accel);
    x = vehicle::step(x, {accel, steer}, sc.ego_params);
    out.push_back(x);
  }
  return out;
}

inline world::Scenario base(std::string_view name, std::uint64_t seed, int draw, int lanes, double limit) {
  world::Scenario sc;
  sc.template_name = std::string(name);
  sc.name = std::string(name) + "_" + (draw < 10 ? "0" : "") + std::to_string(draw);
  sc.seed = seed;
  for (int id = 1; id <= lanes; ++id) sc.lanes.push_back(straight_lane(id, lanes, limit));
  sc.ego_lane_id = 1;
  return sc;
}

}  // namespace detail

/// One parameter draw of a template. Equal (template, seed, draw) yield
/// identical scenarios.
inline world::Scenario generate_scenario(std::string_view name, std::uint64_t seed, int draw) {
  std::uint64_t stream = 0;
  while (stream < kTemplates.size() && kTemplates[stream] != name) ++stream;
  if (stream == kTemplates.size()) throw ValidationError("unknown scenario template '" + std::string(name) + "'");
  Rng rng(seed, stream, static_cast<std::uint64_t>(draw));
  using detail::cruising;
  using world::AgentKind;

  world::Scenario sc;
  int target = 1;
  const int h = 20;
  const double dt = 0.1;
  if (name == "slow_lv_free_right") {
    sc = detail::base(name, seed, draw, 2, rng.uniform(12.0, 14.0));
    const double v0 = rng.uniform(9.0, 11.0);
    sc.ego_start = {0.0, 0.0, 0.0, v0};
    sc.agents.push_back(cruising(1, 1, rng.uniform(22.0, 32.0), rng.uniform(3.0, 5.0), h, dt));
    const double limit = sc.lanes[1].speed_limit();
    sc.agents.push_back(cruising(2, 2, rng.uniform(70.0, 90.0), limit, h, dt));
    target = 2;
  } else if (name == "blocked_adjacent") {
    sc = detail::base(name, seed, draw, 2, rng.uniform(12.0, 14.0));
    const double v0 = rng.uniform(9.0, 11.0);
    sc.ego_start = {0.0, 0.0, 0.0, v0};
    sc.agents.push_back(cruising(1, 1, rng.uniform(30.0, 40.0), rng.uniform(7.0, 9.0), h, dt));
    const double shift = rng.uniform(-2.0, 2.0);
    const double v_adj = v0 + rng.uniform(-0.5, 0.5);
    for (int j = 0; j < 3; ++j) sc.agents.push_back(cruising(2 + j, 2, -12.0 + 12.0 * j + shift, v_adj, h, dt));
  } else if (name == "red_light") {
    sc = detail::base(name, seed, draw, 2, rng.uniform(11.0, 13.0));
    sc.ego_start = {0.0, 0.0, 0.0, rng.uniform(8.0, 10.0)};
    const double stop_x = rng.uniform(40.0, 55.0);
    for (int id = 1; id <= 2; ++id) {
      world::TrafficSignal sig;
      sig.lane_id = id;
      sig.stop_line_s = stop_x - kLaneStartX;
      sig.states.assign(static_cast<std::size_t>(kFutureSteps) + 1, world::SignalState::kRed);
      sc.signals.push_back(sig);
    }
    sc.agents.push_back(cruising(1, 2, stop_x - 4.0, 0.0, h, dt));
  } else if (name == "car_following") {
    sc = detail::base(name, seed, draw, 1, rng.uniform(12.0, 14.0));
    sc.ego_start = {0.0, 0.0, 0.0, rng.uniform(8.0, 10.0)};
    const double x0 = rng.uniform(20.0, 28.0);
    const double vb = rng.uniform(7.0, 9.0);
    const double amp = rng.uniform(1.0, 2.0);
    const double omega = 2.0 * std::numbers::pi / rng.uniform(6.0, 10.0);
    sc.agents.push_back(detail::scripted_track(1, AgentKind::kVehicle, 4.8, 2.0, h, dt, [=](double t) {
      return world::AgentPose{x0 + vb * t + amp / omega * (1.0 - std::cos(omega * t)), 0.0, 0.0,
                              vb + amp * std::sin(omega * t)};
    }));
  } else {  // yielding
    sc = detail::base(name, seed, draw, 2, rng.uniform(10.0, 12.0));
    sc.ego_start = {0.0, 0.0, 0.0, rng.uniform(7.0, 9.0)};
    const double xc = rng.uniform(30.0, 40.0);
    const double y0 = rng.uniform(5.5, 6.5);
    const double vp = rng.uniform(1.0, 1.4);
    sc.agents.push_back(detail::scripted_track(1, AgentKind::kPedestrian, 0.5, 0.5, h, dt, [=](double t) {
      return world::AgentPose{xc, y0 - vp * t, -0.5 * std::numbers::pi, vp};
    }));
    sc.crosswalks.push_back({{xc - 2.0, 6.0}, {xc + 2.0, 6.0}, {xc + 2.0, -9.5}, {xc - 2.0, -9.5}});
  }
  sc.dt = dt;
  sc.history_steps = h;
  sc.horizon_steps = 50;
  sc.ego_params.dt = dt;
  sc.ego_ground_truth = detail::expert_drive(sc, target);
  world::validate(sc);
  return sc;
}

/// The bundled suite: `per_template` draws of each template.
inline std::vector<world::Scenario> generate_suite(std::uint64_t seed, int per_template = 4) {
  std::vector<world::Scenario> out;
  for (auto name : kTemplates) {
    for (int i = 0; i < per_template; ++i) out.push_back(generate_scenario(name, seed, i));
  }
  return out;
}

}  // namespace diffplan::suite

#endif  // DIFFPLAN_SUITE_HPP_
