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

#ifndef DIFFPLAN_CONTEXT_HPP_
#define DIFFPLAN_CONTEXT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "diffplan/core.hpp"
#include "diffplan/decision.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/weights.hpp"
#include "diffplan/world.hpp"

namespace diffplan {

/// Predicted motion of one agent. Index 0 is the current pose, index k the
/// pose k steps ahead.
struct AgentPrediction {
  std::vector<Vec2> positions;
  std::vector<double> headings;
  std::vector<double> speeds;

  int steps() const { return static_cast<int>(positions.size()) - 1; }
};

using Prediction = std::vector<AgentPrediction>;

struct ManeuverContext {
  bool available = false;
  int lane_id = 0;
  double speed_limit = 0.0;
  /// reference[t] is the target point for the state at step t + 1.
  std::vector<Vec2> reference;
  /// Efficiency speed target for the state at step t + 1: the speed limit,
  /// lowered ahead of a red stop line on this lane.
  std::vector<double> speed_target;
  /// Agent indices of the leading / neighbor vehicle, -1 when absent.
  int lead = -1;
  int neighbor = -1;
};

/// An agent checked by the collision term, with a frozen lane-aligned frame
/// per step in which distance is measured.
struct CollisionAgent {
  int agent = 0;
  double threshold = 0.0;
  /// Lateral distances are scaled by this factor so that the threshold
  /// corresponds to side-by-side clearance across the lane.
  double lateral_scale = 1.0;
  std::vector<Vec2> tangent;
  std::vector<Vec2> normal;
};

struct StopConstraint {
  int lane_id = 0;
  Vec2 point;
  Vec2 tangent;
  /// red[t] applies to the state at step t + 1.
  std::vector<bool> red;
};

struct ContextOptions {
  int horizon = 50;
  /// Acceleration used to ramp the reference speed toward the limit.
  double reference_accel = 1.0;
  double interaction_behind = 10.0;
  double interaction_ahead = 60.0;
  double interaction_lane_widths = 2.0;
  /// Lateral clearance that counts as safe between the sides of two bodies.
  double lateral_clearance = 0.8;
  /// The stop line stays active until the ego is this far past it.
  double stop_release = 1.0;
  /// Deceleration of the stopping profile that caps the reference and the
  /// speed target before a red stop line.
  double stop_decel = 2.0;
  /// Distance before the stop line where the stopping profile ends.
  double stop_margin = 0.25;
};

/// Everything a solve needs besides the variables; immutable for its duration.
struct PlanContext {
  int horizon = 0;
  int replay_step = 0;
  int lane_id = 0;
  vehicle::EgoState start;
  vehicle::VehicleParams params;
  decision::Mask available{false, false, false};
  std::array<ManeuverContext, kManeuvers> maneuvers;
  Prediction predictions;
  std::vector<double> agent_lengths;
  std::vector<CollisionAgent> colliders;
  std::vector<StopConstraint> stops;

  const ManeuverContext& maneuver(int alpha) const { return maneuvers[maneuver_index(alpha)]; }
};

namespace detail {

/// Red stop line on a lane, as arc length and per-step activity.
struct LaneStop {
  double s = 0.0;
  std::vector<bool> red;
};

inline double stop_cap(const std::vector<LaneStop>& stops, int t, double s, const ContextOptions& o) {
  double cap = std::numeric_limits<double>::infinity();
  for (const auto& st : stops) {
    if (!st.red[static_cast<std::size_t>(t)]) continue;
    cap = std::min(cap, std::sqrt(2.0 * o.stop_decel * std::max(0.0, st.s - o.stop_margin - s)));
  }
  return cap;
}

/// Reference points and speed targets along `lane`. The reference speed
/// ramps toward the limit and never exceeds the stopping profile.
inline void reference_profile(const world::Lane& lane, const vehicle::EgoState& start, int horizon, double dt,
                              const std::vector<LaneStop>& stops, const ContextOptions& o, ManeuverContext& m) {
  m.reference.clear();
  m.speed_target.clear();
  double s = lane.project(start.position()).s;
  double v = std::max(start.speed, 0.0);
  const double dv = o.reference_accel * dt;
  for (int t = 0; t < horizon; ++t) {
    const double cap = stop_cap(stops, t, s, o);
    s += std::min(v, cap) * dt;
    v += std::clamp(lane.speed_limit() - v, -dv, dv);
    v = std::min(v, stop_cap(stops, t, s, o));
    m.reference.push_back(lane.point_at(s));
    m.speed_target.push_back(std::min(lane.speed_limit(), stop_cap(stops, t, s, o)));
  }
}

}  // namespace detail

/// Builds the context for a plan starting from `ego` at replay step `step`.
/// Agent predictions must cover at least `options.horizon` steps.
inline PlanContext build_context(const world::Scenario& scenario, int step, const vehicle::EgoState& ego,
                                 const Prediction& predictions, const CostWeights& weights,
                                 const ContextOptions& options = {}) {
  if (predictions.size() != scenario.agents.size()) {
    throw ValidationError("prediction count does not match agent count");
  }
  for (const auto& p : predictions) {
    if (p.steps() < options.horizon) throw ValidationError("prediction shorter than planning horizon");
  }
  PlanContext ctx;
  ctx.horizon = options.horizon;
  ctx.replay_step = step;
  ctx.start = ego;
  ctx.params = scenario.ego_params;
  ctx.predictions = predictions;
  for (const auto& a : scenario.agents) ctx.agent_lengths.push_back(a.length);

  const std::span<const world::Lane> lanes(scenario.lanes);
  ctx.lane_id = world::nearest_lane(ego.position(), lanes);
  const world::Lane& own = scenario.lane(ctx.lane_id);
  const double dt = scenario.ego_params.dt;

  for (int alpha = -1; alpha <= 1; ++alpha) {
    ManeuverContext& m = ctx.maneuvers[maneuver_index(alpha)];
    const auto target = world::target_lane(ctx.lane_id, alpha, lanes);
    if (!target) continue;
    const world::Lane& lane = scenario.lane(*target);
    m.available = true;
    m.lane_id = *target;
    m.speed_limit = lane.speed_limit();
    std::vector<detail::LaneStop> lane_stops;
    for (const auto& sig : scenario.signals) {
      if (sig.lane_id != *target || lane.project(ego.position()).s > sig.stop_line_s + options.stop_release) continue;
      detail::LaneStop st{sig.stop_line_s, {}};
      for (int t = 0; t < options.horizon; ++t) {
        st.red.push_back(sig.state_at(step + t + 1) == world::SignalState::kRed);
      }
      lane_stops.push_back(std::move(st));
    }
    detail::reference_profile(lane, ego, options.horizon, dt, lane_stops, options, m);
    if (auto lv = world::identify_lv(scenario, *target, ego, step)) m.lead = static_cast<int>(lv->agent_index);
    if (alpha != 0) {
      if (auto nv = world::identify_nv(scenario, *target, ego, step)) m.neighbor = static_cast<int>(nv->agent_index);
    }
    ctx.available[maneuver_index(alpha)] = true;
  }

  // Interaction set, selected once from current poses.
  const double ego_s = own.project(ego.position()).s;
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const auto& agent = scenario.agents[i];
    const world::FrenetPose f = own.project(predictions[i].positions[0]);
    const double gap = f.s - ego_s;
    if (gap < -options.interaction_behind || gap > options.interaction_ahead) continue;
    if (!(std::abs(f.d) < options.interaction_lane_widths * own.width())) continue;
    CollisionAgent c;
    c.agent = static_cast<int>(i);
    c.threshold = scenario.ego_params.length + agent.length + weights.collision_gap;
    c.lateral_scale =
        c.threshold / (0.5 * (scenario.ego_params.width + agent.width) + options.lateral_clearance);
    for (int t = 0; t < options.horizon; ++t) {
      const double s = own.project(predictions[i].positions[static_cast<std::size_t>(t + 1)]).s;
      c.tangent.push_back(own.tangent_at(s));
      c.normal.push_back(own.normal_at(s));
    }
    ctx.colliders.push_back(std::move(c));
  }

  for (const auto& sig : scenario.signals) {
    bool relevant = false;
    for (const auto& m : ctx.maneuvers) relevant = relevant || (m.available && m.lane_id == sig.lane_id);
    if (!relevant) continue;
    const world::Lane& lane = scenario.lane(sig.lane_id);
    if (lane.project(ego.position()).s > sig.stop_line_s + options.stop_release) continue;
    StopConstraint sc;
    sc.lane_id = sig.lane_id;
    sc.point = lane.point_at(sig.stop_line_s);
    sc.tangent = lane.tangent_at(sig.stop_line_s);
    for (int t = 0; t < options.horizon; ++t) {
      sc.red.push_back(sig.state_at(step + t + 1) == world::SignalState::kRed);
    }
    ctx.stops.push_back(std::move(sc));
  }
  return ctx;
}

}  // namespace diffplan

#endif  // DIFFPLAN_CONTEXT_HPP_
