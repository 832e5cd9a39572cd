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

#ifndef DIFFPLAN_WORLD_HPP_
#define DIFFPLAN_WORLD_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffplan/core.hpp"
#include "diffplan/vehicle.hpp"

namespace diffplan::world {

/// Lane-aligned coordinates: arc length s and signed lateral offset d
/// (positive to the left of the direction of travel).
struct FrenetPose {
  double s = 0.0;
  double d = 0.0;
  int lane_id = 0;
  /// Euclidean distance to the foot point. Equals |d| unless s was clamped
  /// at a lane end.
  double distance = 0.0;
};

/// Piecewise-linear lane centerline. Headings come from segment directions;
/// the Frenet frame uses unit normals interpolated linearly between vertex
/// bisectors so that (s, d) <-> (x, y) is an exact bijection near the lane.
class Lane {
 public:
  Lane() = default;

  Lane(int id, std::vector<Vec2> centerline, double width, double speed_limit,
       std::optional<int> left = std::nullopt, std::optional<int> right = std::nullopt)
      : id_(id),
        centerline_(std::move(centerline)),
        width_(width),
        speed_limit_(speed_limit),
        left_(left),
        right_(right) {
    if (centerline_.size() < 2) {
      throw ValidationError("lane " + std::to_string(id_) + ": centerline needs at least 2 points");
    }
    if (!(width_ > 0.0)) throw ValidationError("lane " + std::to_string(id_) + ": width must be > 0");
    if (!(speed_limit_ > 0.0)) {
      throw ValidationError("lane " + std::to_string(id_) + ": speed_limit must be > 0");
    }
    const std::size_t n = centerline_.size();
    cumulative_s_.assign(n, 0.0);
    tangents_.resize(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const Vec2 e = centerline_[i + 1] - centerline_[i];
      const double len = e.norm();
      if (!(len > 0.0)) {
        throw ValidationError("lane " + std::to_string(id_) + ": consecutive centerline points coincide");
      }
      tangents_[i] = e / len;
      cumulative_s_[i + 1] = cumulative_s_[i] + len;
    }
    vertex_normals_.resize(n);
    vertex_normals_[0] = left_normal(tangents_.front());
    vertex_normals_[n - 1] = left_normal(tangents_.back());
    for (std::size_t i = 1; i + 1 < n; ++i) {
      Vec2 bis = left_normal(tangents_[i - 1]) + left_normal(tangents_[i]);
      if (bis.norm() < 1e-9) bis = left_normal(tangents_[i]);
      vertex_normals_[i] = bis.normalized();
    }
  }

  int id() const { return id_; }
  const std::vector<Vec2>& centerline() const { return centerline_; }
  double width() const { return width_; }
  double speed_limit() const { return speed_limit_; }
  std::optional<int> left_neighbor() const { return left_; }
  std::optional<int> right_neighbor() const { return right_; }
  double length() const { return cumulative_s_.back(); }

  /// Centerline point at arc length s; extrapolates along the end segments
  /// outside [0, length].
  Vec2 point_at(double s) const {
    const auto [i, t] = locate(s);
    return centerline_[i] + t * (centerline_[i + 1] - centerline_[i]);
  }

  Vec2 tangent_at(double s) const { return tangents_[locate(s).first]; }

  double heading_at(double s) const {
    const Vec2 t = tangent_at(s);
    return std::atan2(t.y(), t.x());
  }

  /// Interpolated unit normal of the Frenet frame at s.
  Vec2 normal_at(double s) const {
    const auto [i, t] = locate(s);
    const double tc = std::clamp(t, 0.0, 1.0);
    return ((1.0 - tc) * vertex_normals_[i] + tc * vertex_normals_[i + 1]).normalized();
  }

  Vec2 to_cartesian(double s, double d) const { return point_at(s) + d * normal_at(s); }

  FrenetPose project(const Vec2& p) const {
    FrenetPose best;
    best.lane_id = id_;
    best.distance = std::numeric_limits<double>::infinity();
    auto consider = [&](double s, double d, double dist) {
      if (dist < best.distance) {
        best.s = s;
        best.d = d;
        best.distance = dist;
      }
    };

    constexpr double kTol = 1e-12;
    const std::size_t segments = tangents_.size();
    for (std::size_t i = 0; i < segments; ++i) {
      const Vec2& a = centerline_[i];
      const Vec2 e = centerline_[i + 1] - a;
      const Vec2& na = vertex_normals_[i];
      const Vec2 m = vertex_normals_[i + 1] - na;
      const Vec2 q = p - a;
      // cross(q - t e, na + t m) = 0
      const double qa = -cross(e, m);
      const double qb = cross(q, m) - cross(e, na);
      const double qc = cross(q, na);
      double roots[2];
      int count = 0;
      if (std::abs(qa) < 1e-14 * std::max(1.0, std::abs(qb))) {
        if (std::abs(qb) > 0.0) roots[count++] = -qc / qb;
      } else {
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          // Numerically stable pair of roots.
          const double qq = -0.5 * (qb + std::copysign(sq, qb));
          if (qq != 0.0) {
            roots[count++] = qq / qa;
            roots[count++] = qc / qq;
          } else {
            roots[count++] = 0.0;
          }
        }
      }
      for (int r = 0; r < count; ++r) {
        const double t = roots[r];
        if (t < -kTol || t > 1.0 + kTol) continue;
        const double tc = std::clamp(t, 0.0, 1.0);
        const Vec2 foot = a + tc * e;
        const Vec2 n = (na + tc * m).normalized();
        const double d = (p - foot).dot(n);
        consider(cumulative_s_[i] + tc * e.norm(), d, (p - foot).norm());
      }
    }
    // Beyond the ends the arc length clamps and d is the perpendicular offset.
    const Vec2 front = p - centerline_.front();
    if (front.dot(tangents_.front()) < 0.0) {
      consider(0.0, front.dot(vertex_normals_.front()), front.norm());
    }
    const Vec2 back = p - centerline_.back();
    if (back.dot(tangents_.back()) > 0.0) {
      consider(length(), back.dot(vertex_normals_.back()), back.norm());
    }
    if (!std::isfinite(best.distance)) {
      // Degenerate geometry (point far on the concave side); fall back to the
      // closest vertex.
      for (std::size_t i = 0; i < centerline_.size(); ++i) {
        const Vec2 r = p - centerline_[i];
        consider(cumulative_s_[i], r.dot(vertex_normals_[i]), r.norm());
      }
    }
    return best;
  }

 private:
  static Vec2 left_normal(const Vec2& t) { return {-t.y(), t.x()}; }

  /// Segment index and (unclamped) fraction for arc length s.
  std::pair<std::size_t, double> locate(double s) const {
    const std::size_t segments = tangents_.size();
    std::size_t i = 0;
    if (s >= cumulative_s_.back()) {
      i = segments - 1;
    } else if (s > 0.0) {
      const auto it = std::upper_bound(cumulative_s_.begin(), cumulative_s_.end(), s);
      i = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_s_.begin()) - 1, segments - 1);
    }
    const double len = cumulative_s_[i + 1] - cumulative_s_[i];
    return {i, (s - cumulative_s_[i]) / len};
  }

  int id_ = 0;
  std::vector<Vec2> centerline_;
  double width_ = 3.5;
  double speed_limit_ = 10.0;
  std::optional<int> left_;
  std::optional<int> right_;
  std::vector<double> cumulative_s_;
  std::vector<Vec2> tangents_;
  std::vector<Vec2> vertex_normals_;
};

enum class AgentKind { kVehicle, kPedestrian, kCyclist };

struct AgentPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const AgentPose&) const = default;
};

/// Recorded agent track. poses[k] is at time (k - history_steps) * dt, so the
/// pose at planning step j lives at index history_steps + j.
struct AgentTrack {
  int id = 0;
  AgentKind kind = AgentKind::kVehicle;
  double length = 4.8;
  double width = 2.0;
  std::vector<AgentPose> poses;
};

enum class SignalState { kRed, kGreen };

struct TrafficSignal {
  int lane_id = 0;
  double stop_line_s = 0.0;
  /// states[j] is the state at planning step j; the last entry persists.
  std::vector<SignalState> states;

  SignalState state_at(int step) const {
    if (states.empty()) return SignalState::kGreen;
    const auto idx = static_cast<std::size_t>(std::clamp<long>(step, 0, static_cast<long>(states.size()) - 1));
    return states[idx];
  }
};

struct Scenario {
  std::string name;
  std::string template_name;
  std::uint64_t seed = 0;
  double dt = 0.1;
  int history_steps = 20;
  int horizon_steps = 50;

  std::vector<Lane> lanes;
  std::vector<AgentTrack> agents;
  std::vector<TrafficSignal> signals;
  /// Stored for completeness; no cost term reads them.
  std::vector<std::vector<Vec2>> crosswalks;

  int ego_lane_id = 0;
  vehicle::EgoState ego_start;
  vehicle::VehicleParams ego_params;
  /// ego_ground_truth[0] is the start state; entry k is at time k * dt.
  std::vector<vehicle::EgoState> ego_ground_truth;

  const Lane* find_lane(int id) const {
    for (const auto& l : lanes) {
      if (l.id() == id) return &l;
    }
    return nullptr;
  }

  const Lane& lane(int id) const {
    const Lane* l = find_lane(id);
    if (l == nullptr) throw ValidationError("unknown lane id " + std::to_string(id));
    return *l;
  }

  /// Number of planning steps for which every agent has a recorded pose.
  int replay_steps() const {
    int steps = std::numeric_limits<int>::max();
    for (const auto& a : agents) {
      steps = std::min(steps, static_cast<int>(a.poses.size()) - history_steps - 1);
    }
    return agents.empty() ? std::numeric_limits<int>::max() : steps;
  }

  const AgentPose& agent_pose(std::size_t agent, int step) const {
    const auto& poses = agents[agent].poses;
    const long idx = std::clamp<long>(history_steps + step, 0, static_cast<long>(poses.size()) - 1);
    return poses[static_cast<std::size_t>(idx)];
  }
};

// ---------------------------------------------------------------------------
// Queries

inline FrenetPose project_to_frenet(const Vec2& point, const Lane& lane) { return lane.project(point); }

/// Lane whose projection is closest to the point; ties go to the smaller id.
inline int nearest_lane(const Vec2& point, std::span<const Lane> lanes) {
  if (lanes.empty()) throw ValidationError("nearest_lane: no lanes");
  int best_id = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& lane : lanes) {
    const double dist = lane.project(point).distance;
    if (dist < best || (dist == best && lane.id() < best_id)) {
      best = dist;
      best_id = lane.id();
    }
  }
  return best_id;
}

/// Lane reached by maneuver alpha (-1 left, 0 keep, +1 right) from lane sigma.
inline std::optional<int> target_lane(int sigma, int alpha, std::span<const Lane> lanes) {
  const Lane* from = nullptr;
  for (const auto& l : lanes) {
    if (l.id() == sigma) from = &l;
  }
  if (from == nullptr) throw ValidationError("target_lane: unknown lane " + std::to_string(sigma));
  if (alpha == 0) return sigma;
  return alpha < 0 ? from->left_neighbor() : from->right_neighbor();
}

struct AgentSnapshot {
  std::size_t agent_index = 0;
  int agent_id = 0;
  AgentPose pose;
  /// Arc-length gap agent minus ego along the queried lane.
  double gap = 0.0;
};

inline constexpr double kLeadWindow = 100.0;

namespace detail {

template <typename Accept>
std::optional<AgentSnapshot> scan_vehicles(const Scenario& scenario, int lane_id,
                                           const vehicle::EgoState& ego, int step, Accept accept) {
  const Lane& lane = scenario.lane(lane_id);
  const double ego_s = lane.project(ego.position()).s;
  std::optional<AgentSnapshot> best;
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const auto& agent = scenario.agents[i];
    if (agent.kind != AgentKind::kVehicle) continue;
    const AgentPose& pose = scenario.agent_pose(i, step);
    const FrenetPose f = lane.project(pose.position());
    if (!(std::abs(f.d) < 0.5 * lane.width())) continue;
    const double gap = f.s - ego_s;
    if (!accept(gap)) continue;
    if (!best || std::abs(gap) < std::abs(best->gap)) {
      best = AgentSnapshot{i, agent.id, pose, gap};
    }
  }
  return best;
}

}  // namespace detail

/// Nearest vehicle strictly ahead of the ego on the lane within 100 m.
inline std::optional<AgentSnapshot> identify_lv(const Scenario& scenario, int lane_id,
                                                const vehicle::EgoState& ego, int step) {
  return detail::scan_vehicles(scenario, lane_id, ego, step,
                               [](double gap) { return gap > 0.0 && gap <= kLeadWindow; });
}

/// Nearest vehicle at or behind the ego on the lane within 100 m.
inline std::optional<AgentSnapshot> identify_nv(const Scenario& scenario, int lane_id,
                                                const vehicle::EgoState& ego, int step) {
  return detail::scan_vehicles(scenario, lane_id, ego, step,
                               [](double gap) { return gap <= 0.0 && gap >= -kLeadWindow; });
}

/// Checks the cross-object invariants of a scenario. Throws ValidationError.
inline void validate(const Scenario& sc) {
  auto fail = [](const std::string& msg) { throw ValidationError(msg); };
  if (!(sc.dt > 0.0)) fail("meta.dt must be > 0");
  if (sc.history_steps < 0) fail("meta.history_steps must be >= 0");
  if (sc.horizon_steps < 1) fail("meta.horizon_steps must be >= 1");
  if (sc.lanes.empty()) fail("scenario has no lanes");
  if (!sc.ego_params.valid()) fail("ego vehicle parameters must be positive");
  for (std::size_t i = 0; i < sc.lanes.size(); ++i) {
    for (std::size_t j = i + 1; j < sc.lanes.size(); ++j) {
      if (sc.lanes[i].id() == sc.lanes[j].id()) fail("duplicate lane id " + std::to_string(sc.lanes[i].id()));
    }
  }
  for (const auto& lane : sc.lanes) {
    const std::string tag = "lane " + std::to_string(lane.id());
    if (auto l = lane.left_neighbor()) {
      const Lane* other = sc.find_lane(*l);
      if (other == nullptr) fail(tag + ": left neighbor " + std::to_string(*l) + " does not exist");
      if (other->right_neighbor() != lane.id()) fail(tag + ": left neighbor is not symmetric");
    }
    if (auto r = lane.right_neighbor()) {
      const Lane* other = sc.find_lane(*r);
      if (other == nullptr) fail(tag + ": right neighbor " + std::to_string(*r) + " does not exist");
      if (other->left_neighbor() != lane.id()) fail(tag + ": right neighbor is not symmetric");
    }
  }
  for (const auto& a : sc.agents) {
    const std::string tag = "agent " + std::to_string(a.id);
    if (!(a.length > 0.0) || !(a.width > 0.0)) fail(tag + ": length and width must be > 0");
    if (static_cast<int>(a.poses.size()) < sc.history_steps + 1) {
      fail(tag + ": needs at least history_steps + 1 poses");
    }
  }
  for (const auto& s : sc.signals) {
    const Lane* lane = sc.find_lane(s.lane_id);
    if (lane == nullptr) fail("signal references unknown lane " + std::to_string(s.lane_id));
    if (s.stop_line_s < 0.0 || s.stop_line_s > lane->length()) {
      fail("signal on lane " + std::to_string(s.lane_id) + ": stop_line_s outside lane");
    }
  }
  const Lane* ego_lane = sc.find_lane(sc.ego_lane_id);
  if (ego_lane == nullptr) fail("ego references unknown lane " + std::to_string(sc.ego_lane_id));
  if (std::abs(ego_lane->project(sc.ego_start.position()).d) > 0.5 * ego_lane->width()) {
    fail("ego start lies outside the half-width of its lane");
  }
}

}  // namespace diffplan::world

#endif  // DIFFPLAN_WORLD_HPP_
