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

#ifndef DIFFPLAN_EVALUATION_HPP_
#define DIFFPLAN_EVALUATION_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffplan/core.hpp"
#include "diffplan/decision.hpp"
#include "diffplan/planner.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/world.hpp"

namespace diffplan::eval {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Geometry

/// Oriented rectangle centred at `center`.
struct Footprint {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> corners() const {
    const Vec2 ax(std::cos(heading), std::sin(heading));
    const Vec2 ay(-ax.y(), ax.x());
    const Vec2 hl = 0.5 * length * ax;
    const Vec2 hw = 0.5 * width * ay;
    return {center + hl + hw, center + hl - hw, center - hl - hw, center - hl + hw};
  }
};

/// Separating-axis overlap test; touching rectangles count as colliding.
inline bool collision_check(const Footprint& a, const Footprint& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes = {Vec2(std::cos(a.heading), std::sin(a.heading)),
                                    Vec2(-std::sin(a.heading), std::cos(a.heading)),
                                    Vec2(std::cos(b.heading), std::sin(b.heading)),
                                    Vec2(-std::sin(b.heading), std::cos(b.heading))};
  for (const auto& axis : axes) {
    double amin = std::numeric_limits<double>::infinity();
    double amax = -amin;
    double bmin = amin;
    double bmax = -amin;
    for (const auto& c : ca) {
      amin = std::min(amin, c.dot(axis));
      amax = std::max(amax, c.dot(axis));
    }
    for (const auto& c : cb) {
      bmin = std::min(bmin, c.dot(axis));
      bmax = std::max(bmax, c.dot(axis));
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

inline bool collision_check(const Footprint& ego, std::span<const Footprint> others) {
  return std::any_of(others.begin(), others.end(), [&](const Footprint& o) { return collision_check(ego, o); });
}

inline Footprint ego_footprint(const vehicle::EgoState& x, const vehicle::VehicleParams& p) {
  return {x.position(), x.heading, p.length, p.width};
}

inline std::vector<Footprint> agent_footprints(const world::Scenario& sc, int step) {
  std::vector<Footprint> out;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    const auto& pose = sc.agent_pose(i, step);
    out.push_back({pose.position(), pose.heading, sc.agents[i].length, sc.agents[i].width});
  }
  return out;
}

inline constexpr double kSafetyIndexCap = 100.0;
inline constexpr double kSafetySpeedFloor = 0.1;

/// Distance to the most relevant agent (nearest ahead within the ego lane
/// corridor, else nearest overall) over max(speed, 0.1 m/s), capped at 100 s.
inline double safety_index(const vehicle::EgoState& ego, std::span<const Footprint> agents,
                           std::span<const world::Lane> lanes) {
  if (agents.empty()) return kSafetyIndexCap;
  const world::Lane* lane = nullptr;
  if (!lanes.empty()) {
    const int id = world::nearest_lane(ego.position(), lanes);
    for (const auto& l : lanes) {
      if (l.id() == id) lane = &l;
    }
  }
  double ahead = std::numeric_limits<double>::infinity();
  double nearest = std::numeric_limits<double>::infinity();
  const double ego_s = lane != nullptr ? lane->project(ego.position()).s : 0.0;
  for (const auto& a : agents) {
    const double dist = (a.center - ego.position()).norm();
    nearest = std::min(nearest, dist);
    if (lane == nullptr) continue;
    const auto f = lane->project(a.center);
    if (std::abs(f.d) < 0.5 * lane->width() && f.s > ego_s) ahead = std::min(ahead, dist);
  }
  const double dist = std::isfinite(ahead) ? ahead : nearest;
  return std::min(kSafetyIndexCap, dist / std::max(ego.speed, kSafetySpeedFloor));
}

/// True when the point lies more than half a lane width outside every lane.
inline bool off_route(const Vec2& p, std::span<const world::Lane> lanes) {
  for (const auto& lane : lanes) {
    if (std::abs(lane.project(p).d) <= lane.width()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Open loop

inline constexpr std::array<int, 3> kErrorSteps = {10, 30, 50};

struct OpenLoopRecord {
  std::string scenario;
  bool solved = false;
  bool converged = false;
  int maneuver = 0;
  /// Position error at 1 s, 3 s and 5 s; only entries within the plan and
  /// the ground truth are meaningful.
  std::array<double, 3> errors{};
  bool collision = false;
  bool off_route = false;
  double mean_abs_accel = 0.0;
  double mean_abs_lat_acc = 0.0;
  std::string failure;
};

inline std::array<double, 3> plan_errors(const vehicle::Trajectory& plan, const std::vector<vehicle::EgoState>& truth,
                                         int offset = 0) {
  std::array<double, 3> e{};
  for (std::size_t i = 0; i < kErrorSteps.size(); ++i) {
    const auto k = static_cast<std::size_t>(kErrorSteps[i]);
    const auto g = static_cast<std::size_t>(offset) + k;
    if (k < plan.states.size() && g < truth.size()) {
      e[i] = (plan.states[k].position() - truth[g].position()).norm();
    } else {
      e[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return e;
}

inline OpenLoopRecord open_loop_eval(const world::Scenario& sc, const Planner& planner) {
  OpenLoopRecord rec;
  rec.scenario = sc.name;
  PlanOutcome out;
  try {
    out = plan(sc, 0, sc.ego_start, planner);
  } catch (const Error& e) {
    rec.failure = e.what();
    return rec;
  }
  const auto& traj = out.result.trajectory;
  rec.solved = true;
  rec.converged = out.result.converged;
  rec.maneuver = out.result.maneuver;
  rec.errors = plan_errors(traj, sc.ego_ground_truth);
  const std::span<const world::Lane> lanes(sc.lanes);
  for (std::size_t k = 1; k < traj.states.size(); ++k) {
    const auto agents = agent_footprints(sc, static_cast<int>(k));
    rec.collision = rec.collision || collision_check(ego_footprint(traj.states[k], sc.ego_params), agents);
    rec.off_route = rec.off_route || off_route(traj.states[k].position(), lanes);
  }
  for (std::size_t k = 0; k < traj.controls.size(); ++k) {
    rec.mean_abs_accel += std::abs(traj.controls[k].accel);
    rec.mean_abs_lat_acc +=
        std::abs(vehicle::lateral_acceleration(traj.states[k].speed, traj.controls[k].steer, sc.ego_params));
  }
  if (!traj.controls.empty()) {
    rec.mean_abs_accel /= static_cast<double>(traj.controls.size());
    rec.mean_abs_lat_acc /= static_cast<double>(traj.controls.size());
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Closed loop

enum class Termination { kCompleted, kCollision, kOffDrivable, kSolverFailure };

inline const char* termination_name(Termination t) {
  switch (t) {
    case Termination::kCompleted:
      return "completed";
    case Termination::kCollision:
      return "collision";
    case Termination::kOffDrivable:
      return "off_drivable";
    case Termination::kSolverFailure:
      return "solver_failure";
  }
  return "completed";
}

inline Termination parse_termination(const std::string& s) {
  if (s == "completed") return Termination::kCompleted;
  if (s == "collision") return Termination::kCollision;
  if (s == "off_drivable") return Termination::kOffDrivable;
  if (s == "solver_failure") return Termination::kSolverFailure;
  throw ParseError("unknown termination '" + s + "'");
}

struct AgentRecord {
  int id = 0;
  world::AgentPose pose;
};

struct EpisodeStep {
  int step = 0;
  /// Ego state at the start of the step; `control` moves it to the next one.
  vehicle::EgoState ego;
  vehicle::ControlInput control;
  int maneuver = 0;
  bool converged = false;
  int iterations = 0;
  double cost = 0.0;
  bool compliant = false;
  int lane_id = 0;
  double progress = 0.0;
  bool off_route = false;
  double safety_index = 0.0;
  double lat_acc = 0.0;
  /// Errors of the plan made at this step against the ground truth (first
  /// step only).
  std::optional<std::array<double, 3>> plan_error;
  std::vector<AgentRecord> agents;
  std::vector<std::pair<int, world::SignalState>> signals;
};

struct EpisodeLog {
  std::string scenario;
  std::string template_name;
  std::string planner;
  int max_steps = 0;
  double dt = 0.1;
  vehicle::VehicleParams ego_params;
  std::vector<EpisodeStep> steps;
  vehicle::EgoState final_ego;
  double final_progress = 0.0;
  Termination termination = Termination::kCompleted;
  std::string failure;
};

inline constexpr int kDefaultEpisodeSteps = 150;

inline EpisodeLog closed_loop_run(const world::Scenario& sc, const Planner& planner,
                                  int max_steps = kDefaultEpisodeSteps) {
  EpisodeLog log;
  log.scenario = sc.name;
  log.template_name = sc.template_name;
  log.planner = planner.name();
  log.max_steps = max_steps;
  log.dt = sc.dt;
  log.ego_params = sc.ego_params;
  const std::span<const world::Lane> lanes(sc.lanes);
  const world::Lane& start_lane = sc.lane(world::nearest_lane(sc.ego_start.position(), lanes));
  const double s0 = start_lane.project(sc.ego_start.position()).s;
  const int steps = std::min(max_steps, sc.replay_steps());

  vehicle::EgoState x = sc.ego_start;
  for (int j = 0; j < steps; ++j) {
    EpisodeStep rec;
    rec.step = j;
    rec.ego = x;
    rec.lane_id = world::nearest_lane(x.position(), lanes);
    rec.progress = start_lane.project(x.position()).s - s0;
    rec.off_route = off_route(x.position(), lanes);
    const auto footprints = agent_footprints(sc, j);
    rec.safety_index = safety_index(x, footprints, lanes);
    for (std::size_t i = 0; i < sc.agents.size(); ++i) rec.agents.push_back({sc.agents[i].id, sc.agent_pose(i, j)});
    for (const auto& sig : sc.signals) rec.signals.emplace_back(sig.lane_id, sig.state_at(j));

    PlanOutcome out;
    try {
      out = plan(sc, j, x, planner);
    } catch (const Error& e) {
      log.termination = Termination::kSolverFailure;
      log.failure = e.what();
      break;
    }
    rec.control = out.result.trajectory.controls.front();
    rec.maneuver = out.result.maneuver;
    rec.converged = out.result.converged;
    rec.iterations = out.result.iterations_used;
    rec.cost = out.result.final_cost();
    rec.compliant = decision::compliance_check(out.result.variables.decisions).compliant;
    rec.lat_acc = vehicle::lateral_acceleration(x.speed, rec.control.steer, sc.ego_params);
    if (j == 0 && !sc.ego_ground_truth.empty()) rec.plan_error = plan_errors(out.result.trajectory, sc.ego_ground_truth);
    log.steps.push_back(std::move(rec));

    x = vehicle::step(x, log.steps.back().control, sc.ego_params);
    if (collision_check(ego_footprint(x, sc.ego_params), agent_footprints(sc, j + 1))) {
      log.termination = Termination::kCollision;
      break;
    }
    if (off_route(x.position(), lanes)) {
      log.termination = Termination::kOffDrivable;
      break;
    }
  }
  log.final_ego = x;
  log.final_progress = start_lane.project(x.position()).s - s0;
  return log;
}

/// Every logged control maps the logged state exactly onto the next one.
inline bool verify_episode(const EpisodeLog& log) {
  for (std::size_t k = 0; k < log.steps.size(); ++k) {
    const auto next = vehicle::step(log.steps[k].ego, log.steps[k].control, log.ego_params);
    const auto& expected = k + 1 < log.steps.size() ? log.steps[k + 1].ego : log.final_ego;
    if (!(next == expected)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// episode-v1 (JSON lines)

namespace detail {

inline json state_json(const vehicle::EgoState& s) { return {s.px, s.py, s.heading, s.speed}; }

inline vehicle::EgoState state_from(const json& j) {
  const auto a = j.get<std::array<double, 4>>();
  return {a[0], a[1], a[2], a[3]};
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

inline std::string episode_to_jsonl(const EpisodeLog& log) {
  std::ostringstream out;
  const auto& p = log.ego_params;
  json header = {{"type", "header"},
                 {"schema", "episode-v1"},
                 {"scenario", log.scenario},
                 {"template", log.template_name},
                 {"planner", log.planner},
                 {"max_steps", log.max_steps},
                 {"dt", log.dt},
                 {"ego_params",
                  {{"wheelbase", p.wheelbase},
                   {"length", p.length},
                   {"width", p.width},
                   {"dt", p.dt},
                   {"max_accel", p.max_accel},
                   {"max_steer", p.max_steer}}}};
  out << header.dump() << '\n';
  for (const auto& s : log.steps) {
    json agents = json::array();
    for (const auto& a : s.agents) agents.push_back({a.id, a.pose.x, a.pose.y, a.pose.heading, a.pose.speed});
    json signals = json::array();
    for (const auto& [lane, st] : s.signals) signals.push_back({lane, st == world::SignalState::kRed ? "red" : "green"});
    json line = {{"type", "step"},
                 {"step", s.step},
                 {"t", s.step * log.dt},
                 {"ego", detail::state_json(s.ego)},
                 {"control", {s.control.accel, s.control.steer}},
                 {"maneuver", s.maneuver},
                 {"converged", s.converged},
                 {"iterations", s.iterations},
                 {"cost", s.cost},
                 {"compliant", s.compliant},
                 {"lane_id", s.lane_id},
                 {"progress", s.progress},
                 {"off_route", s.off_route},
                 {"safety_index", s.safety_index},
                 {"lat_acc", s.lat_acc},
                 {"agents", agents},
                 {"signals", signals}};
    if (s.plan_error) {
      line["plan_error"] = {detail::number_or_null((*s.plan_error)[0]), detail::number_or_null((*s.plan_error)[1]),
                            detail::number_or_null((*s.plan_error)[2])};
    } else {
      line["plan_error"] = nullptr;
    }
    out << line.dump() << '\n';
  }
  json end = {{"type", "end"},
              {"termination", termination_name(log.termination)},
              {"steps", log.steps.size()},
              {"final_ego", detail::state_json(log.final_ego)},
              {"final_progress", log.final_progress}};
  if (!log.failure.empty()) end["failure"] = log.failure;
  out << end.dump() << '\n';
  return out.str();
}

inline EpisodeLog episode_from_jsonl(const std::string& text) {
  EpisodeLog log;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_header = false;
  bool have_end = false;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (j.at("schema") != "episode-v1") throw ParseError("unsupported episode schema");
        log.scenario = j.at("scenario").get<std::string>();
        log.template_name = j.value("template", "");
        log.planner = j.at("planner").get<std::string>();
        log.max_steps = j.at("max_steps").get<int>();
        log.dt = j.at("dt").get<double>();
        const auto& p = j.at("ego_params");
        log.ego_params = {p.at("wheelbase").get<double>(), p.at("length").get<double>(), p.at("width").get<double>(),
                          p.at("dt").get<double>(),        p.at("max_accel").get<double>(),
                          p.at("max_steer").get<double>()};
        have_header = true;
      } else if (type == "step") {
        EpisodeStep s;
        s.step = j.at("step").get<int>();
        s.ego = detail::state_from(j.at("ego"));
        const auto u = j.at("control").get<std::array<double, 2>>();
        s.control = {u[0], u[1]};
        s.maneuver = j.at("maneuver").get<int>();
        s.converged = j.at("converged").get<bool>();
        s.iterations = j.at("iterations").get<int>();
        s.cost = j.at("cost").get<double>();
        s.compliant = j.at("compliant").get<bool>();
        s.lane_id = j.at("lane_id").get<int>();
        s.progress = j.at("progress").get<double>();
        s.off_route = j.at("off_route").get<bool>();
        s.safety_index = j.at("safety_index").get<double>();
        s.lat_acc = j.at("lat_acc").get<double>();
        if (!j.at("plan_error").is_null()) {
          std::array<double, 3> e{};
          for (std::size_t i = 0; i < 3; ++i) {
            const auto& v = j.at("plan_error")[i];
            e[i] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
          }
          s.plan_error = e;
        }
        for (const auto& a : j.at("agents")) {
          s.agents.push_back({a[0].get<int>(), {a[1].get<double>(), a[2].get<double>(), a[3].get<double>(),
                                                a[4].get<double>()}});
        }
        for (const auto& sg : j.at("signals")) {
          s.signals.emplace_back(sg[0].get<int>(),
                                 sg[1] == "red" ? world::SignalState::kRed : world::SignalState::kGreen);
        }
        log.steps.push_back(std::move(s));
      } else if (type == "end") {
        log.termination = parse_termination(j.at("termination").get<std::string>());
        log.final_ego = detail::state_from(j.at("final_ego"));
        log.final_progress = j.at("final_progress").get<double>();
        log.failure = j.value("failure", "");
        have_end = true;
      } else {
        throw ParseError("unknown record type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("episode line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header || !have_end) throw ParseError("episode log is missing its header or end record");
  return log;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  int episodes = 0;
  double collision_rate = 0.0;
  double safety_index = 0.0;
  double progress = 0.0;
  double avg_speed = 0.0;
  double avg_acc = 0.0;
  double avg_lat_acc = 0.0;
  double planning_error_1s = 0.0;
  double planning_error_3s = 0.0;
  double planning_error_5s = 0.0;
  double off_route_rate = 0.0;
  double olc_rate = 0.0;
  double completion_rate = 0.0;
  double convergence_rate = 0.0;
  double compliance_rate = 0.0;
};

/// Steps a non-zero maneuver has to persist to count as a lane change (1 s).
inline int sustained_steps(double dt) { return static_cast<int>(std::lround(1.0 / dt)); }

inline Metrics aggregate_metrics(std::span<const EpisodeLog> logs) {
  if (logs.empty()) throw ValidationError("aggregate_metrics: no episodes");
  Metrics m;
  m.episodes = static_cast<int>(logs.size());
  double collisions = 0;
  double completed = 0;
  double off = 0;
  double olc = 0;
  double solves = 0;
  double converged = 0;
  double compliant = 0;
  std::array<double, 3> err_sum{};
  std::array<double, 3> err_n{};
  for (const auto& log : logs) {
    collisions += log.termination == Termination::kCollision ? 1 : 0;
    completed += log.termination == Termination::kCompleted ? 1 : 0;
    bool any_off = log.termination == Termination::kOffDrivable;
    double si = 0.0;
    double speed = 0.0;
    double acc = 0.0;
    double lat = 0.0;
    int run = 0;
    int prev = 0;
    bool lane_change = false;
    for (const auto& s : log.steps) {
      any_off = any_off || s.off_route;
      si += s.safety_index;
      speed += s.ego.speed;
      acc += std::abs(s.control.accel);
      lat += std::abs(s.lat_acc);
      solves += 1;
      converged += s.converged ? 1 : 0;
      compliant += s.compliant ? 1 : 0;
      run = (s.maneuver != 0 && s.maneuver == prev) ? run + 1 : (s.maneuver != 0 ? 1 : 0);
      prev = s.maneuver;
      lane_change = lane_change || run >= sustained_steps(log.dt);
      if (s.plan_error) {
        for (std::size_t i = 0; i < 3; ++i) {
          if (std::isfinite((*s.plan_error)[i])) {
            err_sum[i] += (*s.plan_error)[i];
            err_n[i] += 1;
          }
        }
      }
    }
    off += any_off ? 1 : 0;
    olc += lane_change ? 1 : 0;
    const double n = std::max<double>(1.0, static_cast<double>(log.steps.size()));
    m.safety_index += si / n;
    m.avg_speed += speed / n;
    m.avg_acc += acc / n;
    m.avg_lat_acc += lat / n;
    m.progress += log.final_progress;
  }
  const double e = m.episodes;
  m.collision_rate = 100.0 * collisions / e;
  m.completion_rate = 100.0 * completed / e;
  m.off_route_rate = 100.0 * off / e;
  m.olc_rate = 100.0 * olc / e;
  m.safety_index /= e;
  m.avg_speed /= e;
  m.avg_acc /= e;
  m.avg_lat_acc /= e;
  m.progress /= e;
  m.convergence_rate = solves > 0 ? 100.0 * converged / solves : 0.0;
  m.compliance_rate = solves > 0 ? 100.0 * compliant / solves : 0.0;
  m.planning_error_1s = err_n[0] > 0 ? err_sum[0] / err_n[0] : 0.0;
  m.planning_error_3s = err_n[1] > 0 ? err_sum[1] / err_n[1] : 0.0;
  m.planning_error_5s = err_n[2] > 0 ? err_sum[2] / err_n[2] : 0.0;
  return m;
}

inline constexpr std::array<const char*, 15> kMetricColumns = {
    "episodes",          "collision_rate",    "safety_index",     "progress",       "avg_speed",
    "avg_acc",           "avg_lat_acc",       "planning_error_1s", "planning_error_3s", "planning_error_5s",
    "off_route_rate",    "olc_rate",          "completion_rate",  "convergence_rate", "compliance_rate"};

inline std::array<double, 15> metric_values(const Metrics& m) {
  return {static_cast<double>(m.episodes), m.collision_rate, m.safety_index, m.progress, m.avg_speed,
          m.avg_acc, m.avg_lat_acc, m.planning_error_1s, m.planning_error_3s, m.planning_error_5s,
          m.off_route_rate, m.olc_rate, m.completion_rate, m.convergence_rate, m.compliance_rate};
}

inline json metrics_to_json(const Metrics& m, const std::string& suite, const std::string& planner) {
  json values = json::object();
  const auto v = metric_values(m);
  for (std::size_t i = 0; i < kMetricColumns.size(); ++i) values[kMetricColumns[i]] = v[i];
  values["episodes"] = m.episodes;
  return {{"schema", "metrics-v1"}, {"suite", suite}, {"planner", planner}, {"metrics", values}};
}

inline std::string metrics_csv(const Metrics& m, const std::string& suite, const std::string& planner) {
  std::ostringstream out;
  out << "suite,planner";
  for (const char* c : kMetricColumns) out << ',' << c;
  out << '\n' << suite << ',' << planner;
  const auto v = metric_values(m);
  out.precision(17);
  for (double x : v) out << ',' << x;
  out << '\n';
  return out.str();
}

}  // namespace diffplan::eval

#endif  // DIFFPLAN_EVALUATION_HPP_
