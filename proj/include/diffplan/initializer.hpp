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

#ifndef DIFFPLAN_INITIALIZER_HPP_
#define DIFFPLAN_INITIALIZER_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "diffplan/context.hpp"
#include "diffplan/core.hpp"
#include "diffplan/decision.hpp"
#include "diffplan/residuals.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/weights.hpp"
#include "diffplan/world.hpp"

namespace diffplan::init {

// ---------------------------------------------------------------------------
// Agent prediction

namespace detail {

/// Lane an agent is following: inside the half width and heading within 45
/// degrees of the lane direction. Returns nullptr for off-lane agents.
inline const world::Lane* followed_lane(const world::Scenario& sc, const world::AgentPose& pose) {
  const world::Lane* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& lane : sc.lanes) {
    const auto f = lane.project(pose.position());
    if (!(std::abs(f.d) < 0.5 * lane.width())) continue;
    if (std::abs(wrap_angle(pose.heading - lane.heading_at(f.s))) > 0.25 * std::numbers::pi) continue;
    if (f.distance < best_d) {
      best_d = f.distance;
      best = &lane;
    }
  }
  return best;
}

/// Advances one agent with the given per-step speeds (speeds[k] is used for
/// the move from step k to k + 1).
inline AgentPrediction advance(const world::Scenario& sc, const world::AgentPose& pose,
                               const std::vector<double>& speeds, double dt) {
  AgentPrediction p;
  const int horizon = static_cast<int>(speeds.size());
  p.positions.reserve(static_cast<std::size_t>(horizon) + 1);
  p.positions.push_back(pose.position());
  p.headings.push_back(pose.heading);
  p.speeds.push_back(pose.speed);
  const world::Lane* lane = followed_lane(sc, pose);
  if (lane != nullptr) {
    const auto f = lane->project(pose.position());
    double s = f.s;
    for (int k = 0; k < horizon; ++k) {
      s += speeds[static_cast<std::size_t>(k)] * dt;
      p.positions.push_back(lane->to_cartesian(s, f.d));
      p.headings.push_back(lane->heading_at(s));
      p.speeds.push_back(k + 1 < horizon ? speeds[static_cast<std::size_t>(k + 1)] : speeds.back());
    }
  } else {
    const Vec2 dir(std::cos(pose.heading), std::sin(pose.heading));
    Vec2 q = pose.position();
    for (int k = 0; k < horizon; ++k) {
      q += speeds[static_cast<std::size_t>(k)] * dt * dir;
      p.positions.push_back(q);
      p.headings.push_back(pose.heading);
      p.speeds.push_back(k + 1 < horizon ? speeds[static_cast<std::size_t>(k + 1)] : speeds.back());
    }
  }
  return p;
}

}  // namespace detail

/// Every agent keeps its current speed, moving along its lane (keeping its
/// lateral offset) or along its heading when it follows no lane.
inline Prediction constant_velocity_predict(const world::Scenario& sc, int step, int horizon) {
  Prediction out;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    const auto& pose = sc.agent_pose(i, step);
    out.push_back(detail::advance(sc, pose, std::vector<double>(static_cast<std::size_t>(horizon), pose.speed), sc.dt));
  }
  return out;
}

/// Like constant velocity, but extrapolates the acceleration observed over
/// the last second with exponential decay (time constant 1 s); speeds never
/// go negative.
inline Prediction history_predict(const world::Scenario& sc, int step, int horizon) {
  Prediction out;
  const int lookback = std::max(1, static_cast<int>(std::lround(1.0 / sc.dt)));
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    const auto& pose = sc.agent_pose(i, step);
    const auto& past = sc.agent_pose(i, step - lookback);
    const int avail = std::min(lookback, sc.history_steps + step);
    const double accel = avail > 0 ? (pose.speed - past.speed) / (avail * sc.dt) : 0.0;
    std::vector<double> speeds;
    double v = pose.speed;
    double a = accel;
    const double decay = std::exp(-sc.dt);
    for (int k = 0; k < horizon; ++k) {
      speeds.push_back(v);
      v = std::max(0.0, v + a * sc.dt);
      a *= decay;
    }
    out.push_back(detail::advance(sc, pose, speeds, sc.dt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Futures

/// One candidate future: an ego plan keyed to a maneuver together with the
/// shared agent prediction.
struct Future {
  int maneuver = 0;
  std::vector<vehicle::ControlInput> controls;
  std::vector<vehicle::EgoState> ego;
  double score = 0.0;
  decision::Probabilities d{};
};

struct HeuristicParams {
  double lateral_gain = 1.0;
  double max_steer = 0.25;
  double max_accel = 2.0;
  double comfort_decel = 2.0;
  double time_headway = 0.8;
  double min_gap = 2.0;
  /// Stop this far before a red stop line (ego center).
  double stop_margin = 1.0;
  /// Side clearance under which a vehicle ahead counts as a leader.
  double lateral_clearance = 0.8;
  /// Softmax temperature as a fraction of (min coarse cost + 1).
  double temperature = 0.1;
};

namespace detail {

struct Leader {
  double gap = std::numeric_limits<double>::infinity();
  double speed = 0.0;
};

/// Closest obstacle ahead of the ego at lane coordinates (s, d) at prediction
/// step k: predicted vehicles overlapping the ego laterally (with clearance),
/// crossing agents inside the lane, and red stop lines on the lane.
inline Leader leader_at(const world::Scenario& sc, const PlanContext& ctx, const world::Lane& lane, double s,
                        double d, int k, const HeuristicParams& hp) {
  Leader best;
  for (std::size_t i = 0; i < ctx.predictions.size(); ++i) {
    const auto& pred = ctx.predictions[i];
    const Vec2& q = pred.positions[static_cast<std::size_t>(std::min(k, pred.steps()))];
    const auto f = lane.project(q);
    const bool vehicle = sc.agents[i].kind == world::AgentKind::kVehicle;
    const bool blocking =
        vehicle ? std::abs(f.d - d) < 0.5 * (ctx.params.width + sc.agents[i].width) + hp.lateral_clearance
                : std::abs(f.d) < 0.5 * lane.width() + 0.5 * sc.agents[i].width;
    if (!blocking) continue;
    const double gap = f.s - s - 0.5 * (ctx.params.length + sc.agents[i].length);
    if (f.s <= s || gap >= best.gap) continue;
    const bool crossing = sc.agents[i].kind != world::AgentKind::kVehicle;
    best = {gap, crossing ? 0.0 : pred.speeds[static_cast<std::size_t>(std::min(k, pred.steps()))]};
  }
  for (const auto& sig : sc.signals) {
    if (sig.lane_id != lane.id()) continue;
    if (sig.state_at(ctx.replay_step + k) != world::SignalState::kRed) continue;
    if (s > sig.stop_line_s + 0.5) continue;
    const double gap = sig.stop_line_s - hp.stop_margin - s;
    if (gap < best.gap) best = {gap, 0.0};
  }
  return best;
}

inline double idm_accel(double v, double v0, const Leader& lead, const HeuristicParams& hp) {
  double a = hp.max_accel * (1.0 - std::pow(std::max(v, 0.0) / std::max(v0, 0.1), 4));
  if (std::isfinite(lead.gap)) {
    const double gap = std::max(lead.gap, 0.1);
    const double star =
        hp.min_gap + std::max(0.0, v * hp.time_headway + v * (v - lead.speed) / (2.0 * std::sqrt(hp.max_accel * hp.comfort_decel)));
    a -= hp.max_accel * (star / gap) * (star / gap);
  }
  return a;
}

}  // namespace detail

/// Closed-loop rule that steers toward the target lane centerline and follows
/// its speed limit with an intelligent-driver car-following term.
inline std::vector<vehicle::ControlInput> track_lane(const world::Scenario& sc, const PlanContext& ctx,
                                                     const world::Lane& lane, const HeuristicParams& hp) {
  std::vector<vehicle::ControlInput> controls;
  vehicle::EgoState x = ctx.start;
  for (int k = 0; k < ctx.horizon; ++k) {
    const auto f = lane.project(x.position());
    const double heading_err = wrap_angle(x.heading - lane.heading_at(f.s));
    const double steer = std::clamp(-heading_err - std::atan2(hp.lateral_gain * f.d, std::max(x.speed, 0.0) + 1.0),
                                    -hp.max_steer, hp.max_steer);
    const auto lead = detail::leader_at(sc, ctx, lane, f.s, f.d, k, hp);
    const double accel = std::clamp(detail::idm_accel(x.speed, lane.speed_limit(), lead, hp),
                                    -ctx.params.max_accel, hp.max_accel);
    const vehicle::ControlInput u{accel, steer};
    controls.push_back(u);
    x = vehicle::step(x, u, ctx.params);
  }
  return controls;
}

/// Squared residual norm of a control sequence with the decision fixed to a
/// single maneuver.
inline double coarse_cost(const PlanContext& ctx, const std::vector<vehicle::ControlInput>& controls, int alpha,
                          const CostWeights& w) {
  decision::Probabilities onehot{};
  onehot[maneuver_index(alpha)] = 1.0;
  PlanVariables vars{controls, decision::init_decisions(onehot, ctx.available, ctx.horizon)};
  VariableLayout layout{ctx.horizon, true, true, ctx.available};
  return assemble(vars, layout, ctx, w, AssemblyMode::kResiduals).cost;
}

/// Softmax over the available entries; masked entries get zero.
inline decision::Probabilities masked_softmax(const std::array<double, kManeuvers>& logits, const decision::Mask& mask) {
  double top = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kManeuvers; ++k) {
    if (mask[k]) top = std::max(top, logits[k]);
  }
  decision::Probabilities p{};
  double total = 0.0;
  for (int k = 0; k < kManeuvers; ++k) {
    if (!mask[k]) continue;
    p[k] = std::exp(logits[k] - top);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

/// One future per available maneuver; d is a softmax of the negative coarse
/// costs and the scores are uniform.
inline std::vector<Future> heuristic_init(const world::Scenario& sc, const PlanContext& ctx, const CostWeights& w,
                                          const HeuristicParams& hp = {}) {
  std::vector<Future> futures;
  std::array<double, kManeuvers> costs{};
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kManeuvers; ++k) {
    if (!ctx.available[k]) continue;
    Future f;
    f.maneuver = maneuver_of(k);
    f.controls = track_lane(sc, ctx, sc.lane(ctx.maneuvers[k].lane_id), hp);
    f.ego = vehicle::rollout(ctx.start, f.controls, ctx.params).states;
    costs[k] = coarse_cost(ctx, f.controls, f.maneuver, w);
    best = std::min(best, costs[k]);
    futures.push_back(std::move(f));
  }
  const double temp = hp.temperature * (best + 1.0);
  std::array<double, kManeuvers> logits{};
  for (int k = 0; k < kManeuvers; ++k) logits[k] = ctx.available[k] ? -(costs[k] - best) / temp : 0.0;
  const auto d = masked_softmax(logits, ctx.available);
  for (auto& f : futures) {
    f.d = d;
    f.score = 1.0 / static_cast<double>(futures.size());
  }
  return futures;
}

/// Index of the future whose maneuver has the largest d (ties: lane keep,
/// then right).
inline std::size_t dominant_future(const std::vector<Future>& futures) {
  const auto& d = futures.front().d;
  int best = -1;
  for (int idx : {maneuver_index(0), maneuver_index(1), maneuver_index(-1)}) {
    bool present = false;
    for (const auto& f : futures) present = present || maneuver_index(f.maneuver) == idx;
    if (present && (best < 0 || d[idx] > d[best])) best = idx;
  }
  for (std::size_t i = 0; i < futures.size(); ++i) {
    if (maneuver_index(futures[i].maneuver) == best) return i;
  }
  return 0;
}

/// Index of the future closest to the ground truth: sum over ego and agents
/// of the per-step displacement errors.
inline std::size_t select_best_future(const std::vector<std::vector<Vec2>>& ego_futures, const Prediction& agents,
                                      const std::vector<Vec2>& ego_truth, const std::vector<std::vector<Vec2>>& agent_truth) {
  auto track_error = [](const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += (a[i] - b[i]).norm();
    return e;
  };
  double agent_err = 0.0;
  for (std::size_t i = 0; i < agents.size() && i < agent_truth.size(); ++i) {
    agent_err += track_error(agents[i].positions, agent_truth[i]);
  }
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < ego_futures.size(); ++k) {
    const double e = track_error(ego_futures[k], ego_truth) + agent_err;
    if (e < best_err) {
      best_err = e;
      best = k;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Toy learnable initializer

inline constexpr int kNumFeatures = 14;
inline constexpr int kNumToyOutputs = 8;
inline constexpr int kNumToyParams = kNumToyOutputs * (kNumFeatures + 1);
/// Output ranges: 3 decision logits, 3 score logits, acceleration and
/// steering offsets.
inline constexpr std::array<double, kNumToyOutputs> kToyScale = {3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 1.0, 0.05};
inline constexpr double kAbsentGap = 100.0;

using Features = Eigen::Matrix<double, kNumFeatures, 1>;
using ToyParams = Eigen::Matrix<double, kNumToyParams, 1>;
using ToyOutput = Eigen::Matrix<double, kNumToyOutputs, 1>;
using ToyJacobian = Eigen::Matrix<double, kNumToyOutputs, kNumToyParams>;

/// Feature layout: ego speed; lead gap for maneuvers -1, 0, +1; lead speed
/// for -1, 0, +1; neighbor gap for -1, +1; neighbor speed for -1, +1; speed
/// limit for -1, 0, +1. Missing vehicles read as a 100 m gap at the speed
/// limit; unavailable lanes read as zeros.
inline Features scene_features(const world::Scenario& sc, const PlanContext& ctx) {
  Features f = Features::Zero();
  f[0] = ctx.start.speed;
  for (int k = 0; k < kManeuvers; ++k) {
    const auto& m = ctx.maneuvers[k];
    if (!m.available) continue;
    const world::Lane& lane = sc.lane(m.lane_id);
    const double ego_s = lane.project(ctx.start.position()).s;
    auto gap_of = [&](int agent) {
      return lane.project(ctx.predictions[static_cast<std::size_t>(agent)].positions[0]).s - ego_s;
    };
    f[1 + k] = m.lead >= 0 ? gap_of(m.lead) : kAbsentGap;
    f[4 + k] = m.lead >= 0 ? ctx.predictions[static_cast<std::size_t>(m.lead)].speeds[0] : m.speed_limit;
    if (k != maneuver_index(0)) {
      const int j = k == 0 ? 0 : 1;
      f[7 + j] = m.neighbor >= 0 ? -gap_of(m.neighbor) : kAbsentGap;
      f[9 + j] = m.neighbor >= 0 ? ctx.predictions[static_cast<std::size_t>(m.neighbor)].speeds[0] : m.speed_limit;
    }
    f[11 + k] = m.speed_limit;
  }
  return f;
}

/// out_j = scale_j * tanh(W_j . f + c_j), parameters stored row-major as
/// [W_j (14), c_j] per output.
inline ToyOutput toy_forward(const ToyParams& phi, const Features& f, ToyJacobian* jac = nullptr) {
  ToyOutput out;
  if (jac != nullptr) jac->setZero();
  for (int j = 0; j < kNumToyOutputs; ++j) {
    const int base = j * (kNumFeatures + 1);
    const double pre = phi.segment<kNumFeatures>(base).dot(f) + phi[base + kNumFeatures];
    const double th = std::tanh(pre);
    out[j] = kToyScale[j] * th;
    if (jac != nullptr) {
      const double g = kToyScale[j] * (1.0 - th * th);
      jac->block<1, kNumFeatures>(j, base) = g * f.transpose();
      (*jac)(j, base + kNumFeatures) = g;
    }
  }
  return out;
}

inline nlohmann::json toy_to_json(const ToyParams& phi) {
  return {{"schema", "toy-initializer-v1"}, {"phi", std::vector<double>(phi.data(), phi.data() + phi.size())}};
}

inline ToyParams toy_from_json(const nlohmann::json& doc) {
  const nlohmann::json& arr = doc.contains("phi") ? doc.at("phi") : doc;
  const auto v = arr.get<std::vector<double>>();
  if (static_cast<int>(v.size()) != kNumToyParams) {
    throw ParseError("toy parameters: expected " + std::to_string(kNumToyParams) + " values");
  }
  return Eigen::Map<const ToyParams>(v.data());
}

// ---------------------------------------------------------------------------
// Initializer selection

enum class InitializerKind { kHeuristic, kConstantVelocity, kToy };

struct Initializer {
  InitializerKind kind = InitializerKind::kHeuristic;
  ToyParams toy = ToyParams::Zero();
  HeuristicParams heuristic;
};

/// Output of an initializer for one planning instant.
struct InitOutput {
  PlanContext ctx;
  std::vector<Future> futures;
  PlanVariables init;
  /// Toy path only: features and raw outputs for gradient chaining.
  Features features = Features::Zero();
  ToyOutput toy_output = ToyOutput::Zero();
  /// Future whose controls seeded the solver.
  std::size_t seed_future = 0;
};

inline InitOutput initialize(const world::Scenario& sc, int step, const vehicle::EgoState& ego,
                             const Initializer& initializer, const CostWeights& w, const ContextOptions& options) {
  InitOutput out;
  const bool cv = initializer.kind == InitializerKind::kConstantVelocity;
  const Prediction pred =
      cv ? constant_velocity_predict(sc, step, options.horizon) : history_predict(sc, step, options.horizon);
  out.ctx = build_context(sc, step, ego, pred, w, options);
  const PlanContext& ctx = out.ctx;

  if (cv) {
    // Ablation: no learned or heuristic initialization at all.
    const decision::Probabilities uniform{1.0, 1.0, 1.0};
    out.init.controls.assign(static_cast<std::size_t>(ctx.horizon), {0.0, 0.0});
    out.init.decisions = decision::init_decisions(uniform, ctx.available, ctx.horizon);
    for (int k = 0; k < kManeuvers; ++k) {
      if (!ctx.available[k]) continue;
      Future f;
      f.maneuver = maneuver_of(k);
      f.controls = out.init.controls;
      f.ego = vehicle::rollout(ctx.start, f.controls, ctx.params).states;
      f.d = decision::renormalize(uniform, ctx.available);
      out.futures.push_back(std::move(f));
    }
    for (auto& f : out.futures) f.score = 1.0 / static_cast<double>(out.futures.size());
    return out;
  }

  out.futures = heuristic_init(sc, ctx, w, initializer.heuristic);
  if (initializer.kind == InitializerKind::kToy) {
    out.features = scene_features(sc, ctx);
    out.toy_output = toy_forward(initializer.toy, out.features);
    const auto d = masked_softmax({out.toy_output[0], out.toy_output[1], out.toy_output[2]}, ctx.available);
    double score_total = 0.0;
    std::vector<double> scores;
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& f : out.futures) top = std::max(top, out.toy_output[3 + maneuver_index(f.maneuver)]);
    for (const auto& f : out.futures) {
      scores.push_back(std::exp(out.toy_output[3 + maneuver_index(f.maneuver)] - top));
      score_total += scores.back();
    }
    for (std::size_t i = 0; i < out.futures.size(); ++i) {
      auto& f = out.futures[i];
      f.d = d;
      f.score = scores[i] / score_total;
      for (auto& u : f.controls) {
        u.accel += out.toy_output[6];
        u.steer += out.toy_output[7];
      }
      f.ego = vehicle::rollout(ctx.start, f.controls, ctx.params).states;
    }
  }
  out.seed_future = dominant_future(out.futures);
  out.init.controls = out.futures[out.seed_future].controls;
  out.init.decisions = decision::init_decisions(out.futures.front().d, ctx.available, ctx.horizon);
  return out;
}

}  // namespace diffplan::init

#endif  // DIFFPLAN_INITIALIZER_HPP_
