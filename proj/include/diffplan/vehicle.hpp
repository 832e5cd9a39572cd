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

#ifndef DIFFPLAN_VEHICLE_HPP_
#define DIFFPLAN_VEHICLE_HPP_

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "diffplan/core.hpp"

namespace diffplan::vehicle {

struct VehicleParams {
  double wheelbase = 2.8;
  double length = 5.0;
  double width = 2.0;
  double dt = 0.1;
  double max_accel = 5.0;
  double max_steer = 0.6;

  bool valid() const {
    return wheelbase > 0 && length > 0 && width > 0 && dt > 0 && max_accel > 0 && max_steer > 0;
  }
};

/// Kinematic state (p_x, p_y, heading, speed). Heading is kept unwrapped and
/// speed may go negative; neither is projected here.
struct EgoState {
  double px = 0.0;
  double py = 0.0;
  double heading = 0.0;
  double speed = 0.0;

  Vec2 position() const { return {px, py}; }
  bool operator==(const EgoState&) const = default;
};

struct ControlInput {
  double accel = 0.0;
  double steer = 0.0;

  bool operator==(const ControlInput&) const = default;
};

/// states.size() == controls.size() + 1 and states[k + 1] == step(states[k], controls[k]).
struct Trajectory {
  std::vector<EgoState> states;
  std::vector<ControlInput> controls;
};

template <typename S>
using StateVec = Eigen::Matrix<S, 4, 1>;

template <typename S>
inline StateVec<S> to_vec(const EgoState& x) {
  return StateVec<S>(S(x.px), S(x.py), S(x.heading), S(x.speed));
}

inline EgoState to_state(const StateVec<double>& v) { return {v[0], v[1], v[2], v[3]}; }

/// Projection of a raw control onto the admissible box. `interior[i]` is false
/// when component i sits on or beyond its bound, in which case the clamped
/// value is a constant and carries no derivative.
template <typename S>
struct ClampedControl {
  S accel;
  S steer;
  std::array<bool, 2> interior{true, true};
};

template <typename S>
inline ClampedControl<S> clamp_control(const S& accel, const S& steer, const VehicleParams& p) {
  ClampedControl<S> c{accel, steer, {true, true}};
  if (std::abs(value_of(accel)) >= p.max_accel) {
    c.accel = S(std::copysign(p.max_accel, value_of(accel)));
    c.interior[0] = false;
  }
  if (std::abs(value_of(steer)) >= p.max_steer) {
    c.steer = S(std::copysign(p.max_steer, value_of(steer)));
    c.interior[1] = false;
  }
  return c;
}

inline ControlInput clamp_control(const ControlInput& u, const VehicleParams& p) {
  const auto c = clamp_control<double>(u.accel, u.steer, p);
  return {c.accel, c.steer};
}

/// Discrete kinematic bicycle update with already-clamped controls.
template <typename S>
inline StateVec<S> step_clamped(const StateVec<S>& x, const S& accel, const S& steer,
                                const VehicleParams& p) {
  using std::cos;
  using std::sin;
  using std::tan;
  const S& heading = x[2];
  const S& v = x[3];
  StateVec<S> out;
  out[0] = x[0] + v * cos(heading) * p.dt;
  out[1] = x[1] + v * sin(heading) * p.dt;
  out[2] = heading + v / p.wheelbase * tan(steer) * p.dt;
  out[3] = v + accel * p.dt;
  return out;
}

inline EgoState step(const EgoState& x, const ControlInput& u, const VehicleParams& p) {
  const auto c = clamp_control<double>(u.accel, u.steer, p);
  return to_state(step_clamped<double>(to_vec<double>(x), c.accel, c.steer, p));
}

template <typename S>
struct StepJacobians {
  Eigen::Matrix<S, 4, 4> wrt_state;
  Eigen::Matrix<S, 4, 2> wrt_control;
};

/// Analytic partials of the step map at (x, clamp(u)). Control columns are
/// zero for components pinned at their bound.
template <typename S>
inline StepJacobians<S> step_jacobians(const StateVec<S>& x, const ClampedControl<S>& u,
                                       const VehicleParams& p) {
  using std::cos;
  using std::sin;
  using std::tan;
  const S c = cos(x[2]);
  const S s = sin(x[2]);
  const S& v = x[3];
  const S tan_steer = tan(u.steer);

  StepJacobians<S> j;
  j.wrt_state.setIdentity();
  j.wrt_state(0, 2) = -v * s * p.dt;
  j.wrt_state(0, 3) = c * p.dt;
  j.wrt_state(1, 2) = v * c * p.dt;
  j.wrt_state(1, 3) = s * p.dt;
  j.wrt_state(2, 3) = tan_steer * p.dt / p.wheelbase;

  j.wrt_control.setZero();
  if (u.interior[0]) j.wrt_control(3, 0) = S(p.dt);
  if (u.interior[1]) {
    const S cos_steer = cos(u.steer);
    j.wrt_control(2, 1) = v / p.wheelbase / (cos_steer * cos_steer) * p.dt;
  }
  return j;
}

inline StepJacobians<double> step_jacobians(const EgoState& x, const ControlInput& u,
                                            const VehicleParams& p) {
  return step_jacobians<double>(to_vec<double>(x), clamp_control<double>(u.accel, u.steer, p), p);
}

/// Rolls the dynamics forward from x0. The stored controls are the clamped
/// ones actually applied.
inline Trajectory rollout(const EgoState& x0, std::span<const ControlInput> controls,
                          const VehicleParams& p) {
  Trajectory traj;
  traj.states.reserve(controls.size() + 1);
  traj.controls.reserve(controls.size());
  traj.states.push_back(x0);
  for (const auto& u : controls) {
    const ControlInput applied = clamp_control(u, p);
    traj.controls.push_back(applied);
    traj.states.push_back(step(traj.states.back(), applied, p));
  }
  return traj;
}

/// True when every consecutive pair satisfies the step recurrence bit-exactly.
inline bool verify_trajectory(const Trajectory& traj, const VehicleParams& p) {
  if (traj.states.size() != traj.controls.size() + 1) return false;
  for (std::size_t k = 0; k < traj.controls.size(); ++k) {
    if (!(step(traj.states[k], traj.controls[k], p) == traj.states[k + 1])) return false;
  }
  return true;
}

/// Lateral acceleration of the bicycle model, v^2 tan(delta) / L.
inline double lateral_acceleration(double speed, double steer, const VehicleParams& p) {
  return speed * speed * std::tan(steer) / p.wheelbase;
}

}  // namespace diffplan::vehicle

#endif  // DIFFPLAN_VEHICLE_HPP_
