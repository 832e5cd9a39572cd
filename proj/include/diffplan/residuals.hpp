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

#ifndef DIFFPLAN_RESIDUALS_HPP_
#define DIFFPLAN_RESIDUALS_HPP_

#include <array>
#include <cassert>
#include <cmath>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "diffplan/context.hpp"
#include "diffplan/core.hpp"
#include "diffplan/decision.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/weights.hpp"

namespace diffplan {

// ---------------------------------------------------------------------------
// Row layout of one planning step.

enum Block : int {
  kTrackingBlock,
  kLeadBlock,
  kNeighborBlock,
  kEfficiencyBlock,
  kComfortBlock,
  kCollisionBlock,
  kTrafficBlock,
  kBinaryBlock,
  kEqualityBlock,
  kCoverageBlock,
  kNumBlocks
};

inline constexpr std::array<std::string_view, kNumBlocks> kBlockNames = {
    "tracking", "lead", "neighbor", "efficiency", "comfort",
    "collision", "traffic", "binary", "equality", "coverage"};

inline constexpr std::array<int, kNumBlocks + 1> kBlockOffset = {0, 6, 12, 16, 19, 21, 22, 23, 26, 27, 28};
inline constexpr int kRowsPerStep = kBlockOffset[kNumBlocks];

inline int block_of_row(int row) {
  const int local = row % kRowsPerStep;
  int b = 0;
  while (kBlockOffset[b + 1] <= local) ++b;
  return b;
}

// ---------------------------------------------------------------------------
// Variables

struct PlanVariables {
  /// Raw (unclamped) controls as optimized.
  std::vector<vehicle::ControlInput> controls;
  decision::DecisionVars decisions;

  int horizon() const { return static_cast<int>(controls.size()); }
};

/// Maps plan variables to the flat unknown vector: 2T controls followed by
/// the decision unknowns.
struct VariableLayout {
  int horizon = 0;
  /// One decision row for the whole horizon instead of one per step.
  bool shared_decisions = true;
  /// Drop decision unknowns of unavailable maneuvers.
  bool eliminate_masked = true;
  decision::Mask available{true, true, true};
  /// Hold the decisions at `fixed` instead of optimizing them.
  bool fix_decisions = false;
  std::array<double, kManeuvers> fixed{};

  int decisions_per_row() const {
    if (fix_decisions) return 0;
    return eliminate_masked ? decision::available_count(available) : kManeuvers;
  }
  int decision_rows() const { return shared_decisions ? 1 : horizon; }
  int num_controls() const { return 2 * horizon; }
  int size() const { return num_controls() + decision_rows() * decisions_per_row(); }

  /// Index of b(t, maneuver column k), or -1 when it is not an unknown.
  int index(int t, int k) const {
    if (fix_decisions || (eliminate_masked && !available[k])) return -1;
    int slot = 0;
    for (int j = 0; j < k; ++j) slot += (!eliminate_masked || available[j]) ? 1 : 0;
    const int row = shared_decisions ? 0 : t;
    return num_controls() + row * decisions_per_row() + slot;
  }
};

inline Eigen::VectorXd pack(const PlanVariables& vars, const VariableLayout& layout) {
  assert(vars.horizon() == layout.horizon);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.size());
  for (int t = 0; t < layout.horizon; ++t) {
    theta[2 * t] = vars.controls[static_cast<std::size_t>(t)].accel;
    theta[2 * t + 1] = vars.controls[static_cast<std::size_t>(t)].steer;
  }
  const auto& b = vars.decisions.b;
  for (int k = 0; k < kManeuvers; ++k) {
    if (layout.shared_decisions) {
      const int idx = layout.index(0, k);
      if (idx >= 0) theta[idx] = layout.available[k] ? b.col(k).mean() : 0.0;
    } else {
      for (int t = 0; t < layout.horizon; ++t) {
        const int idx = layout.index(t, k);
        if (idx >= 0) theta[idx] = layout.available[k] ? b(t, k) : 0.0;
      }
    }
  }
  return theta;
}

inline PlanVariables unpack(const Eigen::VectorXd& theta, const VariableLayout& layout) {
  PlanVariables vars;
  vars.controls.resize(static_cast<std::size_t>(layout.horizon));
  for (int t = 0; t < layout.horizon; ++t) {
    vars.controls[static_cast<std::size_t>(t)] = {theta[2 * t], theta[2 * t + 1]};
  }
  vars.decisions.available = layout.available;
  vars.decisions.b = decision::DecisionMatrix::Zero(layout.horizon, kManeuvers);
  for (int t = 0; t < layout.horizon; ++t) {
    for (int k = 0; k < kManeuvers; ++k) {
      const int idx = layout.index(t, k);
      if (idx >= 0 && layout.available[k]) vars.decisions.b(t, k) = theta[idx];
      if (layout.fix_decisions && layout.available[k]) vars.decisions.b(t, k) = layout.fixed[k];
    }
  }
  return vars;
}

// ---------------------------------------------------------------------------
// Per-step residuals

template <typename S>
using SqrtWeights = std::array<S, kNumWeights>;

inline SqrtWeights<double> sqrt_weights(const CostWeights& cw) {
  SqrtWeights<double> sw;
  for (int i = 0; i < kNumWeights; ++i) sw[i] = std::sqrt(cw[i]);
  return sw;
}

/// Per-agent position offsets added to the predictions, one column per step
/// (column t applies at prediction step t + 1). Used to differentiate with
/// respect to predicted positions.
template <typename S>
using AgentOffsets = std::vector<Eigen::Matrix<S, 2, Eigen::Dynamic>>;

template <typename S>
struct StepRows {
  Eigen::Matrix<S, kRowsPerStep, 1> r;
  Eigen::Matrix<S, kRowsPerStep, 4> dx;
  Eigen::Matrix<S, kRowsPerStep, 2> du;
  Eigen::Matrix<S, kRowsPerStep, kManeuvers> db;

  void set_zero() {
    r.setConstant(S(0.0));
    dx.setConstant(S(0.0));
    du.setConstant(S(0.0));
    db.setConstant(S(0.0));
  }
};

template <typename S>
struct DecisionFactor {
  S value;
  S slope;
};

inline constexpr double kDecisionFloor = 1e-6;

/// sqrt(clip(b, 0, 1)) and the slope used in the Jacobian: the derivative at
/// max(b, 1e-6) up to one, zero above. Below zero the value is clipped but the
/// floor slope is kept, so a maneuver that left the feasible range still
/// resists taking mass from the others.
template <typename S>
inline DecisionFactor<S> decision_factor(const S& b) {
  using std::sqrt;
  const double v = value_of(b);
  if (v < 0.0) return {S(0.0), S(0.5 / std::sqrt(kDecisionFloor))};
  if (v > 1.0) return {S(1.0), S(0.0)};
  if (v >= kDecisionFloor) {
    const S root = sqrt(b);
    return {root, S(0.5) / root};
  }
  // The value keeps its exact tangent; only the Jacobian slope is floored.
  return {v > 0.0 ? S(sqrt(b)) : S(0.0), S(0.5 / std::sqrt(kDecisionFloor))};
}

namespace detail {

/// Euclidean norm whose tangent is zero (instead of NaN) at the origin.
template <typename S>
inline S safe_norm(const S& x, const S& y) {
  using std::sqrt;
  const S sq = x * x + y * y;
  return value_of(sq) > 0.0 ? S(sqrt(sq)) : S(0.0);
}

template <typename S>
inline Eigen::Matrix<S, 2, 1> agent_position(const PlanContext& ctx, int agent, int t,
                                             const AgentOffsets<S>* offsets) {
  const Vec2& q = ctx.predictions[static_cast<std::size_t>(agent)].positions[static_cast<std::size_t>(t + 1)];
  Eigen::Matrix<S, 2, 1> out(S(q.x()), S(q.y()));
  if (offsets != nullptr) out += (*offsets)[static_cast<std::size_t>(agent)].col(t);
  return out;
}

/// Inverse-distance term sw * f / sqrt(dd^2 + eps^2) with dd = |p - q| - l.
template <typename S>
inline void inverse_distance_row(StepRows<S>& rows, int row, int k, const Eigen::Matrix<S, 2, 1>& p,
                                 const Eigen::Matrix<S, 2, 1>& q, const S& sw, const DecisionFactor<S>& f,
                                 double ego_length, double eps) {
  using std::sqrt;
  const Eigen::Matrix<S, 2, 1> diff = p - q;
  const S norm = safe_norm(diff[0], diff[1]);
  const S dd = norm - ego_length;
  const S den2 = dd * dd + eps * eps;
  const S den = sqrt(den2);
  rows.r[row] = sw * f.value / den;
  rows.db(row, k) = sw * f.slope / den;
  if (value_of(norm) > 0.0) {
    const S scale = -sw * f.value * dd / (den2 * den) / norm;
    rows.dx(row, 0) = scale * diff[0];
    rows.dx(row, 1) = scale * diff[1];
  }
}

}  // namespace detail

/// Residual rows of step t, evaluated at the state x reached after applying
/// the raw control (accel, steer); b holds b(t, .) with masked entries zero.
template <typename S>
inline void evaluate_step(int t, const vehicle::StateVec<S>& x, const S& accel, const S& steer,
                          const std::array<S, kManeuvers>& b, const PlanContext& ctx, const SqrtWeights<S>& sw,
                          double eps_num, const AgentOffsets<S>* offsets, StepRows<S>& rows) {
  using std::sqrt;
  rows.set_zero();
  const Eigen::Matrix<S, 2, 1> p(x[0], x[1]);
  const S& v = x[3];
  const double ego_length = ctx.params.length;

  std::array<DecisionFactor<S>, kManeuvers> f;
  for (int k = 0; k < kManeuvers; ++k) f[k] = decision_factor(b[k]);

  for (int k = 0; k < kManeuvers; ++k) {
    const ManeuverContext& m = ctx.maneuvers[k];
    if (!m.available) continue;
    const int alpha = maneuver_of(k);

    // Tracking.
    {
      const Vec2& ref = m.reference[static_cast<std::size_t>(t)];
      const S ex = x[0] - ref.x();
      const S ey = x[1] - ref.y();
      const int row = kBlockOffset[kTrackingBlock] + 2 * k;
      rows.r[row] = sw[kTrackX] * f[k].value * ex;
      rows.dx(row, 0) = sw[kTrackX] * f[k].value;
      rows.db(row, k) = sw[kTrackX] * f[k].slope * ex;
      rows.r[row + 1] = sw[kTrackY] * f[k].value * ey;
      rows.dx(row + 1, 1) = sw[kTrackY] * f[k].value;
      rows.db(row + 1, k) = sw[kTrackY] * f[k].slope * ey;
    }

    // Leading vehicle.
    if (m.lead >= 0) {
      const int row = kBlockOffset[kLeadBlock] + 2 * k;
      const double v_lead = ctx.predictions[static_cast<std::size_t>(m.lead)].speeds[static_cast<std::size_t>(t + 1)];
      if (v_lead < value_of(v)) {
        const S dv = v_lead - v;
        rows.r[row] = sw[kLvVelocity] * f[k].value * dv;
        rows.dx(row, 3) = -sw[kLvVelocity] * f[k].value;
        rows.db(row, k) = sw[kLvVelocity] * f[k].slope * dv;
      }
      const auto q = detail::agent_position(ctx, m.lead, t, offsets);
      detail::inverse_distance_row(rows, row + 1, k, p, q, sw[kLvDistance], f[k], ego_length, eps_num);
    }

    // Neighbor vehicle approaching from behind.
    if (alpha != 0 && m.neighbor >= 0) {
      const int row = kBlockOffset[kNeighborBlock] + (alpha < 0 ? 0 : 2);
      const double v_nb =
          ctx.predictions[static_cast<std::size_t>(m.neighbor)].speeds[static_cast<std::size_t>(t + 1)];
      if (v_nb > value_of(v)) {
        const S dv = v_nb - v;
        rows.r[row] = sw[kNvVelocity] * f[k].value * dv;
        rows.dx(row, 3) = -sw[kNvVelocity] * f[k].value;
        rows.db(row, k) = sw[kNvVelocity] * f[k].slope * dv;
      }
      const auto q = detail::agent_position(ctx, m.neighbor, t, offsets);
      detail::inverse_distance_row(rows, row + 1, k, p, q, sw[kNvDistance], f[k], ego_length, eps_num);
    }

    // Efficiency.
    {
      const int row = kBlockOffset[kEfficiencyBlock] + k;
      const S dv = v - m.speed_target[static_cast<std::size_t>(t)];
      rows.r[row] = sw[kVelocity] * f[k].value * dv;
      rows.dx(row, 3) = sw[kVelocity] * f[k].value;
      rows.db(row, k) = sw[kVelocity] * f[k].slope * dv;
    }
  }

  // Comfort on the raw controls.
  {
    const int row = kBlockOffset[kComfortBlock];
    rows.r[row] = sw[kComfortAccel] * accel;
    rows.du(row, 0) = sw[kComfortAccel];
    rows.r[row + 1] = sw[kComfortSteer] * steer;
    rows.du(row + 1, 1) = sw[kComfortSteer];
  }

  // Collision: hinge on the worst threshold violation.
  {
    const int row = kBlockOffset[kCollisionBlock];
    double worst = 0.0;
    S viol_best(0.0);
    Eigen::Matrix<S, 2, 1> grad(S(0.0), S(0.0));
    for (const auto& c : ctx.colliders) {
      const auto q = detail::agent_position(ctx, c.agent, t, offsets);
      const Vec2& tan = c.tangent[static_cast<std::size_t>(t)];
      const Vec2& nor = c.normal[static_cast<std::size_t>(t)];
      const S dx = p[0] - q[0];
      const S dy = p[1] - q[1];
      const S lon = dx * tan.x() + dy * tan.y();
      const S lat = dx * nor.x() + dy * nor.y();
      const double rho = c.lateral_scale;
      const S scaled_lat = rho * lat;
      const S dist = detail::safe_norm(lon, scaled_lat);
      const S viol = c.threshold - dist;
      if (value_of(viol) > worst) {
        worst = value_of(viol);
        viol_best = viol;
        if (value_of(dist) > 0.0) {
          grad[0] = -(lon * tan.x() + rho * scaled_lat * nor.x()) / dist;
          grad[1] = -(lon * tan.y() + rho * scaled_lat * nor.y()) / dist;
        } else {
          grad.setConstant(S(0.0));
        }
      }
    }
    if (worst > 0.0) {
      rows.r[row] = sw[kSafety] * viol_best;
      rows.dx(row, 0) = sw[kSafety] * grad[0];
      rows.dx(row, 1) = sw[kSafety] * grad[1];
    }
  }

  // Red signal: the position one step ahead at current speed must not pass
  // the stop line.
  {
    const int row = kBlockOffset[kTrafficBlock];
    double worst = 0.0;
    for (const auto& stop : ctx.stops) {
      if (!stop.red[static_cast<std::size_t>(t)]) continue;
      const S viol = (p[0] - stop.point.x()) * stop.tangent.x() + (p[1] - stop.point.y()) * stop.tangent.y() +
                     v * ctx.params.dt;
      if (value_of(viol) > worst) {
        worst = value_of(viol);
        rows.r[row] = sw[kStop] * viol;
        rows.dx(row, 0) = sw[kStop] * stop.tangent.x();
        rows.dx(row, 1) = sw[kStop] * stop.tangent.y();
        rows.dx(row, 2) = S(0.0);
        rows.dx(row, 3) = sw[kStop] * ctx.params.dt;
      }
    }
  }

  // Decision penalties.
  S sum(0.0);
  for (int k = 0; k < kManeuvers; ++k) {
    if (!ctx.available[k]) continue;
    sum += b[k];
    const S h = b[k] * (b[k] - 1.0);
    if (value_of(h) > 0.0) {
      const int row = kBlockOffset[kBinaryBlock] + k;
      rows.r[row] = sw[kBinary] * h;
      rows.db(row, k) = sw[kBinary] * (2.0 * b[k] - 1.0);
    }
  }
  // The two one-sided rows together equal the squared sum violation; the
  // upper one owns the kink so the sum stays constrained at exactly one.
  const double excess = value_of(sum) - 1.0;
  if (excess >= 0.0) {
    const int row = kBlockOffset[kEqualityBlock];
    rows.r[row] = sw[kEquality] * (sum - 1.0);
    for (int k = 0; k < kManeuvers; ++k) {
      if (ctx.available[k]) rows.db(row, k) = sw[kEquality];
    }
  } else if (excess < 0.0) {
    const int row = kBlockOffset[kCoverageBlock];
    rows.r[row] = sw[kEquality] * (1.0 - sum);
    for (int k = 0; k < kManeuvers; ++k) {
      if (ctx.available[k]) rows.db(row, k) = -sw[kEquality];
    }
  }
}

// ---------------------------------------------------------------------------
// Assembly over the horizon

enum class AssemblyMode {
  kResiduals,  // r and states only
  kJacobian,   // plus the dense Jacobian
  kNormal,     // plus J^T J and J^T r, accumulated without storing J
};

template <typename S>
struct Assembly {
  VectorX<S> residuals;
  MatrixX<S> jacobian;
  MatrixX<S> normal;
  VectorX<S> gradient;
  std::vector<vehicle::StateVec<S>> states;
  /// Clamped controls actually applied.
  std::vector<std::array<S, 2>> applied;
  std::array<double, kNumBlocks> block_cost{};
  S cost = S(0.0);
  /// Block holding the first non-finite residual, or -1.
  int nonfinite_block = -1;
};

template <typename S>
inline Assembly<S> assemble(const VectorX<S>& theta, const VariableLayout& layout, const PlanContext& ctx,
                            const SqrtWeights<S>& sw, double eps_num, AssemblyMode mode,
                            const AgentOffsets<S>* offsets = nullptr) {
  const int horizon = layout.horizon;
  const int n = layout.size();
  const int nu = layout.num_controls();
  const int nb = n - nu;
  assert(theta.size() == n);
  assert(horizon == ctx.horizon);

  Assembly<S> out;
  out.residuals.resize(static_cast<Eigen::Index>(horizon) * kRowsPerStep);
  if (mode == AssemblyMode::kJacobian) out.jacobian = MatrixX<S>::Constant(out.residuals.size(), n, S(0.0));
  if (mode == AssemblyMode::kNormal) {
    out.normal = MatrixX<S>::Constant(n, n, S(0.0));
    out.gradient = VectorX<S>::Constant(n, S(0.0));
  }
  out.states.reserve(static_cast<std::size_t>(horizon) + 1);
  out.applied.reserve(static_cast<std::size_t>(horizon));

  vehicle::StateVec<S> x = vehicle::to_vec<S>(ctx.start);
  out.states.push_back(x);
  const bool need_jac = mode != AssemblyMode::kResiduals;
  // State sensitivity to the controls: column 2k + j is d x / d u_j(k).
  Eigen::Matrix<S, 4, Eigen::Dynamic> sens;
  if (need_jac) sens = Eigen::Matrix<S, 4, Eigen::Dynamic>::Constant(4, nu, S(0.0));
  Eigen::Matrix<S, kRowsPerStep, Eigen::Dynamic> row_u;
  Eigen::Matrix<S, kRowsPerStep, Eigen::Dynamic> row_b;
  if (need_jac) row_b.resize(kRowsPerStep, nb);

  StepRows<S> rows;
  for (int t = 0; t < horizon; ++t) {
    const S& a_raw = theta[2 * t];
    const S& d_raw = theta[2 * t + 1];
    const auto c = vehicle::clamp_control<S>(a_raw, d_raw, ctx.params);
    out.applied.push_back({c.accel, c.steer});
    const int k_cols = 2 * t + 2;
    if (need_jac) {
      const auto jac = vehicle::step_jacobians<S>(x, c, ctx.params);
      if (t > 0) {
        const Eigen::Matrix<S, 4, Eigen::Dynamic> prev = sens.leftCols(2 * t);
        sens.leftCols(2 * t).noalias() = jac.wrt_state * prev;
      }
      sens.middleCols(2 * t, 2) = jac.wrt_control;
    }
    x = vehicle::step_clamped<S>(x, c.accel, c.steer, ctx.params);
    out.states.push_back(x);

    std::array<S, kManeuvers> b_row;
    for (int k = 0; k < kManeuvers; ++k) {
      const int idx = layout.index(t, k);
      if (!ctx.available[k]) {
        b_row[k] = S(0.0);
      } else if (idx >= 0) {
        b_row[k] = theta[idx];
      } else {
        b_row[k] = S(layout.fix_decisions ? layout.fixed[k] : 0.0);
      }
    }
    evaluate_step<S>(t, x, a_raw, d_raw, b_row, ctx, sw, eps_num, offsets, rows);

    const Eigen::Index r0 = static_cast<Eigen::Index>(t) * kRowsPerStep;
    out.residuals.segment(r0, kRowsPerStep) = rows.r;
    for (int i = 0; i < kRowsPerStep; ++i) {
      const double rv = value_of(rows.r[i]);
      if (!std::isfinite(rv)) {
        if (out.nonfinite_block < 0) out.nonfinite_block = block_of_row(i);
        continue;
      }
      out.block_cost[static_cast<std::size_t>(block_of_row(i))] += rv * rv;
    }
    if (!need_jac) continue;

    row_u.noalias() = rows.dx * sens.leftCols(k_cols);
    row_u.col(2 * t) += rows.du.col(0);
    row_u.col(2 * t + 1) += rows.du.col(1);
    row_b.setConstant(S(0.0));
    for (int k = 0; k < kManeuvers; ++k) {
      const int idx = layout.index(t, k);
      if (idx >= 0 && ctx.available[k]) row_b.col(idx - nu) += rows.db.col(k);
    }

    if (mode == AssemblyMode::kJacobian) {
      out.jacobian.block(r0, 0, kRowsPerStep, k_cols) = row_u;
      out.jacobian.block(r0, nu, kRowsPerStep, nb) = row_b;
    } else {
      out.normal.topLeftCorner(k_cols, k_cols).noalias() += row_u.transpose() * row_u;
      out.normal.block(0, nu, k_cols, nb).noalias() += row_u.transpose() * row_b;
      out.normal.bottomRightCorner(nb, nb).noalias() += row_b.transpose() * row_b;
      out.gradient.head(k_cols).noalias() += row_u.transpose() * rows.r;
      out.gradient.tail(nb).noalias() += row_b.transpose() * rows.r;
    }
  }
  if (mode == AssemblyMode::kNormal) {
    out.normal.block(nu, 0, nb, nu) = out.normal.block(0, nu, nu, nb).transpose();
  }
  out.cost = out.residuals.squaredNorm();
  return out;
}

/// Convenience overload on plain plan variables.
inline Assembly<double> assemble(const PlanVariables& vars, const VariableLayout& layout, const PlanContext& ctx,
                                 const CostWeights& weights, AssemblyMode mode = AssemblyMode::kJacobian) {
  return assemble<double>(pack(vars, layout), layout, ctx, sqrt_weights(weights), weights.eps_num, mode);
}

}  // namespace diffplan

#endif  // DIFFPLAN_RESIDUALS_HPP_
