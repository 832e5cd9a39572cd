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

#ifndef DIFFPLAN_SOLVER_HPP_
#define DIFFPLAN_SOLVER_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "diffplan/context.hpp"
#include "diffplan/core.hpp"
#include "diffplan/decision.hpp"
#include "diffplan/residuals.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/weights.hpp"

namespace diffplan {

enum class SolverMode { kTraining, kInference };

struct SolverConfig {
  double beta = 0.5;
  int max_iters = 10;
  /// Convergence when the infinity norm of the applied update drops below.
  double step_tol = 1e-3;
  double mu = 1e-4;
  int max_retries = 5;
  bool shared_decisions = true;
  bool eliminate_masked = true;
  /// Run all max_iters iterations even after the tolerance is met.
  bool force_iterations = false;
  /// Keep the initial decisions fixed and optimize the controls only.
  bool fix_decisions = false;

  static SolverConfig training() {
    SolverConfig c;
    c.beta = 0.4;
    c.max_iters = 2;
    return c;
  }
  static SolverConfig inference() { return {}; }
  static SolverConfig for_mode(SolverMode mode) {
    return mode == SolverMode::kTraining ? training() : inference();
  }

  void validate() const {
    if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("solver beta must lie in (0, 1]");
    if (max_iters < 0) throw ValidationError("solver max_iters must be >= 0");
    if (!(step_tol >= 0.0)) throw ValidationError("solver step_tol must be >= 0");
    if (!(mu >= 0.0)) throw ValidationError("solver mu must be >= 0");
    if (max_retries < 0) throw ValidationError("solver max_retries must be >= 0");
  }

  VariableLayout layout(const decision::DecisionVars& init) const {
    VariableLayout l{init.horizon(), shared_decisions, eliminate_masked, init.available};
    if (fix_decisions) {
      l.fix_decisions = true;
      for (int k = 0; k < kManeuvers; ++k) l.fixed[k] = init.available[k] ? init.b.col(k).mean() : 0.0;
    }
    return l;
  }
};

struct SolveResult {
  PlanVariables variables;
  vehicle::Trajectory trajectory;
  int maneuver = 0;
  double initial_cost = 0.0;
  /// Cost after each executed iteration.
  std::vector<double> cost_trace;
  bool converged = false;
  int iterations_used = 0;
  std::array<double, kNumBlocks> block_cost{};
  /// Damping actually used per iteration (after any retries).
  std::vector<double> damping;

  double final_cost() const { return cost_trace.empty() ? initial_cost : cost_trace.back(); }
};

// ---------------------------------------------------------------------------
// Gauss-Newton core, generic over the scalar so that the same iterations can
// be replayed with dual numbers.

template <typename S>
struct GaussNewtonRun {
  VectorX<S> theta;
  S initial_cost = S(0.0);
  std::vector<S> costs;
  bool converged = false;
  std::vector<double> damping;
  Assembly<S> final;
};

namespace detail {

inline std::string nonfinite_message(int block, const char* where) {
  return std::string("non-finite residual in block '") + std::string(kBlockNames[static_cast<std::size_t>(block)]) +
         "' " + where;
}

template <typename S>
inline bool all_finite(const VectorX<S>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(value_of(v[i]))) return false;
  }
  return true;
}

inline bool solve_spd(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, Eigen::VectorXd& x) {
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success) return false;
  x = llt.solve(g);
  return true;
}

/// Dual-number variant. The factorization runs on the values and each
/// tangent is solved separately from d(Hx) = dg. Eigen's triangular solvers
/// skip right-hand-side entries that compare equal to zero, which for jets
/// would drop tangents riding on a zero value.
template <int N>
inline bool solve_spd(const MatrixX<ceres::Jet<double, N>>& h, const VectorX<ceres::Jet<double, N>>& g,
                      VectorX<ceres::Jet<double, N>>& x) {
  const Eigen::Index n = h.rows();
  Eigen::MatrixXd hv(n, n);
  Eigen::VectorXd gv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    gv[i] = g[i].a;
    for (Eigen::Index j = 0; j < n; ++j) hv(i, j) = h(i, j).a;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(hv);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd xv = llt.solve(gv);
  Eigen::MatrixXd rhs(n, N);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < N; ++k) {
      double acc = g[i].v[k];
      for (Eigen::Index j = 0; j < n; ++j) acc -= h(i, j).v[k] * xv[j];
      rhs(i, k) = acc;
    }
  }
  const Eigen::MatrixXd dx = llt.solve(rhs);
  x.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = ceres::Jet<double, N>(xv[i]);
    x[i].v = dx.row(i).transpose();
  }
  return true;
}

}  // namespace detail

/// Runs damped Gauss-Newton from theta. When `replay` is given, exactly that
/// many iterations are executed with the listed damping values.
template <typename S>
inline GaussNewtonRun<S> gauss_newton(VectorX<S> theta, const VariableLayout& layout, const PlanContext& ctx,
                                      const SqrtWeights<S>& sw, double eps_num, const SolverConfig& config,
                                      const AgentOffsets<S>* offsets = nullptr,
                                      const std::vector<double>* replay = nullptr) {
  config.validate();
  const int n = layout.size();
  const int iterations = replay != nullptr ? static_cast<int>(replay->size()) : config.max_iters;
  const bool run_all = replay != nullptr || config.force_iterations;

  GaussNewtonRun<S> run;
  Assembly<S> a = assemble<S>(theta, layout, ctx, sw, eps_num,
                              iterations > 0 ? AssemblyMode::kNormal : AssemblyMode::kResiduals, offsets);
  if (a.nonfinite_block >= 0) throw SolveError(detail::nonfinite_message(a.nonfinite_block, "at the initial guess"));
  run.initial_cost = a.cost;

  for (int it = 0; it < iterations; ++it) {
    VectorX<S> delta;
    double mu = replay != nullptr ? (*replay)[static_cast<std::size_t>(it)] : config.mu;
    const int attempts = replay != nullptr ? 1 : config.max_retries + 1;
    bool ok = false;
    for (int attempt = 0; attempt < attempts && !ok; ++attempt) {
      MatrixX<S> h = a.normal;
      for (int i = 0; i < n; ++i) h(i, i) += mu;
      ok = detail::solve_spd(h, a.gradient, delta) && detail::all_finite(delta);
      if (!ok) mu = mu > 0.0 ? mu * 10.0 : 1e-8;
    }
    if (!ok) {
      throw SolveError("normal equations not positive definite at iteration " + std::to_string(it) +
                       " after " + std::to_string(attempts) + " attempts (damping " + std::to_string(mu) + ")");
    }
    run.damping.push_back(mu);

    const VectorX<S> step = config.beta * delta;
    double step_norm = 0.0;
    for (int i = 0; i < n; ++i) step_norm = std::max(step_norm, std::abs(value_of(step[i])));
    theta -= step;
    const bool converged_now = step_norm < config.step_tol;
    run.converged = run.converged || converged_now;
    const bool last = it + 1 == iterations || (converged_now && !run_all);
    a = assemble<S>(theta, layout, ctx, sw, eps_num, last ? AssemblyMode::kResiduals : AssemblyMode::kNormal, offsets);
    if (a.nonfinite_block >= 0) {
      throw SolveError(detail::nonfinite_message(a.nonfinite_block, ("after iteration " + std::to_string(it)).c_str()));
    }
    run.costs.push_back(a.cost);
    if (last) break;
  }
  run.theta = std::move(theta);
  run.final = std::move(a);
  return run;
}

namespace detail {

inline SolveResult finish(const GaussNewtonRun<double>& run, const VariableLayout& layout, const PlanContext& ctx) {
  SolveResult res;
  res.variables = unpack(run.theta, layout);
  res.trajectory = vehicle::rollout(ctx.start, res.variables.controls, ctx.params);
  res.maneuver = decision::round_decision(res.variables.decisions);
  res.initial_cost = run.initial_cost;
  res.cost_trace = run.costs;
  res.converged = run.converged;
  res.iterations_used = static_cast<int>(run.costs.size());
  res.block_cost = run.final.block_cost;
  res.damping = run.damping;
  return res;
}

inline void check_init(const PlanVariables& init, const PlanContext& ctx) {
  if (init.horizon() != ctx.horizon) throw ValidationError("initial controls do not match the planning horizon");
  if (init.decisions.horizon() != ctx.horizon) throw ValidationError("initial decisions do not match the horizon");
  if (init.decisions.available != ctx.available) throw ValidationError("decision mask does not match the context");
}

}  // namespace detail

inline SolveResult solve(const PlanContext& ctx, const PlanVariables& init, const CostWeights& weights,
                         const SolverConfig& config) {
  detail::check_init(init, ctx);
  weights.validate();
  const VariableLayout layout = config.layout(init.decisions);
  const auto run = gauss_newton<double>(pack(init, layout), layout, ctx, sqrt_weights(weights), weights.eps_num, config);
  return detail::finish(run, layout, ctx);
}

// ---------------------------------------------------------------------------
// Forward-mode sensitivities through the executed iterations

/// Tangent directions, one per column. Log-weight directions scale the
/// weights multiplicatively, so a zero weight carries no sensitivity.
struct TangentSeeds {
  Eigen::MatrixXd log_weights;  // kNumWeights x n
  Eigen::MatrixXd initial;      // layout.size() x n, direction of the initial unknowns
  /// 2 * agents * horizon x n, ordered (agent, step, xy); may have 0 rows.
  Eigen::MatrixXd agent_positions;

  int count() const { return static_cast<int>(std::max({log_weights.cols(), initial.cols(), agent_positions.cols()})); }
};

struct TangentResult {
  Eigen::MatrixXd theta;   // d theta* / d seed
  Eigen::MatrixXd states;  // 4 (T + 1) x n, row 4k + i is state component i at step k
  Eigen::RowVectorXd cost;  // final cost
};

inline constexpr int kTangentChunk = 16;
using ChunkJet = ceres::Jet<double, kTangentChunk>;

inline TangentResult propagate_tangents(const PlanContext& ctx, const PlanVariables& init, const CostWeights& weights,
                                        const SolverConfig& config, const SolveResult& primal,
                                        const TangentSeeds& seeds) {
  const VariableLayout layout = config.layout(init.decisions);
  const int n = layout.size();
  const int count = seeds.count();
  const int horizon = ctx.horizon;
  const auto agents = static_cast<int>(ctx.predictions.size());
  auto column_or_zero = [](const Eigen::MatrixXd& m, Eigen::Index r, int c) {
    return (m.rows() > r && m.cols() > c) ? m(r, c) : 0.0;
  };

  TangentResult out;
  out.theta = Eigen::MatrixXd::Zero(n, count);
  out.states = Eigen::MatrixXd::Zero(4 * (horizon + 1), count);
  out.cost = Eigen::RowVectorXd::Zero(count);
  const Eigen::VectorXd theta0 = pack(init, layout);

  for (int c0 = 0; c0 < count; c0 += kTangentChunk) {
    const int width = std::min(kTangentChunk, count - c0);
    SqrtWeights<ChunkJet> sw;
    for (int i = 0; i < kNumWeights; ++i) {
      const double root = std::sqrt(weights[i]);
      sw[i] = ChunkJet(root);
      for (int j = 0; j < width; ++j) sw[i].v[j] = 0.5 * root * column_or_zero(seeds.log_weights, i, c0 + j);
    }
    VectorX<ChunkJet> theta(n);
    for (int i = 0; i < n; ++i) {
      theta[i] = ChunkJet(theta0[i]);
      for (int j = 0; j < width; ++j) theta[i].v[j] = column_or_zero(seeds.initial, i, c0 + j);
    }
    AgentOffsets<ChunkJet> offsets;
    const bool use_offsets = seeds.agent_positions.rows() > 0;
    if (use_offsets) {
      offsets.resize(static_cast<std::size_t>(agents));
      for (int ag = 0; ag < agents; ++ag) {
        auto& m = offsets[static_cast<std::size_t>(ag)];
        m = Eigen::Matrix<ChunkJet, 2, Eigen::Dynamic>::Constant(2, horizon, ChunkJet(0.0));
        for (int t = 0; t < horizon; ++t) {
          for (int xy = 0; xy < 2; ++xy) {
            const Eigen::Index row = (static_cast<Eigen::Index>(ag) * horizon + t) * 2 + xy;
            for (int j = 0; j < width; ++j) m(xy, t).v[j] = column_or_zero(seeds.agent_positions, row, c0 + j);
          }
        }
      }
    }
    const auto run = gauss_newton<ChunkJet>(theta, layout, ctx, sw, weights.eps_num, config,
                                            use_offsets ? &offsets : nullptr, &primal.damping);
    for (int j = 0; j < width; ++j) {
      for (int i = 0; i < n; ++i) out.theta(i, c0 + j) = run.theta[i].v[j];
      for (int k = 0; k <= horizon; ++k) {
        for (int s = 0; s < 4; ++s) out.states(4 * k + s, c0 + j) = run.final.states[static_cast<std::size_t>(k)][s].v[j];
      }
      out.cost[c0 + j] = run.final.cost.v[j];
    }
  }
  return out;
}

struct Sensitivities {
  /// d theta* / d log w for the learnable weights (n x kNumLearnable).
  Eigen::MatrixXd log_weights;
  /// d theta* / d theta_init (n x n); controls first, then decisions.
  Eigen::MatrixXd initial;
  /// d theta* / d predicted agent positions, ordered (agent, step, xy).
  Eigen::MatrixXd agent_positions;
};

struct SensitivityOptions {
  bool agent_positions = false;
};

inline std::pair<SolveResult, Sensitivities> solve_with_sensitivities(const PlanContext& ctx,
                                                                      const PlanVariables& init,
                                                                      const CostWeights& weights,
                                                                      const SolverConfig& config,
                                                                      const SensitivityOptions& options = {}) {
  SolveResult primal = solve(ctx, init, weights, config);
  const VariableLayout layout = config.layout(init.decisions);
  const int n = layout.size();
  const int positions = options.agent_positions ? 2 * static_cast<int>(ctx.predictions.size()) * ctx.horizon : 0;
  const int count = kNumLearnable + n + positions;

  TangentSeeds seeds;
  seeds.log_weights = Eigen::MatrixXd::Zero(kNumWeights, count);
  for (int i = 0; i < kNumLearnable; ++i) seeds.log_weights(i, i) = 1.0;
  seeds.initial = Eigen::MatrixXd::Zero(n, count);
  seeds.initial.middleCols(kNumLearnable, n).setIdentity();
  if (positions > 0) {
    seeds.agent_positions = Eigen::MatrixXd::Zero(positions, count);
    seeds.agent_positions.rightCols(positions).setIdentity();
  }
  const TangentResult tr = propagate_tangents(ctx, init, weights, config, primal, seeds);

  Sensitivities sens;
  sens.log_weights = tr.theta.leftCols(kNumLearnable);
  sens.initial = tr.theta.middleCols(kNumLearnable, n);
  sens.agent_positions = tr.theta.rightCols(positions);
  return {std::move(primal), std::move(sens)};
}

inline double converged_rate(std::span<const SolveResult> results) {
  if (results.empty()) throw ValidationError("converged_rate: empty batch");
  std::size_t hits = 0;
  for (const auto& r : results) hits += r.converged ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// solve-v1 document

inline nlohmann::json solve_to_json(const SolveResult& r) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : r.trajectory.states) states.push_back({s.px, s.py, s.heading, s.speed});
  nlohmann::json applied = nlohmann::json::array();
  for (const auto& u : r.trajectory.controls) applied.push_back({u.accel, u.steer});
  nlohmann::json raw = nlohmann::json::array();
  for (const auto& u : r.variables.controls) raw.push_back({u.accel, u.steer});
  nlohmann::json decisions = nlohmann::json::array();
  const auto& b = r.variables.decisions.b;
  for (Eigen::Index t = 0; t < b.rows(); ++t) decisions.push_back({b(t, 0), b(t, 1), b(t, 2)});
  nlohmann::json blocks = nlohmann::json::object();
  for (int i = 0; i < kNumBlocks; ++i) blocks[std::string(kBlockNames[static_cast<std::size_t>(i)])] = r.block_cost[static_cast<std::size_t>(i)];
  const auto& av = r.variables.decisions.available;
  return {{"schema", "solve-v1"},
          {"converged", r.converged},
          {"iterations_used", r.iterations_used},
          {"maneuver", r.maneuver},
          {"initial_cost", r.initial_cost},
          {"final_cost", r.final_cost()},
          {"cost_trace", r.cost_trace},
          {"block_cost", blocks},
          {"available", {av[0], av[1], av[2]}},
          {"controls", raw},
          {"applied_controls", applied},
          {"decisions", decisions},
          {"trajectory", states}};
}

}  // namespace diffplan

#endif  // DIFFPLAN_SOLVER_HPP_
