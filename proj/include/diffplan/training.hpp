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

#ifndef DIFFPLAN_TRAINING_HPP_
#define DIFFPLAN_TRAINING_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "diffplan/context.hpp"
#include "diffplan/core.hpp"
#include "diffplan/initializer.hpp"
#include "diffplan/solver.hpp"
#include "diffplan/vehicle.hpp"
#include "diffplan/weights.hpp"
#include "diffplan/world.hpp"

namespace diffplan::train {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Losses

/// Huber loss summed over the entries.
inline double smooth_l1(std::span<const double> x, double delta = 1.0) {
  double total = 0.0;
  for (double v : x) {
    const double a = std::abs(v);
    total += a <= delta ? 0.5 * v * v / delta : a - 0.5 * delta;
  }
  return total;
}

inline double smooth_l1(double x, double delta = 1.0) { return smooth_l1(std::span<const double>(&x, 1), delta); }

inline double smooth_l1_grad(double x, double delta = 1.0) {
  return std::abs(x) <= delta ? x / delta : (x > 0.0 ? 1.0 : -1.0);
}

using Track = std::vector<Vec2>;

/// Per-coordinate smooth L1 between paired tracks over their common length.
inline double track_loss(const Track& a, const Track& b, double delta = 1.0) {
  double total = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    total += smooth_l1((a[i] - b[i]).x(), delta) + smooth_l1((a[i] - b[i]).y(), delta);
  }
  return total;
}

/// Summed over the tracks of the selected future (ego and agents).
inline double prediction_loss(std::span<const Track> best_future, std::span<const Track> truth, double delta = 1.0) {
  double total = 0.0;
  for (std::size_t i = 0; i < best_future.size() && i < truth.size(); ++i) total += track_loss(best_future[i], truth[i], delta);
  return total;
}

inline constexpr double kProbabilityFloor = 1e-12;

inline double score_loss(std::span<const double> scores, std::size_t best) {
  return -std::log(std::max(scores[best], kProbabilityFloor));
}

inline double decision_loss(const decision::Probabilities& d, int alpha) {
  return -std::log(std::max(d[static_cast<std::size_t>(maneuver_index(alpha))], kProbabilityFloor));
}

inline double planning_loss(const SolveResult& r) { return r.final_cost(); }

inline double imitation_loss(const Track& plan, const Track& truth, double delta = 1.0) {
  return track_loss(plan, truth, delta);
}

struct LossParts {
  double prediction = 0.0;
  double score = 0.0;
  double decision = 0.0;
  double planning = 0.0;
  double imitation = 0.0;
};

/// Loss multipliers, named by the term they scale. The small planning weight
/// pairs with the squared-residual term.
struct LossWeights {
  double prediction = 0.5;
  double score = 1.0;
  double decision = 1.0;
  double imitation = 1.0;
  double planning = 0.1;

  void validate() const {
    for (double v : {prediction, score, decision, imitation, planning}) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("loss weights must lie in [0, 1]");
    }
  }
};

inline double total_loss(const LossParts& p, const LossWeights& l) {
  return l.prediction * p.prediction + l.score * p.score + l.decision * p.decision + l.planning * p.planning +
         l.imitation * p.imitation;
}

inline double pretrain_loss(const LossParts& p, const LossWeights& l) {
  return l.prediction * p.prediction + l.score * p.score;
}

// ---------------------------------------------------------------------------
// State and configuration

struct TrainingConfig {
  double learning_rate = 2e-4;
  int batch_size = 32;
  int epochs = 20;
  int pretrain_epochs = 3;
  double huber_delta = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights loss;
  SolverConfig solver = SolverConfig::training();
  ContextOptions context;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be >= 0");
    if (batch_size <= 0 || epochs < 0 || pretrain_epochs < 0) throw ValidationError("batch/epoch counts must be positive");
    if (!(huber_delta > 0.0)) throw ValidationError("huber delta must be > 0");
    loss.validate();
    solver.validate();
  }
};

/// Trainable parameters: log of the learnable weights, then the toy
/// initializer parameters.
inline constexpr int kNumParams = kNumLearnable + init::kNumToyParams;
using ParamVector = Eigen::Matrix<double, kNumParams, 1>;

struct TrainState {
  CostWeights weights;
  init::ToyParams phi = init::ToyParams::Zero();
  ParamVector m = ParamVector::Zero();
  ParamVector v = ParamVector::Zero();
  long step = 0;

  ParamVector params() const {
    ParamVector p;
    for (int i = 0; i < kNumLearnable; ++i) p[i] = std::log(weights[i]);
    p.tail<init::kNumToyParams>() = phi;
    return p;
  }

  void set_params(const ParamVector& p) {
    for (int i = 0; i < kNumLearnable; ++i) weights[i] = std::exp(p[i]);
    phi = p.tail<init::kNumToyParams>();
  }

  void validate() const {
    weights.validate();
    for (int i = 0; i < kNumLearnable; ++i) {
      if (!(weights[i] > 0.0)) throw ValidationError("learnable weights must be > 0 to train in log space");
    }
  }
};

// ---------------------------------------------------------------------------
// Per-scenario loss and gradient

struct ScenarioLoss {
  std::string scenario;
  LossParts parts;
  double total = 0.0;
  /// d total / d params; zero when gradients were not requested.
  ParamVector grad = ParamVector::Zero();
  int maneuver = 0;
  bool finite = true;
};

namespace detail {

inline Track positions(const std::vector<vehicle::EgoState>& states, std::size_t first, std::size_t count) {
  Track out;
  for (std::size_t k = first; k < first + count && k < states.size(); ++k) out.push_back(states[k].position());
  return out;
}

inline Track tail(const std::vector<Vec2>& pts) { return pts.size() > 1 ? Track(pts.begin() + 1, pts.end()) : Track{}; }

/// d position_k / d (uniform accel offset, uniform steer offset) along a
/// rollout, k = 1..T, as rows 2(k-1)+xy.
inline Eigen::MatrixXd offset_sensitivity(const std::vector<vehicle::EgoState>& states,
                                          const std::vector<vehicle::ControlInput>& controls,
                                          const vehicle::VehicleParams& p) {
  const auto steps = static_cast<Eigen::Index>(controls.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * steps, 2);
  Eigen::Matrix<double, 4, 2> s = Eigen::Matrix<double, 4, 2>::Zero();
  for (Eigen::Index t = 0; t < steps; ++t) {
    const auto jac = vehicle::step_jacobians(states[static_cast<std::size_t>(t)], controls[static_cast<std::size_t>(t)], p);
    s = (jac.wrt_state * s + jac.wrt_control).eval();
    out.middleRows(2 * t, 2) = s.topRows(2);
  }
  return out;
}

}  // namespace detail

/// Runs the toy initializer and the training-mode solve at the scenario's
/// first instant and returns every loss term. With `gradients`, also returns
/// the total-loss gradient through the unrolled solver and the initializer.
inline ScenarioLoss scenario_loss(const world::Scenario& sc, const TrainState& state, const TrainingConfig& cfg,
                                  bool gradients = true) {
  ScenarioLoss res;
  res.scenario = sc.name;
  const double delta = cfg.huber_delta;
  const LossWeights& lw = cfg.loss;
  init::Initializer initializer;
  initializer.kind = init::InitializerKind::kToy;
  initializer.toy = state.phi;
  const init::InitOutput io = init::initialize(sc, 0, sc.ego_start, initializer, state.weights, cfg.context);
  const PlanContext& ctx = io.ctx;
  const auto horizon = static_cast<std::size_t>(ctx.horizon);

  // Ground truth over steps 1..T.
  const Track ego_truth = detail::positions(sc.ego_ground_truth, 1, horizon);
  std::vector<Track> agent_truth;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    Track tr;
    for (std::size_t k = 1; k <= horizon; ++k) tr.push_back(sc.agent_pose(i, static_cast<int>(k)).position());
    agent_truth.push_back(std::move(tr));
  }
  std::vector<Track> ego_futures;
  for (const auto& f : io.futures) ego_futures.push_back(detail::positions(f.ego, 1, horizon));
  std::vector<Track> agent_pred;
  for (const auto& p : ctx.predictions) agent_pred.push_back(detail::tail(p.positions));
  const std::size_t best = init::select_best_future(ego_futures, ctx.predictions, ego_truth, agent_truth);

  std::vector<Track> best_future{ego_futures[best]};
  std::vector<Track> truth{ego_truth};
  best_future.insert(best_future.end(), agent_pred.begin(), agent_pred.end());
  truth.insert(truth.end(), agent_truth.begin(), agent_truth.end());
  res.parts.prediction = prediction_loss(best_future, truth, delta);

  std::vector<double> scores;
  for (const auto& f : io.futures) scores.push_back(f.score);
  res.parts.score = score_loss(scores, best);

  const SolveResult primal = solve(ctx, io.init, state.weights, cfg.solver);
  res.maneuver = primal.maneuver;
  const decision::Probabilities& d = io.futures.front().d;
  res.parts.decision = decision_loss(d, primal.maneuver);
  res.parts.planning = planning_loss(primal);
  const Track plan = detail::positions(primal.trajectory.states, 1, horizon);
  res.parts.imitation = imitation_loss(plan, ego_truth, delta);
  res.total = total_loss(res.parts, lw);
  res.finite = std::isfinite(res.total);
  if (!gradients || !res.finite) return res;

  // Tangent directions: learnable log-weights, uniform accel and steer
  // offsets of the initial controls, and each initial decision unknown.
  const VariableLayout layout = cfg.solver.layout(io.init.decisions);
  const int n = layout.size();
  std::vector<int> decision_cols;
  for (int k = 0; k < kManeuvers; ++k) {
    if (ctx.available[k] && layout.index(0, k) >= 0) decision_cols.push_back(k);
  }
  const int kAccelSeed = kNumLearnable;
  const int kSteerSeed = kNumLearnable + 1;
  const int first_b = kNumLearnable + 2;
  const int count = first_b + static_cast<int>(decision_cols.size());
  TangentSeeds seeds;
  seeds.log_weights = Eigen::MatrixXd::Zero(kNumWeights, count);
  for (int i = 0; i < kNumLearnable; ++i) seeds.log_weights(i, i) = 1.0;
  seeds.initial = Eigen::MatrixXd::Zero(n, count);
  for (int t = 0; t < ctx.horizon; ++t) {
    seeds.initial(2 * t, kAccelSeed) = 1.0;
    seeds.initial(2 * t + 1, kSteerSeed) = 1.0;
  }
  for (std::size_t j = 0; j < decision_cols.size(); ++j) {
    for (int t = 0; t < layout.decision_rows(); ++t) {
      seeds.initial(layout.index(t, decision_cols[j]), first_b + static_cast<int>(j)) = 1.0;
    }
  }
  const TangentResult tr = propagate_tangents(ctx, io.init, state.weights, cfg.solver, primal, seeds);

  // d (planning + imitation terms) / d seed.
  Eigen::RowVectorXd dseed = lw.planning * tr.cost;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    for (int xy = 0; xy < 2; ++xy) {
      const double g = lw.imitation * smooth_l1_grad(plan[k][xy] - ego_truth[k][xy], delta);
      dseed += g * tr.states.row(4 * static_cast<Eigen::Index>(k + 1) + xy);
    }
  }
  for (int i = 0; i < kNumLearnable; ++i) res.grad[i] = dseed[i];

  init::ToyOutput dout = init::ToyOutput::Zero();
  dout[6] = dseed[kAccelSeed];
  dout[7] = dseed[kSteerSeed];
  // Prediction loss through the offset of the selected ego future.
  const auto& fut = io.futures[best];
  const Eigen::MatrixXd ds = detail::offset_sensitivity(fut.ego, fut.controls, ctx.params);
  for (std::size_t k = 0; k < ego_futures[best].size(); ++k) {
    for (int xy = 0; xy < 2; ++xy) {
      const double g = lw.prediction * smooth_l1_grad(ego_futures[best][k][xy] - ego_truth[k][xy], delta);
      dout[6] += g * ds(2 * static_cast<Eigen::Index>(k) + xy, 0);
      dout[7] += g * ds(2 * static_cast<Eigen::Index>(k) + xy, 1);
    }
  }

  // Decision probabilities feed the initial b and the decision loss.
  std::array<double, kManeuvers> dd{};
  for (std::size_t j = 0; j < decision_cols.size(); ++j) dd[decision_cols[j]] = dseed[first_b + static_cast<int>(j)];
  const int star = maneuver_index(primal.maneuver);
  if (d[star] > kProbabilityFloor) dd[star] += -lw.decision / d[star];
  for (int m = 0; m < kManeuvers; ++m) {
    if (!ctx.available[m]) continue;
    double g = 0.0;
    for (int k = 0; k < kManeuvers; ++k) {
      if (ctx.available[k]) g += dd[k] * d[k] * ((k == m ? 1.0 : 0.0) - d[m]);
    }
    dout[m] = g;
  }

  // Score softmax over the futures' logits.
  if (scores[best] > kProbabilityFloor) {
    for (std::size_t i = 0; i < io.futures.size(); ++i) {
      dout[3 + maneuver_index(io.futures[i].maneuver)] += lw.score * (scores[i] - (i == best ? 1.0 : 0.0));
    }
  }

  init::ToyJacobian jac;
  init::toy_forward(state.phi, io.features, &jac);
  res.grad.tail<init::kNumToyParams>() = jac.transpose() * dout;
  res.finite = res.grad.allFinite();
  return res;
}

/// Prediction and score terms only; gradient w.r.t. the toy parameters.
inline ScenarioLoss pretrain_scenario_loss(const world::Scenario& sc, const TrainState& state, const TrainingConfig& cfg) {
  ScenarioLoss res;
  res.scenario = sc.name;
  const double delta = cfg.huber_delta;
  init::Initializer initializer;
  initializer.kind = init::InitializerKind::kToy;
  initializer.toy = state.phi;
  const init::InitOutput io = init::initialize(sc, 0, sc.ego_start, initializer, state.weights, cfg.context);
  const auto horizon = static_cast<std::size_t>(io.ctx.horizon);
  const Track ego_truth = detail::positions(sc.ego_ground_truth, 1, horizon);
  std::vector<Track> agent_truth;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    Track tr;
    for (std::size_t k = 1; k <= horizon; ++k) tr.push_back(sc.agent_pose(i, static_cast<int>(k)).position());
    agent_truth.push_back(std::move(tr));
  }
  std::vector<Track> ego_futures;
  for (const auto& f : io.futures) ego_futures.push_back(detail::positions(f.ego, 1, horizon));
  const std::size_t best = init::select_best_future(ego_futures, io.ctx.predictions, ego_truth, agent_truth);
  std::vector<Track> best_future{ego_futures[best]};
  std::vector<Track> truth{ego_truth};
  for (const auto& p : io.ctx.predictions) best_future.push_back(detail::tail(p.positions));
  truth.insert(truth.end(), agent_truth.begin(), agent_truth.end());
  res.parts.prediction = prediction_loss(best_future, truth, delta);
  std::vector<double> scores;
  for (const auto& f : io.futures) scores.push_back(f.score);
  res.parts.score = score_loss(scores, best);
  res.total = pretrain_loss(res.parts, cfg.loss);

  init::ToyOutput dout = init::ToyOutput::Zero();
  const auto& fut = io.futures[best];
  const Eigen::MatrixXd ds = detail::offset_sensitivity(fut.ego, fut.controls, io.ctx.params);
  for (std::size_t k = 0; k < ego_futures[best].size(); ++k) {
    for (int xy = 0; xy < 2; ++xy) {
      const double g = cfg.loss.prediction * smooth_l1_grad(ego_futures[best][k][xy] - ego_truth[k][xy], delta);
      dout[6] += g * ds(2 * static_cast<Eigen::Index>(k) + xy, 0);
      dout[7] += g * ds(2 * static_cast<Eigen::Index>(k) + xy, 1);
    }
  }
  if (scores[best] > kProbabilityFloor) {
    for (std::size_t i = 0; i < io.futures.size(); ++i) {
      dout[3 + maneuver_index(io.futures[i].maneuver)] += cfg.loss.score * (scores[i] - (i == best ? 1.0 : 0.0));
    }
  }
  init::ToyJacobian jac;
  init::toy_forward(state.phi, io.features, &jac);
  res.grad.tail<init::kNumToyParams>() = jac.transpose() * dout;
  res.finite = std::isfinite(res.total) && res.grad.allFinite();
  return res;
}

// ---------------------------------------------------------------------------
// Updates

struct StepReport {
  long step = 0;
  LossParts mean_parts;
  double mean_loss = 0.0;
  bool updated = false;
  /// Scenarios whose loss or gradient was not finite.
  std::vector<std::string> nonfinite;
};

/// One adaptive-moment step on the given gradient; the fixed weights are not
/// part of the parameter vector and so never move.
inline void adam_update(TrainState& state, const ParamVector& grad, const TrainingConfig& cfg, bool phi_only = false) {
  // A zero rate is a no-op: moments and the step counter stay put too.
  if (cfg.learning_rate == 0.0) return;
  ParamVector g = grad;
  if (phi_only) g.head<kNumLearnable>().setZero();
  state.step += 1;
  state.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g;
  state.v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  ParamVector p = state.params();
  for (int i = 0; i < kNumParams; ++i) {
    if (phi_only && i < kNumLearnable) continue;
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
  }
  const CostWeights before = state.weights;
  state.set_params(p);
  if (phi_only) state.weights = before;
}

namespace detail {

inline StepReport reduce(std::span<const ScenarioLoss> losses, ParamVector& grad) {
  StepReport rep;
  grad.setZero();
  double n = 0.0;
  for (const auto& l : losses) {
    if (!l.finite) {
      rep.nonfinite.push_back(l.scenario);
      continue;
    }
    grad += l.grad;
    rep.mean_loss += l.total;
    rep.mean_parts.prediction += l.parts.prediction;
    rep.mean_parts.score += l.parts.score;
    rep.mean_parts.decision += l.parts.decision;
    rep.mean_parts.planning += l.parts.planning;
    rep.mean_parts.imitation += l.parts.imitation;
    n += 1.0;
  }
  if (n > 0.0) {
    grad /= n;
    rep.mean_loss /= n;
    rep.mean_parts.prediction /= n;
    rep.mean_parts.score /= n;
    rep.mean_parts.decision /= n;
    rep.mean_parts.planning /= n;
    rep.mean_parts.imitation /= n;
  }
  return rep;
}

}  // namespace detail

/// Joint step: losses and gradients over the batch (averaged in batch
/// order), then one update. A batch containing any non-finite scenario is
/// reported and skipped.
inline StepReport train_step(std::span<const world::Scenario> batch, TrainState& state, const TrainingConfig& cfg,
                             int jobs = 1) {
  std::vector<ScenarioLoss> losses(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t i) {
    try {
      losses[i] = scenario_loss(batch[i], state, cfg, true);
    } catch (const Error&) {
      losses[i].scenario = batch[i].name;
      losses[i].finite = false;
    }
  });
  ParamVector grad;
  StepReport rep = detail::reduce(losses, grad);
  if (rep.nonfinite.empty() && !batch.empty()) {
    adam_update(state, grad, cfg);
    rep.updated = true;
  }
  rep.step = state.step;
  return rep;
}

inline StepReport pretrain_step(std::span<const world::Scenario> batch, TrainState& state, const TrainingConfig& cfg,
                                int jobs = 1) {
  std::vector<ScenarioLoss> losses(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t i) {
    try {
      losses[i] = pretrain_scenario_loss(batch[i], state, cfg);
    } catch (const Error&) {
      losses[i].scenario = batch[i].name;
      losses[i].finite = false;
    }
  });
  ParamVector grad;
  StepReport rep = detail::reduce(losses, grad);
  if (rep.nonfinite.empty() && !batch.empty()) {
    adam_update(state, grad, cfg, true);
    rep.updated = true;
  }
  rep.step = state.step;
  return rep;
}

/// Mean total loss over the batch without updating anything.
inline double mean_loss(std::span<const world::Scenario> batch, const TrainState& state, const TrainingConfig& cfg,
                        int jobs = 1) {
  std::vector<ScenarioLoss> losses(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t i) { losses[i] = scenario_loss(batch[i], state, cfg, false); });
  ParamVector grad;
  return detail::reduce(losses, grad).mean_loss;
}

// ---------------------------------------------------------------------------
// Persistence

inline json to_json(const TrainState& s) {
  auto vec = [](const auto& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"schema", "train-v1"}, {"step", s.step},    {"weights", weights_to_json(s.weights)},
          {"phi", vec(s.phi)},    {"m", vec(s.m)},      {"v", vec(s.v)}};
}

inline TrainState state_from_json(const json& doc) {
  TrainState s;
  try {
    if (doc.at("schema") != "train-v1") throw ParseError("unsupported checkpoint schema");
    s.step = doc.at("step").get<long>();
    s.weights = weights_from_json(doc.at("weights"));
    s.phi = init::toy_from_json(doc.at("phi"));
    auto read = [&](const char* key, ParamVector& out) {
      const auto v = doc.at(key).get<std::vector<double>>();
      if (static_cast<int>(v.size()) != kNumParams) throw ParseError(std::string("checkpoint '") + key + "' has wrong size");
      out = Eigen::Map<const ParamVector>(v.data());
    };
    read("m", s.m);
    read("v", s.v);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  s.validate();
  return s;
}

inline constexpr std::array<const char*, 9> kLossColumns = {
    "phase", "step", "loss", "prediction", "score", "decision", "planning", "imitation", "updated"};

inline std::string loss_csv_header() {
  std::string out;
  for (std::size_t i = 0; i < kLossColumns.size(); ++i) out += (i ? "," : "") + std::string(kLossColumns[i]);
  return out + "\n";
}

inline std::string loss_csv_row(const std::string& phase, const StepReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << phase << ',' << r.step << ',' << r.mean_loss << ',' << r.mean_parts.prediction << ',' << r.mean_parts.score
      << ',' << r.mean_parts.decision << ',' << r.mean_parts.planning << ',' << r.mean_parts.imitation << ','
      << (r.updated ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace diffplan::train

#endif  // DIFFPLAN_TRAINING_HPP_
