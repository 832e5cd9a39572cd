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

#ifndef DIFFPLAN_PLANNER_HPP_
#define DIFFPLAN_PLANNER_HPP_

#include <string>

#include "diffplan/context.hpp"
#include "diffplan/initializer.hpp"
#include "diffplan/solver.hpp"
#include "diffplan/weights.hpp"
#include "diffplan/world.hpp"

namespace diffplan {

/// Initializer, cost weights and solver settings: everything needed to turn a
/// scenario instant into a plan.
struct Planner {
  init::Initializer initializer;
  CostWeights weights;
  SolverConfig solver = SolverConfig::inference();
  ContextOptions context;

  std::string name() const {
    switch (initializer.kind) {
      case init::InitializerKind::kHeuristic:
        return "heuristic";
      case init::InitializerKind::kConstantVelocity:
        return "constant-velocity";
      case init::InitializerKind::kToy:
        return "toy";
    }
    return "heuristic";
  }
};

struct PlanOutcome {
  init::InitOutput init;
  SolveResult result;
};

inline PlanOutcome plan(const world::Scenario& sc, int step, const vehicle::EgoState& ego, const Planner& planner) {
  PlanOutcome out;
  out.init = init::initialize(sc, step, ego, planner.initializer, planner.weights, planner.context);
  out.result = solve(out.init.ctx, out.init.init, planner.weights, planner.solver);
  return out;
}

}  // namespace diffplan

#endif  // DIFFPLAN_PLANNER_HPP_
