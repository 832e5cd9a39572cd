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

#ifndef DIFFPLAN_DECISION_HPP_
#define DIFFPLAN_DECISION_HPP_

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "diffplan/core.hpp"

namespace diffplan::decision {

using Mask = std::array<bool, kManeuvers>;
using Probabilities = std::array<double, kManeuvers>;
using DecisionMatrix = Eigen::Matrix<double, Eigen::Dynamic, kManeuvers>;

/// Relaxed lane-selection variables, one row per planning step. Columns are
/// maneuvers -1, 0, +1.
struct DecisionVars {
  DecisionMatrix b;
  Mask available{true, true, true};

  int horizon() const { return static_cast<int>(b.rows()); }
};

inline int available_count(const Mask& mask) {
  int n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

/// Zeroes masked entries and rescales the rest to sum to one.
inline Probabilities renormalize(const Probabilities& d, const Mask& mask) {
  if (available_count(mask) == 0) throw ValidationError("no available maneuver");
  Probabilities out{};
  double total = 0.0;
  for (int a = 0; a < kManeuvers; ++a) {
    if (d[a] < 0.0 || !std::isfinite(d[a])) throw ValidationError("decision probabilities must be finite and >= 0");
    if (mask[a]) total += d[a];
  }
  for (int a = 0; a < kManeuvers; ++a) {
    if (!mask[a]) continue;
    out[a] = total > 0.0 ? d[a] / total : 1.0 / available_count(mask);
  }
  return out;
}

inline DecisionVars init_decisions(const Probabilities& d, const Mask& mask, int horizon) {
  const Probabilities p = renormalize(d, mask);
  DecisionVars dv;
  dv.available = mask;
  dv.b.resize(horizon, kManeuvers);
  for (int t = 0; t < horizon; ++t) {
    for (int a = 0; a < kManeuvers; ++a) dv.b(t, a) = p[a];
  }
  return dv;
}

/// Maneuver with the largest time-mean b. Ties prefer keeping the lane, then
/// the right change.
inline int round_decision(const DecisionVars& dv) {
  const Eigen::Matrix<double, 1, kManeuvers> mean = dv.b.colwise().mean();
  constexpr std::array<int, kManeuvers> kPreference = {maneuver_index(0), maneuver_index(1),
                                                       maneuver_index(-1)};
  int best = kPreference[0];
  for (int idx : kPreference) {
    if (mean(idx) > mean(best)) best = idx;
  }
  return maneuver_of(best);
}

struct ComplianceRow {
  double sum = 0.0;
  double max = 0.0;
  bool ok = true;
};

struct ComplianceReport {
  bool compliant = true;
  std::vector<ComplianceRow> rows;
};

inline ComplianceReport compliance_check(const DecisionVars& dv, double tol = 0.05) {
  ComplianceReport report;
  report.rows.reserve(static_cast<std::size_t>(dv.horizon()));
  for (int t = 0; t < dv.horizon(); ++t) {
    ComplianceRow row;
    row.sum = dv.b.row(t).sum();
    row.max = dv.b.row(t).maxCoeff();
    row.ok = std::abs(row.sum - 1.0) <= tol && row.max >= 1.0 - tol;
    for (int a = 0; a < kManeuvers; ++a) {
      const double v = dv.b(t, a);
      if (v < -tol || v > 1.0 + tol) row.ok = false;
    }
    report.compliant = report.compliant && row.ok;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace diffplan::decision

#endif  // DIFFPLAN_DECISION_HPP_
