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

#ifndef DIFFPLAN_WEIGHTS_HPP_
#define DIFFPLAN_WEIGHTS_HPP_

#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "diffplan/core.hpp"

namespace diffplan {

enum WeightId : int {
  kTrackX,
  kTrackY,
  kLvVelocity,
  kLvDistance,
  kNvVelocity,
  kNvDistance,
  kVelocity,
  kComfortAccel,
  kComfortSteer,
  kSafety,
  kStop,
  kBinary,
  kEquality,
  kNumWeights
};

inline constexpr int kNumLearnable = 9;

inline constexpr std::array<std::string_view, kNumWeights> kWeightNames = {
    "w_tr_x", "w_tr_y", "w_v_lon", "w_d_lon", "w_v_lat", "w_d_lat", "w_velo",
    "w_rc1",  "w_rc2",  "w_safe",  "w_stop",  "w_bi",    "w_eq"};

inline constexpr bool is_learnable(int id) { return id < kNumLearnable; }

/// Cost weights. Entries [0, kNumLearnable) are tuned by training; the rest
/// act as hard-constraint penalties and stay fixed.
struct CostWeights {
  std::array<double, kNumWeights> w = {
      0.05,    // w_tr_x
      0.5,     // w_tr_y
      0.5,     // w_v_lon
      10.0,    // w_d_lon
      0.5,     // w_v_lat
      10.0,    // w_d_lat
      0.5,     // w_velo
      0.5,     // w_rc1
      20.0,    // w_rc2
      200.0,   // w_safe
      500.0,   // w_stop
      10.0,    // w_bi
      1000.0,  // w_eq
  };
  /// Denominator constant of the inverse-distance safety terms (m).
  double eps_num = 0.5;
  /// Gap added to the body lengths in the collision threshold (m).
  double collision_gap = 2.0;

  double& operator[](int id) { return w[static_cast<std::size_t>(id)]; }
  double operator[](int id) const { return w[static_cast<std::size_t>(id)]; }

  void validate() const {
    for (int i = 0; i < kNumWeights; ++i) {
      if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
        throw ValidationError(std::string(kWeightNames[i]) + " must be finite and >= 0");
      }
    }
    if (!(eps_num > 0.0)) throw ValidationError("eps_num must be > 0");
    if (!(collision_gap >= 0.0)) throw ValidationError("collision_gap must be >= 0");
  }

  bool operator==(const CostWeights&) const = default;
};

inline nlohmann::json weights_to_json(const CostWeights& cw) {
  nlohmann::json values = nlohmann::json::object();
  nlohmann::json learnable = nlohmann::json::object();
  for (int i = 0; i < kNumWeights; ++i) {
    values[std::string(kWeightNames[i])] = cw[i];
    learnable[std::string(kWeightNames[i])] = is_learnable(i);
  }
  return {{"schema", "weights-v1"},
          {"weights", values},
          {"learnable", learnable},
          {"eps_num", cw.eps_num},
          {"collision_gap", cw.collision_gap}};
}

/// Missing keys keep their defaults; unknown weight names are rejected.
inline CostWeights weights_from_json(const nlohmann::json& doc) {
  CostWeights cw;
  try {
    if (doc.contains("schema") && doc.at("schema") != "weights-v1") {
      throw ParseError("weights: unsupported schema " + doc.at("schema").dump());
    }
    const nlohmann::json& values = doc.contains("weights") ? doc.at("weights") : doc;
    for (const auto& [key, val] : values.items()) {
      if (key == "schema" || key == "learnable" || key == "eps_num" || key == "collision_gap") continue;
      int id = -1;
      for (int i = 0; i < kNumWeights; ++i) {
        if (kWeightNames[i] == key) id = i;
      }
      if (id < 0) throw ParseError("weights: unknown key '" + key + "'");
      cw[id] = val.get<double>();
    }
    if (doc.contains("eps_num")) cw.eps_num = doc.at("eps_num").get<double>();
    if (doc.contains("collision_gap")) cw.collision_gap = doc.at("collision_gap").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("weights: ") + e.what());
  }
  cw.validate();
  return cw;
}

}  // namespace diffplan

#endif  // DIFFPLAN_WEIGHTS_HPP_
