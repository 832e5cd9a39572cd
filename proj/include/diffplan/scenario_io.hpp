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

#ifndef DIFFPLAN_SCENARIO_IO_HPP_
#define DIFFPLAN_SCENARIO_IO_HPP_

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffplan/core.hpp"
#include "diffplan/world.hpp"

namespace diffplan::io {

using nlohmann::json;

/// Parses JSON text, translating syntax errors into ParseError with a
/// line:column location.
inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t column = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError(origin + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + e.what());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

namespace detail {

/// Reads a field, reporting the JSON path on failure.
template <typename T>
T field(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + "." + key + ": " + e.what());
  }
}

inline std::optional<int> optional_id(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return field<int>(obj, key, where);
}

inline const char* kind_name(world::AgentKind k) {
  switch (k) {
    case world::AgentKind::kVehicle:
      return "vehicle";
    case world::AgentKind::kPedestrian:
      return "pedestrian";
    case world::AgentKind::kCyclist:
      return "cyclist";
  }
  return "vehicle";
}

inline world::AgentKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "vehicle") return world::AgentKind::kVehicle;
  if (s == "pedestrian") return world::AgentKind::kPedestrian;
  if (s == "cyclist") return world::AgentKind::kCyclist;
  throw ParseError(where + ": unknown agent kind '" + s + "'");
}

inline void check_time(double t, double expected, double dt, const std::string& where) {
  if (std::abs(t - expected) > 1e-6 * std::max(1.0, dt)) {
    throw ValidationError(where + ": poses are not uniformly sampled at dt (t=" + std::to_string(t) +
                          ", expected " + std::to_string(expected) + ")");
  }
}

}  // namespace detail

inline world::Scenario scenario_from_json(const json& doc) {
  using detail::field;
  if (!doc.is_object()) throw ParseError("scenario: document must be an object");
  if (doc.contains("schema") && doc.at("schema") != "scenario-v1") {
    throw ParseError("scenario: unsupported schema " + doc.at("schema").dump());
  }
  world::Scenario sc;
  const json meta = field<json>(doc, "meta", "scenario");
  sc.name = meta.value("name", "");
  sc.template_name = meta.value("template", "");
  sc.seed = meta.value("seed", std::uint64_t{0});
  sc.dt = field<double>(meta, "dt", "meta");
  sc.history_steps = field<int>(meta, "history_steps", "meta");
  sc.horizon_steps = field<int>(meta, "horizon_steps", "meta");

  const json lanes = field<json>(doc, "lanes", "scenario");
  if (!lanes.is_array()) throw ParseError("scenario.lanes must be an array");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string where = "lanes[" + std::to_string(i) + "]";
    const auto& l = lanes[i];
    std::vector<Vec2> pts;
    for (const auto& p : field<std::vector<std::array<double, 2>>>(l, "centerline", where)) pts.emplace_back(p[0], p[1]);
    try {
      sc.lanes.emplace_back(field<int>(l, "id", where), std::move(pts), field<double>(l, "width", where),
                            field<double>(l, "speed_limit", where), detail::optional_id(l, "left", where),
                            detail::optional_id(l, "right", where));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }

  const json agents = doc.value("agents", json::array());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const std::string where = "agents[" + std::to_string(i) + "]";
    const auto& a = agents[i];
    world::AgentTrack tr;
    tr.id = field<int>(a, "id", where);
    tr.kind = detail::parse_kind(field<std::string>(a, "kind", where), where);
    tr.length = field<double>(a, "length", where);
    tr.width = field<double>(a, "width", where);
    const auto poses = field<std::vector<std::array<double, 5>>>(a, "poses", where);
    for (std::size_t k = 0; k < poses.size(); ++k) {
      const auto& p = poses[k];
      detail::check_time(p[0], (static_cast<double>(k) - sc.history_steps) * sc.dt, sc.dt, where);
      tr.poses.push_back({p[1], p[2], p[3], p[4]});
    }
    sc.agents.push_back(std::move(tr));
  }

  const json signals = doc.value("signals", json::array());
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const std::string where = "signals[" + std::to_string(i) + "]";
    const auto& s = signals[i];
    world::TrafficSignal sig;
    sig.lane_id = field<int>(s, "lane_id", where);
    sig.stop_line_s = field<double>(s, "stop_line_s", where);
    for (const auto& st : field<std::vector<std::string>>(s, "states", where)) {
      if (st == "red") {
        sig.states.push_back(world::SignalState::kRed);
      } else if (st == "green") {
        sig.states.push_back(world::SignalState::kGreen);
      } else {
        throw ParseError(where + ": unknown signal state '" + st + "'");
      }
    }
    sc.signals.push_back(std::move(sig));
  }

  const json ego = field<json>(doc, "ego", "scenario");
  sc.ego_lane_id = field<int>(ego, "lane_id", "ego");
  sc.ego_params.length = ego.value("length", sc.ego_params.length);
  sc.ego_params.width = ego.value("width", sc.ego_params.width);
  sc.ego_params.wheelbase = ego.value("wheelbase", sc.ego_params.wheelbase);
  sc.ego_params.max_accel = ego.value("max_accel", sc.ego_params.max_accel);
  sc.ego_params.max_steer = ego.value("max_steer", sc.ego_params.max_steer);
  sc.ego_params.dt = sc.dt;
  const auto start = field<std::array<double, 4>>(ego, "start", "ego");
  sc.ego_start = {start[0], start[1], start[2], start[3]};
  if (ego.contains("ground_truth")) {
    const auto gt = field<std::vector<std::array<double, 5>>>(ego, "ground_truth", "ego");
    for (std::size_t k = 0; k < gt.size(); ++k) {
      detail::check_time(gt[k][0], static_cast<double>(k) * sc.dt, sc.dt, "ego.ground_truth");
      sc.ego_ground_truth.push_back({gt[k][1], gt[k][2], gt[k][3], gt[k][4]});
    }
  }

  for (const auto& poly : doc.value("crosswalks", json::array())) {
    std::vector<Vec2> pts;
    for (const auto& p : poly.get<std::vector<std::array<double, 2>>>()) pts.emplace_back(p[0], p[1]);
    sc.crosswalks.push_back(std::move(pts));
  }

  world::validate(sc);
  return sc;
}

inline json scenario_to_json(const world::Scenario& sc) {
  json lanes = json::array();
  for (const auto& l : sc.lanes) {
    json pts = json::array();
    for (const auto& p : l.centerline()) pts.push_back({p.x(), p.y()});
    lanes.push_back({{"id", l.id()},
                     {"centerline", pts},
                     {"width", l.width()},
                     {"speed_limit", l.speed_limit()},
                     {"left", l.left_neighbor() ? json(*l.left_neighbor()) : json(nullptr)},
                     {"right", l.right_neighbor() ? json(*l.right_neighbor()) : json(nullptr)}});
  }
  json agents = json::array();
  for (const auto& a : sc.agents) {
    json poses = json::array();
    for (std::size_t k = 0; k < a.poses.size(); ++k) {
      const auto& p = a.poses[k];
      poses.push_back({(static_cast<double>(k) - sc.history_steps) * sc.dt, p.x, p.y, p.heading, p.speed});
    }
    agents.push_back({{"id", a.id},
                      {"kind", detail::kind_name(a.kind)},
                      {"length", a.length},
                      {"width", a.width},
                      {"poses", poses}});
  }
  json signals = json::array();
  for (const auto& s : sc.signals) {
    json states = json::array();
    for (auto st : s.states) states.push_back(st == world::SignalState::kRed ? "red" : "green");
    signals.push_back({{"lane_id", s.lane_id}, {"stop_line_s", s.stop_line_s}, {"states", states}});
  }
  json gt = json::array();
  for (std::size_t k = 0; k < sc.ego_ground_truth.size(); ++k) {
    const auto& s = sc.ego_ground_truth[k];
    gt.push_back({static_cast<double>(k) * sc.dt, s.px, s.py, s.heading, s.speed});
  }
  json crosswalks = json::array();
  for (const auto& poly : sc.crosswalks) {
    json pts = json::array();
    for (const auto& p : poly) pts.push_back({p.x(), p.y()});
    crosswalks.push_back(pts);
  }
  const auto& e = sc.ego_params;
  return {{"schema", "scenario-v1"},
          {"meta",
           {{"name", sc.name},
            {"template", sc.template_name},
            {"seed", sc.seed},
            {"dt", sc.dt},
            {"history_steps", sc.history_steps},
            {"horizon_steps", sc.horizon_steps}}},
          {"lanes", lanes},
          {"agents", agents},
          {"signals", signals},
          {"crosswalks", crosswalks},
          {"ego",
           {{"lane_id", sc.ego_lane_id},
            {"length", e.length},
            {"width", e.width},
            {"wheelbase", e.wheelbase},
            {"max_accel", e.max_accel},
            {"max_steer", e.max_steer},
            {"start", {sc.ego_start.px, sc.ego_start.py, sc.ego_start.heading, sc.ego_start.speed}},
            {"ground_truth", gt}}}};
}

inline world::Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(parse_json(read_file(path), path.string()));
}

inline void save_scenario(const world::Scenario& sc, const std::filesystem::path& path) {
  write_file(path, scenario_to_json(sc).dump(1) + "\n");
}

/// Scenario files of a suite directory in lexicographic order.
inline std::vector<std::filesystem::path> list_suite(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ParseError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace diffplan::io

#endif  // DIFFPLAN_SCENARIO_IO_HPP_
