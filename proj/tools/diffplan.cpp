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

// diffplan command-line tool: solve, simulate, train, gen-suite, plot-data.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "diffplan/evaluation.hpp"
#include "diffplan/planner.hpp"
#include "diffplan/scenario_io.hpp"
#include "diffplan/solver.hpp"
#include "diffplan/suite.hpp"
#include "diffplan/training.hpp"
#include "diffplan/weights.hpp"

#ifndef DIFFPLAN_VERSION
#define DIFFPLAN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace diffplan;

namespace {

enum Exit : int { kOk = 0, kInputError = 1, kDegraded = 2, kInternal = 3 };

struct Common {
  std::string weights;
  std::string solver_mode = "inference";
  std::optional<double> beta;
  std::optional<int> iters;
  std::string initializer = "heuristic";
  std::string toy_params;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool planning) {
  cmd->add_option("--seed", c.seed, "Seed for all randomness");
  cmd->add_option("--jobs", c.jobs, "Scenarios processed in parallel")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "Output path");
  if (!planning) return;
  cmd->add_option("--weights", c.weights, "weights-v1 file or train-v1 checkpoint");
  cmd->add_option("--solver-mode", c.solver_mode, "Solver preset")
      ->check(CLI::IsMember({"training", "inference"}));
  cmd->add_option("--beta", c.beta, "Gauss-Newton step size override");
  cmd->add_option("--iters", c.iters, "Iteration count override");
  cmd->add_option("--initializer,--planner", c.initializer, "Initializer")
      ->check(CLI::IsMember({"heuristic", "constant-velocity-only", "toy"}));
  cmd->add_option("--toy-params", c.toy_params, "Toy initializer parameters (toy-initializer-v1 or train-v1)");
}

json load_json(const std::string& path) { return io::parse_json(io::read_file(path), path); }

Planner make_planner(const Common& c) {
  Planner p;
  if (!c.weights.empty()) {
    const json doc = load_json(c.weights);
    p.weights = doc.value("schema", "") == "train-v1" ? weights_from_json(doc.at("weights")) : weights_from_json(doc);
  }
  p.solver = c.solver_mode == "training" ? SolverConfig::training() : SolverConfig::inference();
  if (c.beta) p.solver.beta = *c.beta;
  if (c.iters) p.solver.max_iters = *c.iters;
  p.solver.validate();
  if (c.initializer == "constant-velocity-only") {
    p.initializer.kind = init::InitializerKind::kConstantVelocity;
  } else if (c.initializer == "toy") {
    p.initializer.kind = init::InitializerKind::kToy;
    if (!c.toy_params.empty()) p.initializer.toy = init::toy_from_json(load_json(c.toy_params));
  }
  return p;
}

json planner_json(const Planner& p) {
  return {{"initializer", p.name()},
          {"weights", weights_to_json(p.weights)},
          {"solver", {{"beta", p.solver.beta}, {"max_iters", p.solver.max_iters}, {"step_tol", p.solver.step_tol},
                      {"mu", p.solver.mu}}}};
}

/// Written before any computation so a run can be repeated from it.
void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    std::uint64_t seed) {
  const json manifest = {{"schema", "manifest-v1"}, {"command", command}, {"config", config},
                         {"inputs", inputs},        {"outputs", outputs}, {"seed", seed},
                         {"version", DIFFPLAN_VERSION}};
  io::write_file(path, manifest.dump(2) + "\n");
}

std::vector<world::Scenario> load_suite(const std::string& dir) {
  std::vector<world::Scenario> out;
  for (const auto& p : io::list_suite(dir)) out.push_back(io::load_scenario(p));
  if (out.empty()) throw ValidationError("suite directory '" + dir + "' holds no scenarios");
  return out;
}

int cmd_solve(const std::string& scenario_path, const Common& c, int step) {
  const fs::path out = c.out.empty() ? fs::path("solve.json") : fs::path(c.out);
  const Planner planner = make_planner(c);
  write_manifest(fs::path(out.string() + ".manifest.json"), "solve",
                 {{"planner", planner_json(planner)}, {"step", step}}, {scenario_path, c.weights}, {out.string()},
                 c.seed);
  const world::Scenario sc = io::load_scenario(scenario_path);
  const vehicle::EgoState ego =
      step == 0 ? sc.ego_start : sc.ego_ground_truth.at(static_cast<std::size_t>(step));
  const PlanOutcome res = plan(sc, step, ego, planner);
  json doc = solve_to_json(res.result);
  doc["scenario"] = sc.name;
  doc["step"] = step;
  io::write_file(out, doc.dump(1) + "\n");
  spdlog::info("{}: maneuver {} cost {:.6g} -> {:.6g} in {} iterations{}", sc.name, res.result.maneuver,
               res.result.initial_cost, res.result.final_cost(), res.result.iterations_used,
               res.result.converged ? "" : " (not converged)");
  return res.result.converged ? kOk : kDegraded;
}

int cmd_simulate(const std::string& suite_dir, const Common& c, int steps) {
  const fs::path out = c.out.empty() ? fs::path("sim") : fs::path(c.out);
  const Planner planner = make_planner(c);
  fs::create_directories(out / "episodes");
  const auto paths = io::list_suite(suite_dir);
  std::vector<std::string> outputs{(out / "metrics.json").string(), (out / "metrics.csv").string()};
  for (const auto& p : paths) outputs.push_back((out / "episodes" / (p.stem().string() + ".jsonl")).string());
  write_manifest(out / "manifest.json", "simulate", {{"planner", planner_json(planner)}, {"steps", steps}},
                 {suite_dir}, outputs, c.seed);
  const auto scenarios = load_suite(suite_dir);
  std::vector<eval::EpisodeLog> logs(scenarios.size());
  parallel_for(scenarios.size(), c.jobs, [&](std::size_t i) {
    logs[i] = eval::closed_loop_run(scenarios[i], planner, steps);
  });
  bool degraded = false;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    io::write_file(out / "episodes" / (paths[i].stem().string() + ".jsonl"), eval::episode_to_jsonl(logs[i]));
    spdlog::info("{}: {} after {} steps, progress {:.2f} m", logs[i].scenario,
                 eval::termination_name(logs[i].termination), logs[i].steps.size(), logs[i].final_progress);
    if (logs[i].termination == eval::Termination::kSolverFailure) {
      spdlog::warn("{}: {}", logs[i].scenario, logs[i].failure);
      degraded = true;
    }
  }
  const eval::Metrics m = eval::aggregate_metrics(logs);
  const std::string suite_name = fs::path(suite_dir).filename().string();
  io::write_file(out / "metrics.json", eval::metrics_to_json(m, suite_name, planner.name()).dump(2) + "\n");
  io::write_file(out / "metrics.csv", eval::metrics_csv(m, suite_name, planner.name()));
  spdlog::info("collision {:.1f}%  progress {:.2f} m  convergence {:.1f}%  compliance {:.1f}%", m.collision_rate,
               m.progress, m.convergence_rate, m.compliance_rate);
  return degraded ? kDegraded : kOk;
}

struct TrainFlags {
  std::string config;
  std::string resume;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<int> epochs;
  std::optional<int> pretrain_epochs;
};

/// Precedence: flags, then the config file, then the built-in defaults.
train::TrainingConfig training_config(const TrainFlags& f) {
  train::TrainingConfig cfg;
  if (!f.config.empty()) {
    const json doc = load_json(f.config);
    try {
      cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
      cfg.batch_size = doc.value("batch_size", cfg.batch_size);
      cfg.epochs = doc.value("epochs", cfg.epochs);
      cfg.pretrain_epochs = doc.value("pretrain_epochs", cfg.pretrain_epochs);
      cfg.huber_delta = doc.value("huber_delta", cfg.huber_delta);
      if (doc.contains("loss_weights")) {
        const auto& l = doc.at("loss_weights");
        cfg.loss.prediction = l.value("prediction", cfg.loss.prediction);
        cfg.loss.score = l.value("score", cfg.loss.score);
        cfg.loss.decision = l.value("decision", cfg.loss.decision);
        cfg.loss.imitation = l.value("imitation", cfg.loss.imitation);
        cfg.loss.planning = l.value("planning", cfg.loss.planning);
      }
    } catch (const json::exception& e) {
      throw ParseError(f.config + ": " + e.what());
    }
  }
  if (f.lr) cfg.learning_rate = *f.lr;
  if (f.batch) cfg.batch_size = *f.batch;
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.pretrain_epochs) cfg.pretrain_epochs = *f.pretrain_epochs;
  cfg.validate();
  return cfg;
}

json training_config_json(const train::TrainingConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"pretrain_epochs", cfg.pretrain_epochs},
          {"huber_delta", cfg.huber_delta},
          {"loss_weights",
           {{"prediction", cfg.loss.prediction}, {"score", cfg.loss.score}, {"decision", cfg.loss.decision},
            {"imitation", cfg.loss.imitation}, {"planning", cfg.loss.planning}}}};
}

/// Seeded Fisher-Yates order of the scenario indices for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  suite::Rng rng(seed, 1000, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(i))));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

int cmd_train(const std::string& suite_dir, const Common& c, const TrainFlags& f) {
  const fs::path out = c.out.empty() ? fs::path("train") : fs::path(c.out);
  const train::TrainingConfig cfg = training_config(f);
  fs::create_directories(out);
  const fs::path checkpoint = out / "checkpoint.json";
  const fs::path csv = out / "losses.csv";
  write_manifest(out / "manifest.json", "train", training_config_json(cfg), {suite_dir, f.config, f.resume, c.weights},
                 {checkpoint.string(), csv.string()}, c.seed);

  train::TrainState state;
  if (!f.resume.empty()) {
    state = train::state_from_json(load_json(f.resume));
  } else if (!c.weights.empty()) {
    state.weights = weights_from_json(load_json(c.weights));
  }
  state.validate();
  const auto scenarios = load_suite(suite_dir);
  std::string log = train::loss_csv_header();
  const auto total_epochs = cfg.pretrain_epochs + cfg.epochs;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const bool pretrain = epoch < cfg.pretrain_epochs;
    const auto order = epoch_order(scenarios.size(), c.seed, epoch);
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<world::Scenario> batch;
      for (std::size_t i = first; i < std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        batch.push_back(scenarios[order[i]]);
      }
      const train::StepReport rep = pretrain ? train::pretrain_step(batch, state, cfg, c.jobs)
                                             : train::train_step(batch, state, cfg, c.jobs);
      log += train::loss_csv_row(pretrain ? "pretrain" : "joint", rep);
      io::write_file(csv, log);
      if (!rep.nonfinite.empty() || !std::isfinite(rep.mean_loss)) {
        std::string names;
        for (const auto& n : rep.nonfinite) names += " " + n;
        spdlog::error("non-finite loss at step {}:{}; keeping the last checkpoint", rep.step, names);
        return kDegraded;
      }
      spdlog::info("{} epoch {} step {} loss {:.6g}", pretrain ? "pretrain" : "joint", epoch, rep.step, rep.mean_loss);
    }
    const std::string doc = train::to_json(state).dump(1) + "\n";
    io::write_file(checkpoint, doc);
    io::write_file(out / ("checkpoint_epoch_" + std::to_string(epoch) + ".json"), doc);
  }
  io::write_file(out / "weights.json", weights_to_json(state.weights).dump(2) + "\n");
  io::write_file(out / "toy.json", init::toy_to_json(state.phi).dump(1) + "\n");
  return kOk;
}

int cmd_gen_suite(const Common& c, int per_template) {
  const fs::path out = c.out.empty() ? fs::path("suite") : fs::path(c.out);
  fs::create_directories(out);
  std::vector<std::string> outputs;
  for (auto name : suite::kTemplates) {
    for (int i = 0; i < per_template; ++i) {
      outputs.push_back((out / (std::string(name) + "_" + (i < 10 ? "0" : "") + std::to_string(i) + ".json")).string());
    }
  }
  write_manifest(out.parent_path() / (out.filename().string() + ".manifest.json"), "gen-suite",
                 {{"per_template", per_template}}, {}, outputs, c.seed);
  const auto scenarios = suite::generate_suite(c.seed, per_template);
  for (const auto& sc : scenarios) io::save_scenario(sc, out / (sc.name + ".json"));
  spdlog::info("wrote {} scenarios to {}", scenarios.size(), out.string());
  return kOk;
}

int cmd_plot_data(const std::string& log_path, const Common& c) {
  const fs::path out = c.out.empty() ? fs::path("plot.csv") : fs::path(c.out);
  write_manifest(fs::path(out.string() + ".manifest.json"), "plot-data", json::object(), {log_path}, {out.string()},
                 c.seed);
  const eval::EpisodeLog log = eval::episode_from_jsonl(io::read_file(log_path));
  std::ostringstream csv;
  csv.precision(17);
  csv << "t,accel,steer,speed,maneuver\n";
  for (const auto& s : log.steps) {
    csv << s.step * log.dt << ',' << s.control.accel << ',' << s.control.steer << ',' << s.ego.speed << ','
        << s.maneuver << '\n';
  }
  io::write_file(out, csv.str());
  return kOk;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("diffplan");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("DIFFPLAN_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Differentiable joint decision and trajectory planner"};
  app.set_version_flag("--version", DIFFPLAN_VERSION);
  app.require_subcommand(1);

  Common common;
  std::string input;
  int step = 0;
  int steps = eval::kDefaultEpisodeSteps;
  int per_template = 4;
  TrainFlags tflags;

  auto* solve_cmd = app.add_subcommand("solve", "Plan one scenario instant");
  solve_cmd->add_option("scenario", input, "scenario-v1 file")->required();
  solve_cmd->add_option("--step", step, "Replay step to plan from (ego taken from the ground truth)");
  add_common(solve_cmd, common, true);

  auto* sim_cmd = app.add_subcommand("simulate", "Closed-loop log replay over a suite");
  sim_cmd->add_option("suite", input, "Directory of scenario-v1 files")->required();
  sim_cmd->add_option("--steps", steps, "Episode length")->check(CLI::PositiveNumber);
  add_common(sim_cmd, common, true);

  auto* train_cmd = app.add_subcommand("train", "Learn cost weights and the toy initializer");
  train_cmd->add_option("suite", input, "Directory of scenario-v1 files")->required();
  train_cmd->add_option("--config", tflags.config, "Training config JSON");
  train_cmd->add_option("--resume", tflags.resume, "train-v1 checkpoint to continue from");
  train_cmd->add_option("--lr", tflags.lr, "Learning rate");
  train_cmd->add_option("--batch-size", tflags.batch, "Batch size");
  train_cmd->add_option("--epochs", tflags.epochs, "Joint epochs");
  train_cmd->add_option("--pretrain-epochs", tflags.pretrain_epochs, "Pretraining epochs");
  train_cmd->add_option("--weights", common.weights, "Initial weights-v1 file");
  add_common(train_cmd, common, false);

  auto* gen_cmd = app.add_subcommand("gen-suite", "Write the synthetic scenario suite");
  gen_cmd->add_option("--per-template", per_template, "Draws per template")->check(CLI::PositiveNumber);
  add_common(gen_cmd, common, false);

  auto* plot_cmd = app.add_subcommand("plot-data", "Control and speed traces from an episode log");
  plot_cmd->add_option("episode", input, "episode-v1 file")->required();
  add_common(plot_cmd, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*solve_cmd) return cmd_solve(input, common, step);
    if (*sim_cmd) return cmd_simulate(input, common, steps);
    if (*train_cmd) return cmd_train(input, common, tflags);
    if (*gen_cmd) return cmd_gen_suite(common, per_template);
    if (*plot_cmd) return cmd_plot_data(input, common);
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return kInputError;
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return kInputError;
  } catch (const SolveError& e) {
    spdlog::error("solver failure: {}", e.what());
    return kDegraded;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kInputError;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kInternal;
  }
  return kInternal;
}
