#pragma once

// Scenario configuration files:
//   {scenario, horizon, dt, weights, bounds, geometry, noise_sigma,
//    observation_mode, episode, estimator, solver}

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpgp/inverse_game.hpp"
#include "mpgp/mcp.hpp"
#include "mpgp/scenarios.hpp"

namespace mpgp {

enum class ScenarioKind { Tracking, RampMerge };

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Tracking;
  std::string name = "tracking";
  TrackingGameSpec tracking;
  RampMergeSpec ramp;
  double noise_sigma = 0.0;
  ObservationMode observation_mode = ObservationMode::PositionOnly;
  int episode_ticks = 50;
  double collision_tolerance = 1e-6;  // executed distance below d_min - tol is a collision
  EstimatorConfig estimator;
  SolverConfig solver;

  int horizon() const { return kind == ScenarioKind::Tracking ? tracking.horizon : ramp.horizon; }
  double dt() const { return kind == ScenarioKind::Tracking ? tracking.dt : ramp.dt; }
  int n_players() const { return kind == ScenarioKind::Tracking ? 2 : ramp.n_players; }
  double d_min() const { return kind == ScenarioKind::Tracking ? tracking.d_min : ramp.d_min; }
  double control_bound() const {
    return kind == ScenarioKind::Tracking ? tracking.control_bound : ramp.control_bound;
  }

  void validate() const {
    if (kind == ScenarioKind::Tracking) {
      tracking.validate();
    } else {
      ramp.validate();
    }
    if (noise_sigma < 0 || episode_ticks < 1 || collision_tolerance < 0) {
      throw std::invalid_argument("ScenarioConfig: invalid noise or episode length");
    }
    estimator.validate();
    solver.validate();
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  ScenarioConfig c;
  c.name = j.at("scenario").get<std::string>();
  if (c.name == "tracking") {
    c.kind = ScenarioKind::Tracking;
  } else if (c.name == "ramp_merge") {
    c.kind = ScenarioKind::RampMerge;
  } else {
    throw std::invalid_argument("unknown scenario: " + c.name);
  }
  const auto empty = nlohmann::json::object();
  const auto& w = j.contains("weights") ? j.at("weights") : empty;
  const auto& b = j.contains("bounds") ? j.at("bounds") : empty;
  const auto& g = j.contains("geometry") ? j.at("geometry") : empty;
  if (c.kind == ScenarioKind::Tracking) {
    auto& s = c.tracking;
    read_opt(j, "horizon", s.horizon);
    read_opt(j, "dt", s.dt);
    read_opt(w, "control", s.control_weight);
    read_opt(w, "penalty", s.penalty_weight);
    read_opt(b, "control", s.control_bound);
    read_opt(b, "speed", s.speed_bound);
    read_opt(b, "enforce_speed", s.enforce_speed_bound);
    read_opt(g, "d_min", s.d_min);
    read_opt(g, "arena_size", s.arena_size);
  } else {
    auto& s = c.ramp;
    read_opt(j, "horizon", s.horizon);
    read_opt(j, "dt", s.dt);
    read_opt(w, "velocity", s.velocity_weight);
    read_opt(w, "lane", s.lane_weight);
    read_opt(w, "control", s.control_weight);
    read_opt(w, "penalty", s.penalty_weight);
    read_opt(b, "control", s.control_bound);
    read_opt(b, "speed_min", s.speed_min);
    read_opt(b, "speed_max", s.speed_max);
    read_opt(g, "n_players", s.n_players);
    read_opt(g, "d_min", s.d_min);
    read_opt(g, "lane_width", s.lane_width);
    read_opt(g, "num_lanes", s.num_lanes);
    read_opt(g, "light_position", s.light_position);
    read_opt(g, "light_lanes", s.light_lanes);
    read_opt(g, "spawn_x_min", s.spawn_x_min);
    read_opt(g, "spawn_x_max", s.spawn_x_max);
    read_opt(g, "ego_x", s.ego_x);
  }
  read_opt(g, "collision_tolerance", c.collision_tolerance);
  read_opt(j, "noise_sigma", c.noise_sigma);
  if (j.contains("observation_mode")) {
    c.observation_mode = observation_mode_from_string(j.at("observation_mode").get<std::string>());
  }
  if (j.contains("episode")) read_opt(j.at("episode"), "ticks", c.episode_ticks);
  if (j.contains("estimator")) {
    const auto& e = j.at("estimator");
    read_opt(e, "learning_rate", c.estimator.learning_rate);
    read_opt(e, "max_steps", c.estimator.max_steps);
    read_opt(e, "stop_tol", c.estimator.stop_tol);
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    read_opt(s, "tolerance", c.solver.tolerance);
    read_opt(s, "max_iterations", c.solver.max_iterations);
    read_opt(s, "regularization", c.solver.regularization);
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("invalid scenario file " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace mpgp
