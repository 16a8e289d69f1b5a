#pragma once

// Interactive tracking session: a human-driven target and the adaptive
// planner as the tracking robot, plus the JSON message protocol.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>

#include "mpgp/config.hpp"
#include "mpgp/mpgp.hpp"
#include "mpgp/simulation.hpp"

namespace mpgp {

struct SessionOptions {
  double velocity_gain = 5.0;  // 1/s, acceleration per unit velocity error
  double point_gain = 1.0;     // 1/s, commanded speed per unit distance to a target point
};

/// Human command: a velocity, or a point the human walks toward.
struct VelocityCommand {
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
};
struct TargetPointCommand {
  Eigen::Vector2d point = Eigen::Vector2d::Zero();
};
using HumanCommand = std::variant<VelocityCommand, TargetPointCommand>;

struct InputAck {
  HumanCommand applied;
  bool clamped = false;
};

struct StateFrame {
  int tick = 0;
  Eigen::Vector4d human = Eigen::Vector4d::Zero();
  Eigen::Vector4d robot = Eigen::Vector4d::Zero();
  Matrix plan;  // T x 2 planned robot positions
  Eigen::Vector2d goal_estimate = Eigen::Vector2d::Zero();
  double nll = kNaN;
  bool infeasible = false;
  double compute_ms = 0.0;
};

namespace detail {

inline Eigen::Vector2d clamp_norm(const Eigen::Vector2d& v, double bound, bool& clamped) {
  const double n = v.norm();
  if (n > bound) {
    clamped = true;
    return v * (bound / n);
  }
  return v;
}

}  // namespace detail

/// One human and one robot. The robot runs the adaptive planner on
/// position-only observations of the human; the human follows its command
/// through a velocity-tracking proportional law on the double integrator.
class GameSession {
 public:
  GameSession(const ScenarioModel& model, std::uint64_t seed, SessionOptions options = {})
      : model_(model), options_(options) {
    if (model.config().kind != ScenarioKind::Tracking) {
      throw std::invalid_argument("GameSession: tracking scenario required");
    }
    if (!(options.velocity_gain > 0) || !(options.point_gain > 0)) {
      throw std::invalid_argument("GameSession: gains must be positive");
    }
    reset(seed);
  }

  void reset(std::uint64_t seed) {
    seed_ = seed;
    const Trial trial = model_.sample(seed);
    games_ = model_.games_for(trial);
    config_ = model_.planner_config(BaselineKind::AdaptiveMPGP, games_.full->game.parameters());
    config_.model = ObservationModel::opponents(2, kStateDim, ObservationMode::PositionOnly,
                                                model_.config().noise_sigma);
    planner_ = PlannerState{};
    planner_.objectives = model_.prior(trial);
    planner_.buffer = ObservationBuffer(model_.config().horizon());
    state_ = trial.initial_state;
    command_ = VelocityCommand{};
    tick_ = 0;
    noise_rng_.seed(seed ^ 0x9E3779B97F4A7C15ULL);
  }

  /// Clamps and stores the command; it takes effect from the next tick.
  InputAck handle_input(const HumanCommand& command) {
    InputAck ack;
    const auto& spec = model_.config().tracking;
    if (const auto* v = std::get_if<VelocityCommand>(&command)) {
      if (!v->velocity.allFinite()) throw std::invalid_argument("handle_input: non-finite velocity");
      ack.applied = VelocityCommand{detail::clamp_norm(v->velocity, spec.speed_bound, ack.clamped)};
    } else {
      const auto& p = std::get<TargetPointCommand>(command).point;
      if (!p.allFinite()) throw std::invalid_argument("handle_input: non-finite point");
      const double h = 0.5 * spec.arena_size;
      const Eigen::Vector2d c = p.cwiseMax(-h).cwiseMin(h);
      ack.clamped = c != p;
      ack.applied = TargetPointCommand{c};
    }
    command_ = ack.applied;
    return ack;
  }

  /// Human acceleration for the current state and command.
  Eigen::Vector2d human_control() const {
    const auto& spec = model_.config().tracking;
    const Eigen::Vector2d p = state_.segment<2>(kStateDim);
    const Eigen::Vector2d v = state_.segment<2>(kStateDim + 2);
    Eigen::Vector2d target_v;
    if (const auto* c = std::get_if<VelocityCommand>(&command_)) {
      target_v = c->velocity;
    } else {
      bool unused = false;
      target_v = detail::clamp_norm(
          options_.point_gain * (std::get<TargetPointCommand>(command_).point - p), spec.speed_bound,
          unused);
    }
    const Eigen::Vector2d a = options_.velocity_gain * (target_v - v);
    return a.cwiseMax(-spec.control_bound).cwiseMin(spec.control_bound);
  }

  /// Observe, plan, advance both players by one period.
  StateFrame tick() {
    const int N = 2;
    Observation obs{tick_, state_};
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int c = 0; c < kStateDim; ++c) obs.joint[kStateDim + c] = kNaN;
    for (int j : config_.model.selected) obs.joint[j] = state_[j] + config_.model.sigma * noise(noise_rng_);

    const auto start = std::chrono::steady_clock::now();
    const PlanResult plan = step_adaptive_mpgp(planner_, obs, games_, config_);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    Vector u(kControlDim * N);
    u.head(kControlDim) = plan.ego_control;
    u.tail(kControlDim) = human_control();
    state_ = step_joint(DoubleIntegratorDynamics{model_.config().dt()}, state_, u);

    StateFrame f;
    f.tick = tick_;
    f.robot = state_.head<4>();
    f.human = state_.segment<4>(kStateDim);
    f.plan = plan.predicted_states.leftCols(2);
    f.goal_estimate = planner_.objectives.at(1).head<2>();
    f.nll = plan.nll;
    f.infeasible = plan.infeasible;
    f.compute_ms = ms;
    ++tick_;
    return f;
  }

  const Vector& state() const { return state_; }
  const PlannerState& planner() const { return planner_; }
  std::uint64_t seed() const { return seed_; }
  int ticks() const { return tick_; }
  double period() const { return model_.config().dt(); }

 private:
  const ScenarioModel& model_;
  SessionOptions options_;
  std::uint64_t seed_ = 0;
  PlannerGames games_;
  PlannerConfig config_;
  PlannerState planner_;
  Vector state_;
  HumanCommand command_ = VelocityCommand{};
  int tick_ = 0;
  std::mt19937_64 noise_rng_;
};

// ---------------------------------------------------------------------------
// Protocol
// ---------------------------------------------------------------------------

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ResetRequest {
  std::uint64_t seed = 0;
};
using ClientMessage = std::variant<HumanCommand, ResetRequest>;

inline ClientMessage parse_client_message(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError("malformed JSON");
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ProtocolError("missing message type");
  }
  auto number = [&j](const char* key) {
    if (!j.contains(key) || !j[key].is_number()) {
      throw ProtocolError(std::string("missing numeric field '") + key + "'");
    }
    return j[key].get<double>();
  };
  const std::string type = j["type"];
  if (type == "input") return HumanCommand{VelocityCommand{{number("vx"), number("vy")}}};
  if (type == "target_point") return HumanCommand{TargetPointCommand{{number("x"), number("y")}}};
  if (type == "reset") {
    if (!j.contains("seed") || !j["seed"].is_number_unsigned()) {
      throw ProtocolError("missing non-negative integer field 'seed'");
    }
    return ResetRequest{j["seed"].get<std::uint64_t>()};
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

inline nlohmann::ordered_json frame_json(const StateFrame& f) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  auto arr = [&num](const auto& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(num(v[k]));
    return a;
  };
  nlohmann::ordered_json plan = nlohmann::ordered_json::array();
  for (Eigen::Index t = 0; t < f.plan.rows(); ++t) plan.push_back({num(f.plan(t, 0)), num(f.plan(t, 1))});
  nlohmann::ordered_json j;
  j["type"] = "frame";
  j["tick"] = f.tick;
  j["human"] = arr(f.human);
  j["robot"] = arr(f.robot);
  j["plan"] = std::move(plan);
  j["goal_estimate"] = arr(f.goal_estimate);
  j["nll"] = num(f.nll);
  j["status"] = f.infeasible ? "infeasible" : "ok";
  j["compute_ms"] = num(f.compute_ms);
  return j;
}

inline nlohmann::ordered_json ack_json(const InputAck& ack) {
  nlohmann::ordered_json j;
  j["type"] = "ack";
  if (const auto* v = std::get_if<VelocityCommand>(&ack.applied)) {
    j["for"] = "input";
    j["vx"] = v->velocity.x();
    j["vy"] = v->velocity.y();
  } else {
    const auto& p = std::get<TargetPointCommand>(ack.applied).point;
    j["for"] = "target_point";
    j["x"] = p.x();
    j["y"] = p.y();
  }
  j["clamped"] = ack.clamped;
  return j;
}

inline nlohmann::ordered_json error_json(const std::string& message) {
  nlohmann::ordered_json j;
  j["type"] = "error";
  j["message"] = message;
  return j;
}

/// Applies one client message to the session and returns the reply text.
inline std::string handle_client_message(GameSession& session, const std::string& text) {
  try {
    const ClientMessage msg = parse_client_message(text);
    if (const auto* cmd = std::get_if<HumanCommand>(&msg)) {
      return ack_json(session.handle_input(*cmd)).dump();
    }
    const auto seed = std::get<ResetRequest>(msg).seed;
    session.reset(seed);
    nlohmann::ordered_json j;
    j["type"] = "ack";
    j["for"] = "reset";
    j["seed"] = seed;
    return j.dump();
  } catch (const ProtocolError& e) {
    return error_json(e.what()).dump();
  } catch (const std::invalid_argument& e) {
    return error_json(e.what()).dump();
  }
}

}  // namespace mpgp
