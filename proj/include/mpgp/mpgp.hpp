#pragma once

// Receding-horizon model-predictive game play with online objective
// estimation, and the two comparison planners.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpgp/game.hpp"
#include "mpgp/inverse_game.hpp"
#include "mpgp/mcp.hpp"
#include "mpgp/scenarios.hpp"

namespace mpgp {

enum class BaselineKind { GroundTruth, AdaptiveMPGP, ConstantVelocityMPC, KKTConstrainedEstimator };

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::GroundTruth: return "ground_truth";
    case BaselineKind::AdaptiveMPGP: return "adaptive_mpgp";
    case BaselineKind::ConstantVelocityMPC: return "cv_mpc";
    case BaselineKind::KKTConstrainedEstimator: return "kkt_constrained";
  }
  return "unknown";
}

inline BaselineKind baseline_from_string(const std::string& s) {
  for (auto k : {BaselineKind::GroundTruth, BaselineKind::AdaptiveMPGP,
                 BaselineKind::ConstantVelocityMPC, BaselineKind::KKTConstrainedEstimator}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown method: " + s);
}

/// The compiled games one ego planner needs. All players share the state
/// layout (px, py, vx, vy) and input layout (ax, ay).
struct PlannerGames {
  std::shared_ptr<const CompiledGame> full;        // forward game and inverse game
  std::shared_ptr<const CompiledGame> kkt;         // inverse game without inequality rows
  std::shared_ptr<const CompiledGame> prediction;  // ego alone against frozen predictions
  Vector ego_objective;                            // known to the ego
  double dt = 0.1;
  double control_bound = 2.0;

  int num_players() const { return full->game.num_players(); }
  int horizon() const { return full->game.horizon(); }
};

struct PlannerConfig {
  BaselineKind kind = BaselineKind::AdaptiveMPGP;
  EstimatorConfig estimator;
  SolverConfig solver;
  ObservationModel model;
};

struct PlannerState {
  std::vector<Vector> objectives;  // theta tilde, one block per player (ego's is known)
  ObservationBuffer buffer{10};
  std::optional<Vector> last_solution;  // forward-game z* (warm start)
  std::optional<Vector> last_inverse;   // inverse-game z* (warm start)
  int inverse_window_start = -1;        // tick of the window start used by last_inverse
  Vector window_start_estimate;         // opponents' states at that window start
  int tick = 0;
};

struct PlanResult {
  Vector ego_control;
  Matrix predicted_states;  // T x joint state dim
  SolveStatus status = SolveStatus::Solved;
  bool infeasible = false;
  int solver_iterations = 0;
  // Estimator diagnostics for this tick.
  int estimator_steps = 0;
  double nll = std::numeric_limits<double>::quiet_NaN();
  bool estimator_ok = false;
};

/// Initial guess for a solve: every player coasts with zero input from x0;
/// multipliers zero.
inline Vector rollout_guess(const CompiledGame& g, const Vector& x0, double dt) {
  const auto& game = g.game;
  JointTrajectory tr{Matrix(game.horizon(), game.joint_state_dim()),
                     Matrix::Zero(game.horizon(), game.joint_control_dim())};
  const DoubleIntegratorDynamics dyn{dt};
  Vector x = x0;
  for (int t = 0; t < game.horizon(); ++t) {
    tr.states.row(t) = x.transpose();
    x = step_joint(dyn, x, Vector::Zero(game.joint_control_dim()));
  }
  Vector z = Vector::Zero(g.layout.dimension);
  embed_trajectories(g.layout, tr, z);
  return z;
}

/// Warm start: last solution shifted one step with the pinned initial knot
/// replaced by the current state, or a rollout if there is none.
inline Vector warm_start(const CompiledGame& g, const std::optional<Vector>& last,
                         const Vector& x0, double dt) {
  if (!last || last->size() != g.layout.dimension) return rollout_guess(g, x0, dt);
  Vector z = shift_primal(g.layout, *last);
  JointTrajectory tr = extract_trajectories(g.layout, z);
  tr.states.row(0) = x0.transpose();
  embed_trajectories(g.layout, tr, z);
  return z;
}

/// Solve from the warm start; if that fails, retry once from a zero-input
/// rollout and keep whichever result is better.
inline MCPSolution solve_with_restart(const CompiledGame& g, const Vector& theta,
                                      const Vector& warm, const Vector& x0, double dt,
                                      const SolverConfig& solver) {
  MCPSolution sol = solve_mcp(g.problem, theta, warm, solver);
  if (sol.solved()) return sol;
  MCPSolution cold = solve_mcp(g.problem, theta, rollout_guess(g, x0, dt), solver);
  cold.iterations += sol.iterations;
  if (cold.solved() || cold.merit_residual < sol.merit_residual) return cold;
  sol.iterations = cold.iterations;
  return sol;
}

namespace detail {

inline Vector ego_slice(const Vector& joint) { return joint.head(kStateDim); }

inline Eigen::Vector2d fd_velocity_between(const Observation& a, const Observation& b, int player,
                                           double dt) {
  return (b.joint.segment<2>(kStateDim * player) - a.joint.segment<2>(kStateDim * player)) / dt;
}

/// Opponent velocity from the last two position observations.
inline Eigen::Vector2d fd_velocity(const ObservationBuffer& buf, int player, double dt) {
  if (buf.size() < 2) return Eigen::Vector2d::Zero();
  return fd_velocity_between(buf[buf.size() - 2], buf.newest(), player, dt);
}

/// Current joint state for the forward game: ego exact, opponents as
/// observed, unobserved velocities from the last two observations.
inline Vector current_joint_state(const ObservationBuffer& buf, const ObservationModel& model,
                                  int n_players, double dt) {
  Vector x = buf.newest().joint;
  if (model.mode == ObservationMode::Full) return x;
  for (int i = 1; i < n_players; ++i) x.segment<2>(kStateDim * i + 2) = fd_velocity(buf, i, dt);
  return x;
}

inline PlanResult finalize_plan(const CompiledGame& g, const MCPSolution& sol, PlannerState& state,
                                const Vector& x0, double dt, double control_bound) {
  PlanResult r;
  r.status = sol.status;
  r.solver_iterations = sol.iterations;
  if (sol.solved()) {
    JointTrajectory tr = extract_trajectories(g.layout, sol.z_star);
    r.ego_control = tr.controls.row(0).head(kControlDim).transpose();
    r.predicted_states = tr.states;
    state.last_solution = sol.z_star;
  } else {
    r.infeasible = true;
    if (state.last_solution && state.last_solution->size() == g.layout.dimension) {
      Vector shifted = shift_primal(g.layout, *state.last_solution);
      JointTrajectory tr = extract_trajectories(g.layout, shifted);
      r.ego_control = tr.controls.row(0).head(kControlDim).transpose();
      r.predicted_states = tr.states;
      state.last_solution = shifted;
    } else {
      r.ego_control = Vector::Zero(kControlDim);
      r.predicted_states = extract_trajectories(g.layout, rollout_guess(g, x0, dt)).states;
    }
  }
  r.ego_control = r.ego_control.cwiseMax(-control_bound).cwiseMin(control_bound);
  return r;
}

}  // namespace detail

/// Entries of the packed parameter vector the estimator may move: the
/// opponents' objectives and, under partial observation, their
/// window-start states.
inline std::vector<bool> estimator_mask(const ParameterLayout& pl, int n_players, bool partial) {
  std::vector<bool> mask(static_cast<size_t>(pl.size()), false);
  for (int i = 1; i < n_players; ++i) {
    for (int k = 0; k < pl.objective_dims[static_cast<size_t>(i)]; ++k) {
      mask[static_cast<size_t>(pl.objective_offset(i) + k)] = true;
    }
    if (partial) {
      for (int k = 0; k < kStateDim; ++k) mask[static_cast<size_t>(kStateDim * i + k)] = true;
    }
  }
  return mask;
}

/// Runs the inverse game on the buffered window and updates the objective
/// estimates (and, for partial observations, the opponents' window-start
/// states) in `state`. Returns the estimator result.
inline EstimateResult run_estimator(PlannerState& state, const CompiledGame& inverse,
                                    const PlannerGames& games, const PlannerConfig& config) {
  const int N = games.num_players();
  const ObservationBuffer& buf = state.buffer;
  const bool partial = config.model.mode == ObservationMode::PositionOnly;
  const int oldest_tick = buf.oldest().tick;

  // Window-start joint state.
  Vector x_start = buf.oldest().joint;
  if (partial) {
    Vector opp(kStateDim * (N - 1));
    bool have = false;
    if (state.inverse_window_start == oldest_tick && state.window_start_estimate.size() == opp.size()) {
      opp = state.window_start_estimate;
      have = true;
    } else if (state.last_inverse && state.inverse_window_start == oldest_tick - 1) {
      // The window slid by one tick: advance the previous estimate along
      // its own solution.
      const JointTrajectory tr = extract_trajectories(inverse.layout, *state.last_inverse);
      opp = tr.states.row(1).tail(kStateDim * (N - 1)).transpose();
      for (int i = 1; i < N; ++i) {
        opp.segment<2>(kStateDim * (i - 1)) = x_start.segment<2>(kStateDim * i);
      }
      have = true;
    }
    if (!have) {
      for (int i = 1; i < N; ++i) {
        opp.segment<2>(kStateDim * (i - 1)) = x_start.segment<2>(kStateDim * i);
        const Vector& a = buf[0].joint;
        const Vector& b = buf[1].joint;
        opp.segment<2>(kStateDim * (i - 1) + 2) =
            (b.segment<2>(kStateDim * i) - a.segment<2>(kStateDim * i)) / games.dt;
      }
    }
    x_start.tail(kStateDim * (N - 1)) = opp;
  }

  Theta th{x_start, state.objectives, Vector(0)};
  const Vector packed = th.pack();
  const ParameterLayout& pl = inverse.game.parameters();
  const std::vector<bool> mask = estimator_mask(pl, N, partial);
  EstimatorConfig est = config.estimator;
  if (est.theta_bounds && est.theta_bounds->size() != packed.size()) {
    throw std::invalid_argument("run_estimator: theta_bounds size");
  }
  Vector guess = (state.last_inverse && state.last_inverse->size() == inverse.layout.dimension)
                     ? *state.last_inverse
                     : rollout_guess(inverse, x_start, games.dt);
  if (state.inverse_window_start != oldest_tick && state.last_inverse) {
    guess = warm_start(inverse, state.last_inverse, x_start, games.dt);
  }
  EstimateResult res = update_estimate(inverse, packed, buf, config.model, est, mask, guess,
                                       config.solver);
  if (!res.ok && state.last_inverse) {
    res = update_estimate(inverse, packed, buf, config.model, est, mask,
                          rollout_guess(inverse, x_start, games.dt), config.solver);
  }
  if (res.ok) {
    Theta out = Theta::unpack(pl, res.theta);
    for (int i = 1; i < N; ++i) state.objectives[static_cast<size_t>(i)] = out.objectives[static_cast<size_t>(i)];
    state.last_inverse = res.z_star;
    state.inverse_window_start = oldest_tick;
    state.window_start_estimate = out.initial_state.tail(kStateDim * (N - 1));
  }
  return res;
}

/// One planner tick for the estimating methods (Adaptive MPGP and the
/// KKT-constrained estimator baseline, selected by config.kind).
inline PlanResult step_adaptive_mpgp(PlannerState& state, const Observation& observation,
                                     const PlannerGames& games, const PlannerConfig& config) {
  const int N = games.num_players();
  state.buffer.push(observation);
  state.tick = observation.tick;

  EstimateResult est;
  const bool estimate = config.estimator.max_steps > 0 && state.buffer.size() >= 2 && N > 1 &&
                        config.kind != BaselineKind::GroundTruth;
  const CompiledGame& inverse =
      config.kind == BaselineKind::KKTConstrainedEstimator ? *games.kkt : *games.full;
  if (estimate) est = run_estimator(state, inverse, games, config);
  const Vector x0 = detail::current_joint_state(state.buffer, config.model, N, games.dt);
  Theta th{x0, state.objectives, Vector(0)};
  const CompiledGame& fwd = *games.full;
  const Vector z0 = warm_start(fwd, state.last_solution, x0, games.dt);
  MCPSolution sol = solve_with_restart(fwd, th.pack(), z0, x0, games.dt, config.solver);
  PlanResult r = detail::finalize_plan(fwd, sol, state, x0, games.dt, games.control_bound);
  r.estimator_steps = est.steps;
  r.nll = est.nll_final;
  r.estimator_ok = est.ok;
  return r;
}

/// Constant-velocity predictions of every opponent from the newest
/// observation: T x (2 (N - 1)) positions, knot t at time t * dt.
inline Matrix constant_velocity_predictions(const ObservationBuffer& buf,
                                            const ObservationModel& model, int n_players,
                                            int horizon, double dt) {
  if (buf.empty()) throw std::invalid_argument("constant_velocity_predictions: empty buffer");
  Matrix P(horizon, 2 * (n_players - 1));
  const Vector& y = buf.newest().joint;
  for (int i = 1; i < n_players; ++i) {
    const Eigen::Vector2d p = y.segment<2>(kStateDim * i);
    const Eigen::Vector2d v = model.mode == ObservationMode::Full
                                  ? Eigen::Vector2d(y.segment<2>(kStateDim * i + 2))
                                  : detail::fd_velocity(buf, i, dt);
    for (int t = 0; t < horizon; ++t) {
      P.row(t).segment<2>(2 * (i - 1)) = (p + v * (t * dt)).transpose();
    }
  }
  return P;
}

/// Constant-velocity MPC baseline: the ego alone against frozen
/// extrapolations of the opponents, through the same MCP backend.
inline PlanResult plan_constant_velocity_mpc(PlannerState& state, const Observation& observation,
                                             const PlannerGames& games,
                                             const PlannerConfig& config) {
  const int N = games.num_players();
  const int T = games.horizon();
  state.buffer.push(observation);
  state.tick = observation.tick;
  const Matrix P = constant_velocity_predictions(state.buffer, config.model, N, T, games.dt);
  Vector extra(2 * T * (N - 1));
  for (int j = 1; j < N; ++j) {
    for (int t = 0; t < T; ++t) {
      extra.segment<2>(2 * ((j - 1) * T + t)) = P.row(t).segment<2>(2 * (j - 1)).transpose();
    }
  }
  const Vector ego = detail::ego_slice(observation.joint);
  Theta th{ego, {games.ego_objective}, extra};
  const CompiledGame& g = *games.prediction;
  const Vector z0 = warm_start(g, state.last_solution, ego, games.dt);
  MCPSolution sol = solve_with_restart(g, th.pack(), z0, ego, games.dt, config.solver);
  PlanResult r = detail::finalize_plan(g, sol, state, ego, games.dt, games.control_bound);
  // Joint prediction: ego plan plus the frozen opponent extrapolations.
  Matrix joint(T, kStateDim * N);
  joint.setZero();
  joint.leftCols(kStateDim) = r.predicted_states;
  for (int j = 1; j < N; ++j) {
    joint.block(0, kStateDim * j, T, 2) = P.block(0, 2 * (j - 1), T, 2);
  }
  r.predicted_states = joint;
  return r;
}

/// KKT-constrained baseline estimate: the same estimator on the game with
/// every inequality row removed (the cubic penalties remain in the costs).
/// Returns the updated objective blocks; the prior when the buffer is empty.
inline std::vector<Vector> estimate_kkt_constrained(PlannerState& state, const PlannerGames& games,
                                                    const PlannerConfig& config) {
  if (state.buffer.size() < 2) return state.objectives;
  run_estimator(state, *games.kkt, games, config);
  return state.objectives;
}

}  // namespace mpgp
