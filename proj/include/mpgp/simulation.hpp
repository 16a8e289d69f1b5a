#pragma once

// Closed-loop episodes, per-episode metrics and the Monte Carlo runner
// with CSV + JSON output.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mpgp/config.hpp"
#include "mpgp/game.hpp"
#include "mpgp/inverse_game.hpp"
#include "mpgp/mpgp.hpp"
#include "mpgp/scenarios.hpp"

namespace mpgp {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Everything scenario-specific the closed loop needs.
class ScenarioModel {
 public:
  explicit ScenarioModel(ScenarioConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.kind == ScenarioKind::Tracking) {
      auto full = std::make_shared<CompiledGame>(make_tracking_game(config_.tracking));
      tracking_games_.full = full;
      tracking_games_.kkt = std::make_shared<CompiledGame>(full->game.without_inequalities());
      tracking_games_.prediction =
          std::make_shared<CompiledGame>(make_tracking_prediction_game(config_.tracking));
      tracking_games_.ego_objective = Vector(0);
      tracking_games_.dt = config_.tracking.dt;
      tracking_games_.control_bound = config_.tracking.control_bound;
    }
  }

  const ScenarioConfig& config() const { return config_; }
  int n_players() const { return config_.n_players(); }

  Trial sample(std::uint64_t seed) const {
    return config_.kind == ScenarioKind::Tracking ? sample_tracking_trial(config_.tracking, seed)
                                                  : sample_ramp_merge_trial(config_.ramp, seed);
  }

  PlannerGames games_for(const Trial& trial) const {
    if (config_.kind == ScenarioKind::Tracking) return tracking_games_;
    const auto& s = config_.ramp;
    // Opponents are held by the light if they start in a blocked lane, the
    // ego if it is merging into one.
    auto blocked = [&s](double y) {
      return std::find(s.light_lanes.begin(), s.light_lanes.end(), s.lane_of(y)) !=
             s.light_lanes.end();
    };
    std::vector<bool> light(static_cast<size_t>(s.n_players), false);
    light[0] = blocked(trial.objectives.at(0)[1]);
    for (int i = 1; i < s.n_players; ++i) {
      light[static_cast<size_t>(i)] = blocked(trial.initial_state[kStateDim * i + 1]);
    }
    PlannerGames g;
    auto full = std::make_shared<CompiledGame>(make_ramp_merge(s, light));
    g.full = full;
    g.kkt = std::make_shared<CompiledGame>(full->game.without_inequalities());
    g.prediction = std::make_shared<CompiledGame>(make_ramp_merge_prediction_game(s, light[0]));
    g.ego_objective = trial.objectives.at(0);
    g.dt = s.dt;
    g.control_bound = s.control_bound;
    return g;
  }

  /// Initial objective estimates: the ego's own objective is known, the
  /// opponents start at the scenario prior.
  std::vector<Vector> prior(const Trial& trial) const {
    std::vector<Vector> out = trial.objectives;
    if (config_.kind == ScenarioKind::Tracking) {
      out[1] = Vector::Zero(2);  // arena center
    } else {
      const auto& s = config_.ramp;
      for (size_t i = 1; i < out.size(); ++i) {
        out[i] = Vector(2);
        out[i] << 0.5 * (s.speed_min + s.speed_max), 0.5 * s.road_top();
      }
    }
    return out;
  }

  /// Clamp box for the packed inverse-game parameter vector.
  BoxBounds theta_bounds(const ParameterLayout& pl) const {
    Vector lo = Vector::Constant(pl.size(), -kInf);
    Vector up = Vector::Constant(pl.size(), kInf);
    for (int i = 0; i < static_cast<int>(pl.objective_dims.size()); ++i) {
      const int off = pl.objective_offset(i);
      if (config_.kind == ScenarioKind::Tracking) {
        if (pl.objective_dims[static_cast<size_t>(i)] == 2) {
          const double h = 0.5 * config_.tracking.arena_size;
          lo.segment(off, 2).setConstant(-h);
          up.segment(off, 2).setConstant(h);
        }
      } else {
        const auto& s = config_.ramp;
        lo[off] = 0.0;
        up[off] = 2.0 * s.speed_max;
        lo[off + 1] = -s.lane_width;
        up[off + 1] = s.road_top();
      }
    }
    return {lo, up};
  }

  PlannerConfig planner_config(BaselineKind kind, const ParameterLayout& pl) const {
    PlannerConfig pc;
    pc.kind = kind;
    pc.estimator = config_.estimator;
    pc.estimator.theta_bounds = theta_bounds(pl);
    pc.solver = config_.solver;
    pc.model = ObservationModel::opponents(n_players(), kStateDim, config_.observation_mode,
                                           config_.noise_sigma);
    return pc;
  }

  double player_cost(const Matrix& X, const Matrix& U, int player, const Trial& trial) const {
    if (config_.kind == ScenarioKind::Tracking) {
      return tracking_cost(config_.tracking, X, U, player, trial.objectives.at(1));
    }
    return ramp_merge_cost(config_.ramp, X, U, player,
                           trial.objectives.at(static_cast<size_t>(player)));
  }

 private:
  ScenarioConfig config_;
  PlannerGames tracking_games_;
};

struct TickTrace {
  int tick = 0;
  Vector theta_estimate;    // opponents' objective blocks stacked; empty if none
  Matrix predicted_states;  // T x joint state dim
  SolveStatus status = SolveStatus::Solved;
  bool infeasible = false;
  double nll = kNaN;
  int estimator_steps = 0;
  int solver_iterations = 0;
  double compute_ms = 0.0;  // not written to CSV
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  BaselineKind method = BaselineKind::AdaptiveMPGP;
  Matrix states;    // (K + 1) x joint state dim, executed
  Matrix controls;  // K x joint control dim, executed
  Vector theta_true;  // opponents' objective blocks stacked
  std::vector<TickTrace> ticks;
  double d_min = 0.5;
  double collision_tolerance = 1e-6;
  double ego_cost = 0.0;
  double opponent_cost = 0.0;
  bool constraint_active = false;  // a collision row was active in a ground-truth solve
  int ground_truth_failures = 0;
};

inline Vector stack_opponents(const std::vector<Vector>& objectives) {
  Eigen::Index n = 0;
  for (size_t i = 1; i < objectives.size(); ++i) n += objectives[i].size();
  Vector out(n);
  Eigen::Index k = 0;
  for (size_t i = 1; i < objectives.size(); ++i) {
    out.segment(k, objectives[i].size()) = objectives[i];
    k += objectives[i].size();
  }
  return out;
}

namespace detail {

inline bool collision_row_active(const CompiledGame& g, const Vector& z, double tol = 1e-6) {
  for (size_t k = 0; k < g.game.rows().size(); ++k) {
    if (g.game.rows()[k].tag == "collision" && z[g.layout.row_of_constraint[k]] > tol) return true;
  }
  return false;
}

}  // namespace detail

struct SimulationOptions {
  int ticks = -1;  // -1: from the scenario config
};

/// Closed-loop episode: the ego runs `method`, opponents execute the first
/// inputs of the ground-truth game solved at the true parameters.
inline EpisodeTrace simulate_episode(const ScenarioModel& model, const Trial& trial,
                                     BaselineKind method, const SimulationOptions& options = {}) {
  const ScenarioConfig& cfg = model.config();
  const int N = model.n_players();
  const int K = options.ticks > 0 ? options.ticks : cfg.episode_ticks;
  const PlannerGames games = model.games_for(trial);
  const CompiledGame& gt = *games.full;
  const PlannerConfig pc = model.planner_config(method, gt.game.parameters());
  const DoubleIntegratorDynamics dyn{cfg.dt()};

  EpisodeTrace tr;
  tr.seed = trial.seed;
  tr.method = method;
  tr.d_min = cfg.d_min();
  tr.collision_tolerance = cfg.collision_tolerance;
  tr.theta_true = stack_opponents(trial.objectives);
  tr.states.resize(K + 1, kStateDim * N);
  tr.controls.resize(K, kControlDim * N);

  PlannerState state;
  state.objectives = model.prior(trial);
  state.buffer = ObservationBuffer(cfg.horizon());
  std::optional<Vector> gt_last;
  std::mt19937_64 noise_rng(trial.seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);

  Vector x = trial.initial_state;
  tr.states.row(0) = x.transpose();
  for (int k = 0; k < K; ++k) {
    // Sensing.
    Observation obs{k, x};
    for (int i = 1; i < N; ++i) {
      for (int c = 0; c < kStateDim; ++c) obs.joint[kStateDim * i + c] = kNaN;
    }
    for (int j : pc.model.selected) obs.joint[j] = x[j] + cfg.noise_sigma * noise(noise_rng);

    // Opponents: ground-truth game at the true parameters.
    Theta th_true{x, trial.objectives, Vector(0)};
    const Vector gt_guess = warm_start(gt, gt_last, x, cfg.dt());
    MCPSolution gt_sol = solve_with_restart(gt, th_true.pack(), gt_guess, x, cfg.dt(), cfg.solver);
    Vector gt_z;
    if (gt_sol.solved()) {
      gt_z = gt_sol.z_star;
      if (detail::collision_row_active(gt, gt_z)) tr.constraint_active = true;
    } else {
      ++tr.ground_truth_failures;
      gt_z = gt_last ? shift_primal(gt.layout, *gt_last) : rollout_guess(gt, x, cfg.dt());
    }
    gt_last = gt_z;
    const JointTrajectory gt_traj = extract_trajectories(gt.layout, gt_z);
    Vector u = gt_traj.controls.row(0).transpose();
    u = u.cwiseMax(-games.control_bound).cwiseMin(games.control_bound);

    // Ego.
    TickTrace tick;
    tick.tick = k;
    const auto start = std::chrono::steady_clock::now();
    PlanResult plan;
    switch (method) {
      case BaselineKind::GroundTruth:
        plan.ego_control = u.head(kControlDim);
        plan.predicted_states = gt_traj.states;
        plan.status = gt_sol.status;
        plan.infeasible = !gt_sol.solved();
        plan.solver_iterations = gt_sol.iterations;
        tick.theta_estimate = tr.theta_true;
        break;
      case BaselineKind::ConstantVelocityMPC:
        plan = plan_constant_velocity_mpc(state, obs, games, pc);
        break;
      case BaselineKind::AdaptiveMPGP:
      case BaselineKind::KKTConstrainedEstimator:
        plan = step_adaptive_mpgp(state, obs, games, pc);
        tick.theta_estimate = stack_opponents(state.objectives);
        break;
    }
    tick.compute_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    tick.predicted_states = plan.predicted_states;
    tick.status = plan.status;
    tick.infeasible = plan.infeasible;
    tick.nll = plan.nll;
    tick.estimator_steps = plan.estimator_steps;
    tick.solver_iterations = plan.solver_iterations;
    tr.ticks.push_back(std::move(tick));

    u.head(kControlDim) = plan.ego_control;
    tr.controls.row(k) = u.transpose();
    x = step_joint(dyn, x, u);
    tr.states.row(k + 1) = x.transpose();
  }
  tr.ego_cost = model.player_cost(tr.states, tr.controls, 0, trial);
  for (int i = 1; i < N; ++i) tr.opponent_cost += model.player_cost(tr.states, tr.controls, i, trial);
  return tr;
}

/// Parameter regeneration: along a ground-truth closed loop, each tick
/// observes the equilibrium window predicted by the ground-truth game from
/// the true state, so the generating parameters reproduce every window
/// exactly (up to the observation noise). The full and KKT-constrained
/// estimators see identical windows and warm-start their objective
/// estimates across ticks; opponents' window-start states are re-estimated
/// from the data each tick under position-only observations.
namespace detail {

/// Observation window of a planned joint trajectory: the ego's own state
/// exactly, the opponents' selected entries with additive noise
/// sigma * draw(), their other entries NaN.
template <class Draw>
ObservationBuffer observe_window(const Matrix& states, const ObservationModel& model, int n_players,
                                 Draw&& draw) {
  const int T = static_cast<int>(states.rows());
  ObservationBuffer buf(T);
  for (int t = 0; t < T; ++t) {
    Observation obs{t, states.row(t).transpose()};
    for (int i = 1; i < n_players; ++i) {
      for (int c = 0; c < kStateDim; ++c) obs.joint[kStateDim * i + c] = kNaN;
    }
    for (int j : model.selected) obs.joint[j] = states(t, j) + model.sigma * draw();
    buf.push(std::move(obs));
  }
  return buf;
}

/// Window-start joint state guess: the ego's state exact, opponents at
/// their first observation with finite-difference velocities.
inline Vector window_start_guess(const ObservationBuffer& buf, const Vector& ego_joint,
                                 const ObservationModel& model, int n_players, double dt) {
  if (model.mode == ObservationMode::Full) return buf[0].joint;
  Vector x = ego_joint;
  for (int i = 1; i < n_players; ++i) {
    x.segment<2>(kStateDim * i) = buf[0].joint.segment<2>(kStateDim * i);
    x.segment<2>(kStateDim * i + 2) = fd_velocity_between(buf[0], buf[1], i, dt);
  }
  return x;
}

}  // namespace detail

struct RegenerationResult {
  std::uint64_t seed = 0;
  bool constraint_active = false;  // a collision row was active in some window
  Vector theta_true;
  Vector estimate_full;
  Vector estimate_kkt;
  double error_full = kNaN;
  double error_kkt = kNaN;
  std::vector<double> errors_full;  // per tick
  std::vector<double> errors_kkt;
  int steps_full = 0;
  int steps_kkt = 0;
};

inline RegenerationResult run_regeneration(const ScenarioModel& model, const Trial& trial,
                                           double sigma, int ticks) {
  const ScenarioConfig& cfg = model.config();
  const int N = model.n_players();
  const int T = cfg.horizon();
  const double dt = cfg.dt();
  const PlannerGames games = model.games_for(trial);
  const CompiledGame& gt = *games.full;
  const ParameterLayout& pl = gt.game.parameters();
  PlannerConfig pc = model.planner_config(BaselineKind::AdaptiveMPGP, pl);
  pc.model.sigma = sigma;
  const bool partial = pc.model.mode == ObservationMode::PositionOnly;

  const std::vector<bool> mask = estimator_mask(pl, N, partial);

  RegenerationResult res;
  res.seed = trial.seed;
  res.theta_true = stack_opponents(trial.objectives);
  std::mt19937_64 noise_rng(trial.seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  const DoubleIntegratorDynamics dyn{dt};
  const std::array<const CompiledGame*, 2> estimators{games.full.get(), games.kkt.get()};
  std::array<std::vector<Vector>, 2> objectives{model.prior(trial), model.prior(trial)};
  std::array<std::optional<Vector>, 2> last_z;
  std::optional<Vector> gt_last;

  Vector x = trial.initial_state;
  for (int k = 0; k < ticks; ++k) {
    Theta th_true{x, trial.objectives, Vector(0)};
    const MCPSolution gt_sol = solve_with_restart(gt, th_true.pack(), warm_start(gt, gt_last, x, dt),
                                                  x, dt, cfg.solver);
    if (!gt_sol.solved()) break;
    gt_last = gt_sol.z_star;
    if (detail::collision_row_active(gt, gt_sol.z_star)) res.constraint_active = true;
    const JointTrajectory window = extract_trajectories(gt.layout, gt_sol.z_star);

    const ObservationBuffer buf =
        detail::observe_window(window.states, pc.model, N, [&] { return noise(noise_rng); });
    const Vector x_start = detail::window_start_guess(buf, x, pc.model, N, dt);

    for (size_t m = 0; m < estimators.size(); ++m) {
      const CompiledGame& G = *estimators[m];
      const Vector packed = Theta{x_start, objectives[m], Vector(0)}.pack();
      EstimateResult est = update_estimate(G, packed, buf, pc.model, pc.estimator, mask,
                                           warm_start(G, last_z[m], x_start, dt), pc.solver);
      if (!est.ok && last_z[m]) {
        est = update_estimate(G, packed, buf, pc.model, pc.estimator, mask,
                              rollout_guess(G, x_start, dt), pc.solver);
      }
      if (est.ok) {
        const Theta out = Theta::unpack(pl, est.theta);
        for (int i = 1; i < N; ++i) {
          objectives[m][static_cast<size_t>(i)] = out.objectives[static_cast<size_t>(i)];
        }
        last_z[m] = est.z_star;
      }
      const double err = (stack_opponents(objectives[m]) - res.theta_true).norm();
      (m == 0 ? res.errors_full : res.errors_kkt).push_back(err);
      (m == 0 ? res.steps_full : res.steps_kkt) += est.steps;
    }

    Vector u = window.controls.row(0).transpose();
    u = u.cwiseMax(-games.control_bound).cwiseMin(games.control_bound);
    x = step_joint(dyn, x, u);
  }
  res.estimate_full = stack_opponents(objectives[0]);
  res.estimate_kkt = stack_opponents(objectives[1]);
  res.error_full = res.errors_full.empty() ? kNaN : res.errors_full.back();
  res.error_kkt = res.errors_kkt.empty() ? kNaN : res.errors_kkt.back();
  return res;
}

struct TickMetrics {
  int tick = 0;
  double theta_error = kNaN;
  double prediction_error = kNaN;
  double nll = kNaN;
  std::string status;
  bool infeasible = false;
  bool collision = false;
  double min_distance = kNaN;
  int estimator_steps = 0;
};

struct TrialRecord {
  std::string scenario;
  std::uint64_t seed = 0;
  BaselineKind method = BaselineKind::AdaptiveMPGP;
  std::vector<TickMetrics> ticks;
  int collisions = 0;
  int infeasible = 0;
  int num_ticks = 0;
  double ego_cost = 0.0;
  double opponent_cost = 0.0;
  double normalized_ego_cost = kNaN;
  double normalized_opponent_cost = kNaN;
  double final_theta_error = kNaN;
  double mean_prediction_error = kNaN;
  bool constraint_active = false;
};

/// Table-style metrics of one episode. The prediction error at tick k
/// compares the tau-step-ahead predicted opponent positions with the
/// realized ones at k + tau, averaged over the available tau in [1, T-1]
/// and over opponents.
inline TrialRecord compute_metrics(const EpisodeTrace& trace) {
  TrialRecord r;
  r.seed = trace.seed;
  r.method = trace.method;
  r.ego_cost = trace.ego_cost;
  r.opponent_cost = trace.opponent_cost;
  r.constraint_active = trace.constraint_active;
  const int K = static_cast<int>(trace.ticks.size());
  const int N = static_cast<int>(trace.states.cols()) / kStateDim;
  r.num_ticks = K;
  double pred_sum = 0.0;
  int pred_count = 0;
  for (int k = 0; k < K; ++k) {
    const TickTrace& t = trace.ticks[static_cast<size_t>(k)];
    TickMetrics m;
    m.tick = t.tick;
    m.nll = t.nll;
    m.status = to_string(t.status);
    m.infeasible = t.infeasible;
    m.estimator_steps = t.estimator_steps;
    if (t.theta_estimate.size() > 0 && t.theta_estimate.size() == trace.theta_true.size()) {
      m.theta_error = (t.theta_estimate - trace.theta_true).norm();
    }
    double err = 0.0;
    int count = 0;
    const int T = static_cast<int>(t.predicted_states.rows());
    for (int tau = 1; tau < T && k + tau < trace.states.rows(); ++tau) {
      for (int i = 1; i < N; ++i) {
        err += (t.predicted_states.row(tau).segment<2>(kStateDim * i) -
                trace.states.row(k + tau).segment<2>(kStateDim * i))
                   .norm();
        ++count;
      }
    }
    if (count > 0) {
      m.prediction_error = err / count;
      pred_sum += m.prediction_error;
      ++pred_count;
    }
    if (k + 1 < trace.states.rows()) {
      m.min_distance = min_pairwise_distance(trace.states.row(k + 1).transpose());
      m.collision = m.min_distance < trace.d_min - trace.collision_tolerance;
    }
    r.collisions += m.collision ? 1 : 0;
    r.infeasible += m.infeasible ? 1 : 0;
    r.ticks.push_back(std::move(m));
  }
  if (!r.ticks.empty()) r.final_theta_error = r.ticks.back().theta_error;
  if (pred_count > 0) r.mean_prediction_error = pred_sum / pred_count;
  return r;
}

struct MonteCarloConfig {
  std::vector<BaselineKind> methods{BaselineKind::AdaptiveMPGP};
  int trials = 1;
  std::uint64_t seed = 0;
  int workers = 1;
  int ticks = -1;
};

/// One record per (seed, method), ordered by trial then method. Costs are
/// normalized against the ground-truth episode of the same trial. A trial
/// that throws is recorded with NaN metrics instead of aborting the batch.
inline std::vector<TrialRecord> run_monte_carlo(const ScenarioModel& model,
                                                const MonteCarloConfig& mc) {
  if (mc.trials < 0 || mc.workers < 1) throw std::invalid_argument("run_monte_carlo: bad config");
  const size_t M = mc.methods.size();
  std::vector<TrialRecord> out(static_cast<size_t>(mc.trials) * M);
  std::atomic<int> next{0};
  SimulationOptions opts;
  opts.ticks = mc.ticks;
  auto worker = [&] {
    for (int t = next++; t < mc.trials; t = next++) {
      const std::uint64_t seed = mc.seed + static_cast<std::uint64_t>(t);
      TrialRecord gt_record;
      bool gt_ok = false;
      std::vector<TrialRecord> recs(M);
      try {
        const Trial trial = model.sample(seed);
        gt_record = compute_metrics(simulate_episode(model, trial, BaselineKind::GroundTruth, opts));
        gt_ok = true;
        for (size_t m = 0; m < M; ++m) {
          recs[m] = mc.methods[m] == BaselineKind::GroundTruth
                        ? gt_record
                        : compute_metrics(simulate_episode(model, trial, mc.methods[m], opts));
        }
      } catch (const std::exception&) {
        for (size_t m = 0; m < M; ++m) {
          if (recs[m].ticks.empty()) {
            recs[m] = TrialRecord{};
            recs[m].seed = seed;
            recs[m].method = mc.methods[m];
          }
        }
      }
      for (size_t m = 0; m < M; ++m) {
        recs[m].scenario = model.config().name;
        if (gt_ok && !recs[m].ticks.empty()) {
          recs[m].normalized_ego_cost = recs[m].ego_cost - gt_record.ego_cost;
          recs[m].normalized_opponent_cost = recs[m].opponent_cost - gt_record.opponent_cost;
          recs[m].constraint_active = gt_record.constraint_active;
        }
        out[static_cast<size_t>(t) * M + m] = std::move(recs[m]);
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(mc.workers, std::max(1, mc.trials));
  for (int w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& s) {
  if (s == "nan") return kNaN;
  return std::stod(s);
}

inline const char* kTickHeader =
    "scenario,seed,method,tick,theta_error,prediction_error,nll,status,infeasible,collision,"
    "min_distance,estimator_steps";
inline const char* kEpisodeHeader =
    "scenario,seed,method,ticks,collisions,infeasible,ego_cost,opponent_cost,normalized_ego_cost,"
    "normalized_opponent_cost,final_theta_error,mean_prediction_error,constraint_active";

inline std::string ticks_csv(const std::vector<TrialRecord>& records) {
  std::ostringstream os;
  os << kTickHeader << '\n';
  for (const auto& r : records) {
    for (const auto& t : r.ticks) {
      os << r.scenario << ',' << r.seed << ',' << to_string(r.method) << ',' << t.tick << ','
         << format_number(t.theta_error) << ',' << format_number(t.prediction_error) << ','
         << format_number(t.nll) << ',' << t.status << ',' << (t.infeasible ? 1 : 0) << ','
         << (t.collision ? 1 : 0) << ',' << format_number(t.min_distance) << ','
         << t.estimator_steps << '\n';
    }
  }
  return os.str();
}

inline std::string episodes_csv(const std::vector<TrialRecord>& records) {
  std::ostringstream os;
  os << kEpisodeHeader << '\n';
  for (const auto& r : records) {
    os << r.scenario << ',' << r.seed << ',' << to_string(r.method) << ',' << r.num_ticks << ','
       << r.collisions << ',' << r.infeasible << ',' << format_number(r.ego_cost) << ','
       << format_number(r.opponent_cost) << ',' << format_number(r.normalized_ego_cost) << ','
       << format_number(r.normalized_opponent_cost) << ',' << format_number(r.final_theta_error)
       << ',' << format_number(r.mean_prediction_error) << ',' << (r.constraint_active ? 1 : 0)
       << '\n';
  }
  return os.str();
}

/// Episode-level records from episodes.csv (tick rows are not restored).
inline std::vector<TrialRecord> parse_episodes_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kEpisodeHeader) {
    throw std::runtime_error("episodes.csv: unexpected header");
  }
  std::vector<TrialRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 13) throw std::runtime_error("episodes.csv: bad row: " + line);
    TrialRecord r;
    r.scenario = f[0];
    r.seed = std::stoull(f[1]);
    r.method = baseline_from_string(f[2]);
    r.num_ticks = std::stoi(f[3]);
    r.collisions = std::stoi(f[4]);
    r.infeasible = std::stoi(f[5]);
    r.ego_cost = parse_number(f[6]);
    r.opponent_cost = parse_number(f[7]);
    r.normalized_ego_cost = parse_number(f[8]);
    r.normalized_opponent_cost = parse_number(f[9]);
    r.final_theta_error = parse_number(f[10]);
    r.mean_prediction_error = parse_number(f[11]);
    r.constraint_active = f[12] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

struct Statistic {
  double mean = kNaN;
  double sem = kNaN;
  double median = kNaN;
  int n = 0;
};

/// Mean, standard error of the mean and median over the finite values.
inline Statistic describe(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  Statistic s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sem = std::sqrt(ss / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  } else {
    s.sem = 0.0;
  }
  std::sort(values.begin(), values.end());
  s.median = s.n % 2 == 1 ? values[static_cast<size_t>(s.n / 2)]
                          : 0.5 * (values[static_cast<size_t>(s.n / 2 - 1)] +
                                   values[static_cast<size_t>(s.n / 2)]);
  return s;
}

inline nlohmann::json statistic_json(const Statistic& s) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  return {{"mean", num(s.mean)}, {"sem", num(s.sem)}, {"median", num(s.median)}, {"n", s.n}};
}

/// Per-method aggregates. Cost statistics are also reported over the runs
/// without any collision.
inline nlohmann::json summarize(const std::vector<TrialRecord>& records) {
  std::map<std::string, std::vector<const TrialRecord*>> by_method;
  std::vector<std::string> order;
  for (const auto& r : records) {
    const std::string m = to_string(r.method);
    if (!by_method.count(m)) order.push_back(m);
    by_method[m].push_back(&r);
  }
  nlohmann::json out = nlohmann::json::object();
  for (const auto& m : order) {
    const auto& rs = by_method[m];
    std::vector<double> ego, opp, ego_f, opp_f, theta, pred;
    int collisions = 0, collided_runs = 0, infeasible = 0, ticks = 0;
    for (const auto* r : rs) {
      ego.push_back(r->normalized_ego_cost);
      opp.push_back(r->normalized_opponent_cost);
      if (r->collisions == 0) {
        ego_f.push_back(r->normalized_ego_cost);
        opp_f.push_back(r->normalized_opponent_cost);
      }
      theta.push_back(r->final_theta_error);
      pred.push_back(r->mean_prediction_error);
      collisions += r->collisions;
      collided_runs += r->collisions > 0 ? 1 : 0;
      infeasible += r->infeasible;
      ticks += r->num_ticks;
    }
    out[m] = {
        {"trials", static_cast<int>(rs.size())},
        {"collisions", collisions},
        {"runs_with_collision", collided_runs},
        {"infeasible_solves", infeasible},
        {"ticks", ticks},
        {"infeasible_rate", ticks > 0 ? static_cast<double>(infeasible) / ticks : 0.0},
        {"normalized_ego_cost", statistic_json(describe(ego))},
        {"normalized_opponent_cost", statistic_json(describe(opp))},
        {"normalized_ego_cost_collision_free", statistic_json(describe(ego_f))},
        {"normalized_opponent_cost_collision_free", statistic_json(describe(opp_f))},
        {"final_parameter_error", statistic_json(describe(theta))},
        {"trajectory_prediction_error", statistic_json(describe(pred))},
    };
  }
  return out;
}

inline void write_results(const std::filesystem::path& dir, const std::vector<TrialRecord>& records) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ticks.csv") << ticks_csv(records);
  std::ofstream(dir / "episodes.csv") << episodes_csv(records);
  std::ofstream(dir / "summary.json") << summarize(records).dump(2) << '\n';
}

}  // namespace mpgp
