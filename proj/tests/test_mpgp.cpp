#include <gtest/gtest.h>

#include "mpgp/config.hpp"
#include "mpgp/mpgp.hpp"
#include "mpgp/simulation.hpp"

using namespace mpgp;

namespace {

ScenarioModel tracking_model() {
  return ScenarioModel(load_scenario(std::string(MPGP_CONFIG_DIR) + "/tracking.json"));
}

Observation observe(const Vector& x, const ObservationModel& model, int tick) {
  Observation obs{tick, x};
  for (int c = kStateDim; c < x.size(); ++c) obs.joint[c] = kNaN;
  for (int j : model.selected) obs.joint[j] = x[j];
  return obs;
}

PlannerState fresh_state(const ScenarioModel& m, const Trial& tr) {
  PlannerState s;
  s.objectives = m.prior(tr);
  s.buffer = ObservationBuffer(m.config().horizon());
  return s;
}

}  // namespace

TEST(BaselineKind, RoundTripsThroughStrings) {
  for (auto k : {BaselineKind::GroundTruth, BaselineKind::AdaptiveMPGP,
                 BaselineKind::ConstantVelocityMPC, BaselineKind::KKTConstrainedEstimator}) {
    EXPECT_EQ(baseline_from_string(to_string(k)), k);
  }
  EXPECT_THROW(baseline_from_string("oracle"), std::invalid_argument);
}

TEST(ConstantVelocity, ExtrapolatesTheObservedVelocity) {
  const auto model = ObservationModel::opponents(2, kStateDim, ObservationMode::Full, 0.0);
  ObservationBuffer buf(10);
  Vector x = Vector::Zero(8);
  x[6] = 1.0;
  buf.push(observe(x, model, 0));
  const Matrix P = constant_velocity_predictions(buf, model, 2, 10, 0.1);
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(P(k, 0), 0.1 * k, 1e-15);
    EXPECT_EQ(P(k, 1), 0.0);
  }
}

TEST(ConstantVelocity, FiniteDifferenceUnderPositionOnlyObservations) {
  const auto model = ObservationModel::opponents(2, kStateDim, ObservationMode::PositionOnly, 0.0);
  ObservationBuffer buf(10);
  Vector x = Vector::Zero(8);
  buf.push(observe(x, model, 0));
  x[4] = 0.1;
  x[5] = -0.05;
  buf.push(observe(x, model, 1));
  const Matrix P = constant_velocity_predictions(buf, model, 2, 10, 0.1);
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(P(k, 0), 0.1 + 0.1 * k, 1e-12);
    EXPECT_NEAR(P(k, 1), -0.05 - 0.05 * k, 1e-12);
  }
}

TEST(ConstantVelocity, OpponentAtRestIsAStaticDisc) {
  const ScenarioModel m = tracking_model();
  Trial tr = m.sample(0);
  tr.initial_state.setZero();
  tr.initial_state.head<2>() << -1.5, 0.0;
  tr.initial_state.segment<2>(4) << 0.0, 0.0;
  const PlannerGames games = m.games_for(tr);
  const PlannerConfig pc = m.planner_config(BaselineKind::ConstantVelocityMPC, games.full->game.parameters());
  PlannerState state = fresh_state(m, tr);
  PlanResult r;
  for (int k = 0; k < 2; ++k) r = plan_constant_velocity_mpc(state, observe(tr.initial_state, pc.model, k), games, pc);
  ASSERT_FALSE(r.infeasible);
  for (int t = 0; t < r.predicted_states.rows(); ++t) {
    EXPECT_NEAR(r.predicted_states(t, 4), 0.0, 1e-12);
    EXPECT_NEAR(r.predicted_states(t, 5), 0.0, 1e-12);
    const double d = (r.predicted_states.row(t).head<2>() - r.predicted_states.row(t).segment<2>(4)).norm();
    EXPECT_GE(d, m.config().d_min() - 1e-6);
  }
  EXPECT_LE(r.ego_control.cwiseAbs().maxCoeff(), games.control_bound);
}

TEST(AdaptivePlanner, MatchesTheGroundTruthPlanWhenTheEstimateIsExact) {
  const ScenarioModel m = tracking_model();
  Trial tr = m.sample(3);
  tr.initial_state.segment<2>(4) = tr.objectives[1];  // target already at its goal, at rest
  tr.initial_state.segment<2>(6).setZero();
  if (min_pairwise_distance(tr.initial_state) < 1.0) tr.initial_state.head<2>() << -3.0, -3.0;
  const PlannerGames games = m.games_for(tr);
  PlannerConfig pc = m.planner_config(BaselineKind::AdaptiveMPGP, games.full->game.parameters());
  pc.model = ObservationModel::opponents(2, kStateDim, ObservationMode::Full, 0.0);
  PlannerState state = fresh_state(m, tr);
  state.objectives = tr.objectives;
  const PlanResult r = step_adaptive_mpgp(state, observe(tr.initial_state, pc.model, 0), games, pc);
  const MCPSolution gt = solve_mcp(games.full->problem, Theta{tr.initial_state, tr.objectives, Vector(0)}.pack(),
                                   rollout_guess(*games.full, tr.initial_state, games.dt), pc.solver);
  ASSERT_TRUE(gt.solved());
  const JointTrajectory gtt = extract_trajectories(games.full->layout, gt.z_star);
  EXPECT_LT((r.ego_control - gtt.controls.row(0).head<2>().transpose()).norm(), 1e-6);
}

TEST(AdaptivePlanner, ZeroStepsKeepsThePrior) {
  const ScenarioModel m = tracking_model();
  const Trial tr = m.sample(1);
  const PlannerGames games = m.games_for(tr);
  PlannerConfig pc = m.planner_config(BaselineKind::AdaptiveMPGP, games.full->game.parameters());
  pc.estimator.max_steps = 0;
  PlannerState state = fresh_state(m, tr);
  const auto prior = state.objectives;
  Vector x = tr.initial_state;
  for (int k = 0; k < 5; ++k) {
    const PlanResult r = step_adaptive_mpgp(state, observe(x, pc.model, k), games, pc);
    EXPECT_EQ(r.estimator_steps, 0);
    Vector u = Vector::Zero(4);
    u.head<2>() = r.ego_control;
    x = step_joint(DoubleIntegratorDynamics{games.dt}, x, u);
  }
  EXPECT_EQ(state.objectives[1], prior[1]);
}

TEST(AdaptivePlanner, EstimateMovesTowardTheTruth) {
  const ScenarioModel m = tracking_model();
  const Trial tr = m.sample(4);
  const auto trace = simulate_episode(m, tr, BaselineKind::AdaptiveMPGP);
  const double first = (trace.ticks.front().theta_estimate - trace.theta_true).norm();
  const double last = (trace.ticks.back().theta_estimate - trace.theta_true).norm();
  EXPECT_LT(last, first);
}

TEST(AdaptivePlanner, FailedForwardSolveFallsBack) {
  const ScenarioModel m = tracking_model();
  const Trial tr = m.sample(2);
  const PlannerGames games = m.games_for(tr);
  PlannerConfig pc = m.planner_config(BaselineKind::AdaptiveMPGP, games.full->game.parameters());
  pc.estimator.max_steps = 0;
  PlannerConfig starved = pc;
  starved.solver.max_iterations = 1;

  // No previous solution: zero input.
  PlannerState cold = fresh_state(m, tr);
  const PlanResult r0 = step_adaptive_mpgp(cold, observe(tr.initial_state, pc.model, 0), games, starved);
  EXPECT_TRUE(r0.infeasible);
  EXPECT_EQ(r0.ego_control, Vector::Zero(2));

  // Previous solution: its second input.
  PlannerState warm = fresh_state(m, tr);
  const PlanResult r1 = step_adaptive_mpgp(warm, observe(tr.initial_state, pc.model, 0), games, pc);
  ASSERT_FALSE(r1.infeasible);
  const JointTrajectory prev = extract_trajectories(games.full->layout, *warm.last_solution);
  Vector u = Vector::Zero(4);
  u.head<2>() = r1.ego_control;
  const Vector x1 = step_joint(DoubleIntegratorDynamics{games.dt}, tr.initial_state, u);
  const PlanResult r2 = step_adaptive_mpgp(warm, observe(x1, pc.model, 1), games, starved);
  EXPECT_TRUE(r2.infeasible);
  EXPECT_NE(r2.status, SolveStatus::Solved);
  EXPECT_LT((r2.ego_control - prev.controls.row(1).head<2>().transpose()).norm(), 1e-12);
}

TEST(AdaptivePlanner, TickIsDeterministic) {
  const ScenarioModel m = tracking_model();
  const Trial tr = m.sample(5);
  const PlannerGames games = m.games_for(tr);
  const PlannerConfig pc = m.planner_config(BaselineKind::AdaptiveMPGP, games.full->game.parameters());
  auto run = [&] {
    PlannerState s = fresh_state(m, tr);
    Vector x = tr.initial_state;
    PlanResult r;
    for (int k = 0; k < 4; ++k) {
      r = step_adaptive_mpgp(s, observe(x, pc.model, k), games, pc);
      x.head<2>() += 0.01 * r.ego_control;
      x.segment<2>(4) += Eigen::Vector2d(0.02, 0.01);
    }
    return std::make_pair(r, s.objectives[1]);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first.ego_control, b.first.ego_control);
  EXPECT_EQ(a.first.predicted_states, b.first.predicted_states);
  EXPECT_EQ(a.second, b.second);
}

TEST(WarmStart, ReducesForwardIterationsOnTheTrackingBenchmark) {
  const ScenarioModel m = tracking_model();
  long warm_iters = 0, cold_iters = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Trial tr = m.sample(seed);
    const PlannerGames games = m.games_for(tr);
    const CompiledGame& g = *games.full;
    std::optional<Vector> last;
    Vector x = tr.initial_state;
    for (int k = 0; k < 20; ++k) {
      const Vector theta = Theta{x, tr.objectives, Vector(0)}.pack();
      const MCPSolution cold = solve_mcp(g.problem, theta, rollout_guess(g, x, games.dt), m.config().solver);
      const MCPSolution warm = solve_mcp(g.problem, theta, warm_start(g, last, x, games.dt), m.config().solver);
      cold_iters += cold.iterations;
      warm_iters += warm.iterations;
      const MCPSolution& next = warm.solved() ? warm : cold;
      ASSERT_TRUE(next.solved());
      last = next.z_star;
      x = step_joint(DoubleIntegratorDynamics{games.dt}, x,
                     extract_trajectories(g.layout, next.z_star).controls.row(0).transpose());
    }
  }
  EXPECT_LE(warm_iters, cold_iters);
}

TEST(SolveWithRestart, RecoversFromAPoorWarmStart) {
  const ScenarioModel m = tracking_model();
  const Trial tr = m.sample(0);
  const PlannerGames games = m.games_for(tr);
  const CompiledGame& g = *games.full;
  const Vector theta = Theta{tr.initial_state, tr.objectives, Vector(0)}.pack();
  SolverConfig s = m.config().solver;
  s.max_iterations = 15;
  const Vector poor = Vector::Constant(g.layout.dimension, 1e3);
  const MCPSolution direct = solve_mcp(g.problem, theta, poor, s);
  const MCPSolution restarted = solve_with_restart(g, theta, poor, tr.initial_state, games.dt, s);
  EXPECT_FALSE(direct.solved());
  EXPECT_TRUE(restarted.solved());
  EXPECT_GT(restarted.iterations, direct.iterations);
}

TEST(ForwardState, UsesFiniteDifferenceVelocitiesForUnobservedEntries) {
  const auto model = ObservationModel::opponents(2, kStateDim, ObservationMode::PositionOnly, 0.0);
  ObservationBuffer buf(10);
  Vector x = Vector::Zero(8);
  x.head<4>() << 1.0, 2.0, 0.3, 0.4;
  buf.push(observe(x, model, 0));
  x[4] = 0.2;
  buf.push(observe(x, model, 1));
  const Vector s = detail::current_joint_state(buf, model, 2, 0.1);
  EXPECT_EQ(s.head<4>(), x.head<4>());
  EXPECT_NEAR(s[4], 0.2, 1e-15);
  EXPECT_NEAR(s[6], 2.0, 1e-12);
  EXPECT_EQ(s[7], 0.0);
}
