#include <gtest/gtest.h>

#include <cmath>

#include "mpgp/config.hpp"
#include "mpgp/inverse_game.hpp"
#include "mpgp/mpgp.hpp"
#include "mpgp/scenarios.hpp"
#include "mpgp/simulation.hpp"

using namespace mpgp;

namespace {

ScenarioConfig tracking_config() { return load_scenario(std::string(MPGP_CONFIG_DIR) + "/tracking.json"); }

// Target at rest near its goal, tracker a few metres away: the window is
// informative and no inequality is active.
Trial nearby_goal_trial() {
  Trial t;
  t.seed = 0;
  t.objectives = {Vector(0), Vector(2)};
  t.objectives[1] << 1.0, 0.5;
  t.initial_state = Vector::Zero(8);
  t.initial_state.head<2>() << -2.5, -2.0;
  return t;
}

SolverConfig tight_solver() {
  SolverConfig s;
  s.tolerance = 1e-12;
  return s;
}

JointTrajectory solve_window(const CompiledGame& g, const Vector& x, const std::vector<Vector>& obj,
                             double dt) {
  const MCPSolution sol = solve_mcp(g.problem, Theta{x, obj, Vector(0)}.pack(),
                                    rollout_guess(g, x, dt), tight_solver());
  EXPECT_TRUE(sol.solved());
  return extract_trajectories(g.layout, sol.z_star);
}

ObservationBuffer window_buffer(const Matrix& X, const ObservationModel& model) {
  ObservationBuffer buf(static_cast<int>(X.rows()));
  for (int t = 0; t < X.rows(); ++t) {
    Vector y = X.row(t).transpose();
    if (model.mode == ObservationMode::PositionOnly) y.segment<2>(6).setConstant(std::nan(""));
    buf.push({t, y});
  }
  return buf;
}

std::vector<bool> goal_mask(const ParameterLayout& pl) {
  std::vector<bool> mask(static_cast<size_t>(pl.size()), false);
  mask[static_cast<size_t>(pl.objective_offset(1))] = true;
  mask[static_cast<size_t>(pl.objective_offset(1) + 1)] = true;
  return mask;
}

}  // namespace

TEST(ObservationBuffer, KeepsTheNewestEntriesOldestFirst) {
  ObservationBuffer buf(3);
  for (int k = 0; k < 5; ++k) buf.push({k, Vector::Constant(2, k)});
  ASSERT_EQ(buf.size(), 3);
  EXPECT_TRUE(buf.full());
  EXPECT_EQ(buf.oldest().tick, 2);
  EXPECT_EQ(buf[1].tick, 3);
  EXPECT_EQ(buf.newest().tick, 4);
  EXPECT_THROW(buf.push({5, Vector::Zero(3)}), std::invalid_argument);
  EXPECT_THROW(ObservationBuffer(0), std::invalid_argument);
}

TEST(ObservationModel, SelectsOpponentEntries) {
  const auto full = ObservationModel::opponents(3, 4, ObservationMode::Full, 0.0);
  EXPECT_EQ(full.selected, (std::vector<int>{4, 5, 6, 7, 8, 9, 10, 11}));
  const auto pos = ObservationModel::opponents(3, 4, ObservationMode::PositionOnly, 0.0);
  EXPECT_EQ(pos.selected, (std::vector<int>{4, 5, 8, 9}));
  EXPECT_THROW(ObservationModel::opponents(2, 4, ObservationMode::Full, -1.0), std::invalid_argument);
}

TEST(NegativeLogLikelihood, ExactFitIsZero) {
  Matrix X = Matrix::Random(4, 8);
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::PositionOnly, 0.0);
  EXPECT_EQ(negative_log_likelihood(window_buffer(X, model), X, model), 0.0);
}

TEST(NegativeLogLikelihood, SingleOffsetAndHomogeneity) {
  Matrix X = Matrix::Zero(3, 8);
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::PositionOnly, 0.0);
  Matrix Y = X;
  Y(1, 4) = 0.1;
  EXPECT_NEAR(negative_log_likelihood(window_buffer(Y, model), X, model), 0.01, 1e-15);
  Matrix Y2 = X;
  Y2(1, 4) = 0.2;
  EXPECT_NEAR(negative_log_likelihood(window_buffer(Y2, model), X, model), 0.04, 1e-15);
}

TEST(NegativeLogLikelihood, RejectsShortTrajectories) {
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  EXPECT_THROW(negative_log_likelihood(window_buffer(Matrix::Zero(5, 8), model), Matrix::Zero(4, 8), model),
               std::invalid_argument);
}

TEST(LikelihoodGradient, VanishesAtTheGeneratingParameter) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Trial tr = sample_tracking_trial(cfg.tracking, seed);
    const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, cfg.dt());
    const Vector theta = Theta{tr.initial_state, tr.objectives, Vector(0)}.pack();
    const auto lg = likelihood_gradient(g, theta, window_buffer(W.states, model), model,
                                        rollout_guess(g, tr.initial_state, cfg.dt()), tight_solver());
    EXPECT_LT(lg.nll, 1e-16);
    EXPECT_LT(lg.gradient.norm(), 1e-7) << "seed " << seed;
  }
}

TEST(LikelihoodGradient, MatchesCentralDifferencesThroughTheSolve) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::PositionOnly, 0.0);
  const double dt = cfg.dt();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Trial tr = sample_tracking_trial(cfg.tracking, seed);
    const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, dt);
    const ObservationBuffer buf = window_buffer(W.states, model);
    std::vector<Vector> obj = tr.objectives;
    obj[1] += Eigen::Vector2d(0.3, -0.2);
    const Vector theta = Theta{tr.initial_state, obj, Vector(0)}.pack();
    const Vector guess = rollout_guess(g, tr.initial_state, dt);
    const auto lg = likelihood_gradient(g, theta, buf, model, guess, tight_solver());
    if (!partition_indices(g.problem, lg.z_star, theta).weak.empty()) continue;
    const double h = 1e-5;
    for (Eigen::Index c = 0; c < theta.size(); ++c) {
      Vector tp = theta, tm = theta;
      tp[c] += h;
      tm[c] -= h;
      const double fp = likelihood_gradient(g, tp, buf, model, lg.z_star, tight_solver()).nll;
      const double fm = likelihood_gradient(g, tm, buf, model, lg.z_star, tight_solver()).nll;
      const double fd = (fp - fm) / (2 * h);
      EXPECT_NEAR(lg.gradient[c], fd, 1e-3 * (1.0 + std::abs(fd))) << "seed " << seed << " entry " << c;
    }
    ++checked;
  }
  EXPECT_GE(checked, 3);
}

TEST(UpdateEstimate, ZeroLearningRateLeavesThetaUnchanged) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  const Trial tr = nearby_goal_trial();
  const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, cfg.dt());
  std::vector<Vector> obj = tr.objectives;
  obj[1] += Eigen::Vector2d(0.5, 0.5);
  const Vector theta = Theta{tr.initial_state, obj, Vector(0)}.pack();
  EstimatorConfig est;
  est.learning_rate = 0.0;
  const auto res = update_estimate(g, theta, window_buffer(W.states, model), model, est,
                                   goal_mask(g.game.parameters()),
                                   rollout_guess(g, tr.initial_state, cfg.dt()));
  EXPECT_TRUE(res.ok);
  EXPECT_EQ(res.theta, theta);
}

TEST(UpdateEstimate, ConvergedInputTakesNoStep) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  const Trial tr = nearby_goal_trial();
  const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, cfg.dt());
  const Vector theta = Theta{tr.initial_state, tr.objectives, Vector(0)}.pack();
  const auto res = update_estimate(g, theta, window_buffer(W.states, model), model, cfg.estimator,
                                   goal_mask(g.game.parameters()),
                                   rollout_guess(g, tr.initial_state, cfg.dt()), tight_solver());
  EXPECT_LE(res.steps, 1);
  EXPECT_LT((res.theta - theta).norm(), 1e-8);
}

TEST(UpdateEstimate, EmptyBufferReturnsThePrior) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::PositionOnly, 0.0);
  const Trial tr = nearby_goal_trial();
  const Vector theta = Theta{tr.initial_state, tr.objectives, Vector(0)}.pack();
  const auto res = update_estimate(g, theta, ObservationBuffer(10), model, cfg.estimator,
                                   goal_mask(g.game.parameters()),
                                   rollout_guess(g, tr.initial_state, cfg.dt()));
  EXPECT_EQ(res.steps, 0);
  EXPECT_EQ(res.theta, theta);
}

TEST(UpdateEstimate, FailedSolveReturnsTheInput) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  const Trial tr = sample_tracking_trial(cfg.tracking, 0);
  const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, cfg.dt());
  std::vector<Vector> obj = tr.objectives;
  obj[1] += Eigen::Vector2d(1.0, 0.0);
  const Vector theta = Theta{tr.initial_state, obj, Vector(0)}.pack();
  SolverConfig starved;
  starved.max_iterations = 1;
  const auto res = update_estimate(g, theta, window_buffer(W.states, model), model, cfg.estimator,
                                   goal_mask(g.game.parameters()),
                                   rollout_guess(g, tr.initial_state, cfg.dt()), starved);
  EXPECT_FALSE(res.ok);
  EXPECT_EQ(res.failed_solves, 1);
  EXPECT_EQ(res.theta, theta);
}

TEST(UpdateEstimate, RespectsThetaBounds) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  const Trial tr = nearby_goal_trial();
  const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, cfg.dt());
  const ParameterLayout& pl = g.game.parameters();
  Vector lo = Vector::Constant(pl.size(), -kInf), up = Vector::Constant(pl.size(), kInf);
  up[pl.objective_offset(1)] = 0.2;
  EstimatorConfig est = cfg.estimator;
  est.theta_bounds = BoxBounds(lo, up);
  std::vector<Vector> obj = tr.objectives;
  obj[1] << 0.0, 0.0;
  const auto res = update_estimate(g, Theta{tr.initial_state, obj, Vector(0)}.pack(),
                                   window_buffer(W.states, model), model, est, goal_mask(pl),
                                   rollout_guess(g, tr.initial_state, cfg.dt()));
  EXPECT_LE(res.theta[pl.objective_offset(1)], 0.2);
}

// Windows along the ground-truth closed loop, warm-started across ticks.
TEST(UpdateEstimate, RecoversANearbyGoalWithinOneHundredSteps) {
  const ScenarioConfig cfg = tracking_config();
  const CompiledGame g(make_tracking_game(cfg.tracking));
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::Full, 0.0);
  const Trial tr = nearby_goal_trial();
  const double dt = cfg.dt();
  const ParameterLayout& pl = g.game.parameters();
  EstimatorConfig est = cfg.estimator;
  est.max_steps = 25;
  Vector goal = tr.objectives[1] + Eigen::Vector2d(1.2, -1.0);
  ASSERT_LT((goal - tr.objectives[1]).norm(), 2.0);
  Vector x = tr.initial_state;
  int steps = 0;
  double nll = 0.0;
  for (int k = 0; k < 4; ++k) {
    const JointTrajectory W = solve_window(g, x, tr.objectives, dt);
    const ObservationBuffer buf = window_buffer(W.states, model);
    const auto res = update_estimate(g, Theta{x, {Vector(0), goal}, Vector(0)}.pack(), buf, model, est,
                                     goal_mask(pl), rollout_guess(g, x, dt));
    ASSERT_TRUE(res.ok);
    EXPECT_LE(res.nll_final, res.nll_initial + 1e-9);
    goal = res.theta.segment<2>(pl.objective_offset(1));
    steps += res.steps;
    nll = res.nll_final;
    x = step_joint(DoubleIntegratorDynamics{dt}, x, W.controls.row(0).transpose());
  }
  EXPECT_LE(steps, 100);
  EXPECT_LT((goal - tr.objectives[1]).norm(), 1e-2);
  EXPECT_LT(nll, 1e-6);
}

TEST(UpdateEstimate, NllDoesNotIncreaseOnTheRegenerationWindows) {
  const ScenarioConfig cfg = tracking_config();
  const ScenarioModel scenario(cfg);
  const CompiledGame& g = *scenario.games_for(scenario.sample(0)).full;
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::PositionOnly, 0.0);
  const ParameterLayout& pl = g.game.parameters();
  std::vector<bool> mask = goal_mask(pl);
  for (int k = 4; k < 8; ++k) mask[static_cast<size_t>(k)] = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Trial tr = scenario.sample(seed);
    const JointTrajectory W = solve_window(g, tr.initial_state, tr.objectives, cfg.dt());
    const auto res = update_estimate(g, Theta{tr.initial_state, scenario.prior(tr), Vector(0)}.pack(),
                                     window_buffer(W.states, model), model, cfg.estimator, mask,
                                     rollout_guess(g, tr.initial_state, cfg.dt()), cfg.solver);
    ASSERT_TRUE(res.ok);
    EXPECT_LE(res.nll_final, res.nll_initial + 1e-9) << "seed " << seed;
  }
}

TEST(Regeneration, PositionOnlyEstimatesConverge) {
  const ScenarioModel scenario(tracking_config());
  std::vector<double> errors;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = run_regeneration(scenario, scenario.sample(seed), 0.0, 30);
    ASSERT_EQ(r.errors_full.size(), 30u);
    EXPECT_LT(r.error_full, r.errors_full.front()) << "seed " << seed;
    errors.push_back(r.error_full);
  }
  EXPECT_LT(describe(errors).median, 0.1);
}

TEST(KktConstrainedEstimator, MatchesTheFullMethodWhenNothingIsActive) {
  ScenarioConfig cfg = tracking_config();
  cfg.tracking.control_bound = 20.0;
  const CompiledGame full(make_tracking_game(cfg.tracking));
  const CompiledGame kkt(full.game.without_inequalities());
  const auto model = ObservationModel::opponents(2, 4, ObservationMode::PositionOnly, 0.0);
  const Trial tr = nearby_goal_trial();
  const double dt = cfg.dt();
  const JointTrajectory W = solve_window(full, tr.initial_state, tr.objectives, dt);
  ASSERT_LT(W.controls.cwiseAbs().maxCoeff(), cfg.tracking.control_bound - 1e-3);
  const MCPSolution sol = solve_mcp(full.problem, Theta{tr.initial_state, tr.objectives, Vector(0)}.pack(),
                                    rollout_guess(full, tr.initial_state, dt), tight_solver());
  ASSERT_FALSE(detail::collision_row_active(full, sol.z_star));
  const ObservationBuffer buf = window_buffer(W.states, model);
  std::vector<Vector> obj = tr.objectives;
  obj[1] += Eigen::Vector2d(0.4, -0.3);
  const Vector theta = Theta{tr.initial_state, obj, Vector(0)}.pack();
  const auto mask = goal_mask(full.game.parameters());
  const auto a = update_estimate(full, theta, buf, model, cfg.estimator, mask,
                                 rollout_guess(full, tr.initial_state, dt), tight_solver());
  const auto b = update_estimate(kkt, theta, buf, model, cfg.estimator, mask,
                                 rollout_guess(kkt, tr.initial_state, dt), tight_solver());
  ASSERT_TRUE(a.ok && b.ok);
  EXPECT_LT((a.theta - b.theta).norm(), 1e-3);
}
