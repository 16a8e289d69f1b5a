#include <gtest/gtest.h>

#include "mpgp/config.hpp"
#include "mpgp/game_session.hpp"

using namespace mpgp;

namespace {

const ScenarioModel& tracking_model() {
  static const ScenarioModel model(load_scenario(MPGP_CONFIG_DIR "/tracking.json"));
  return model;
}

std::string frame_without_timing(const StateFrame& f) {
  auto j = frame_json(f);
  j.erase("compute_ms");
  return j.dump();
}

}  // namespace

TEST(GameSession, ZeroCommandHoldsPosition) {
  GameSession s(tracking_model(), 3);
  const Vector human0 = s.state().segment<4>(kStateDim);
  for (int k = 0; k < 10; ++k) s.tick();
  EXPECT_EQ(Vector(s.state().segment<4>(kStateDim)), human0);
}

TEST(GameSession, VelocityCommandFollowsZeroOrderHoldIntegration) {
  GameSession s(tracking_model(), 3);
  const auto& spec = tracking_model().config().tracking;
  const double dt = spec.dt, k_v = SessionOptions{}.velocity_gain;
  Eigen::Vector2d p = s.state().segment<2>(kStateDim), v = Eigen::Vector2d::Zero();
  const Eigen::Vector2d p0 = p;
  s.handle_input(VelocityCommand{{1.0, 0.0}});
  for (int k = 0; k < 10; ++k) {
    Eigen::Vector2d a = k_v * (Eigen::Vector2d(1.0, 0.0) - v);
    a = a.cwiseMax(-spec.control_bound).cwiseMin(spec.control_bound);
    p += dt * v + 0.5 * dt * dt * a;
    v += dt * a;
    s.tick();
  }
  EXPECT_LT((s.state().segment<2>(kStateDim) - p).norm(), 1e-12);
  EXPECT_LT((s.state().segment<2>(kStateDim + 2) - v).norm(), 1e-12);
  const double dx = p.x() - p0.x();
  EXPECT_GT(dx, 0.7);
  EXPECT_LT(dx, 1.0);
  EXPECT_NEAR(p.y(), p0.y(), 1e-15);
}

TEST(GameSession, CommandsAreClamped) {
  GameSession s(tracking_model(), 0);
  const double bound = tracking_model().config().tracking.speed_bound;
  auto ack = s.handle_input(VelocityCommand{{3.0, 4.0}});
  EXPECT_TRUE(ack.clamped);
  const auto& v = std::get<VelocityCommand>(ack.applied).velocity;
  EXPECT_NEAR(v.norm(), bound, 1e-12);
  EXPECT_NEAR(v.x() / v.y(), 0.75, 1e-12);
  ack = s.handle_input(VelocityCommand{{0.5, -0.5}});
  EXPECT_FALSE(ack.clamped);
  ack = s.handle_input(TargetPointCommand{{10.0, -1.0}});
  EXPECT_TRUE(ack.clamped);
  EXPECT_EQ(std::get<TargetPointCommand>(ack.applied).point, Eigen::Vector2d(4.0, -1.0));
  EXPECT_THROW(s.handle_input(VelocityCommand{{kNaN, 0.0}}), std::invalid_argument);
}

TEST(GameSession, TargetPointIsReached) {
  GameSession s(tracking_model(), 5);
  const Eigen::Vector2d goal(1.0, -2.0);
  s.handle_input(TargetPointCommand{goal});
  for (int k = 0; k < 80; ++k) s.tick();
  EXPECT_LT((s.state().segment<2>(kStateDim) - goal).norm(), 0.05);
  EXPECT_LE(s.state().segment<2>(kStateDim + 2).norm(), tracking_model().config().tracking.speed_bound);
}

TEST(GameSession, DeterministicWithoutInput) {
  GameSession a(tracking_model(), 11), b(tracking_model(), 11);
  for (int k = 0; k < 12; ++k) EXPECT_EQ(frame_without_timing(a.tick()), frame_without_timing(b.tick()));
}

TEST(GameSession, FramesCarryPlanAndTiming) {
  GameSession s(tracking_model(), 1);
  for (int k = 0; k < 3; ++k) {
    const StateFrame f = s.tick();
    EXPECT_EQ(f.tick, k);
    EXPECT_EQ(f.plan.rows(), tracking_model().config().horizon());
    EXPECT_EQ(f.plan.cols(), 2);
    EXPECT_GT(f.compute_ms, 0.0);
    EXPECT_EQ(Vector(f.robot), Vector(s.state().head<4>()));
  }
}

TEST(GameSession, GoalEstimateMovesTowardStationaryHuman) {
  GameSession s(tracking_model(), 2);
  const Eigen::Vector2d human = s.state().segment<2>(kStateDim);
  ASSERT_GT(human.norm(), 0.5);
  const double before = (s.planner().objectives[1] - human).norm();
  double after = before;
  for (int k = 0; k < 30; ++k) after = (s.tick().goal_estimate - human).norm();
  EXPECT_LT(after, 0.5 * before);
}

TEST(GameSession, SafeWheneverTheSolveSucceeds) {
  const auto& cfg = tracking_model().config();
  for (std::uint64_t seed : {0u, 4u, 9u}) {
    GameSession s(tracking_model(), seed);
    for (int k = 0; k < 30; ++k) {
      const StateFrame f = s.tick();
      if (f.infeasible) continue;
      EXPECT_GE((f.robot.head<2>() - f.human.head<2>()).norm(), cfg.d_min() - cfg.collision_tolerance)
          << "seed " << seed << " tick " << k;
    }
  }
}

TEST(GameSession, ResetRestartsTheSession) {
  GameSession s(tracking_model(), 6);
  const Vector x0 = s.state();
  const std::string first = frame_without_timing(s.tick());
  s.handle_input(VelocityCommand{{1.0, 1.0}});
  for (int k = 0; k < 5; ++k) s.tick();
  s.reset(6);
  EXPECT_EQ(s.state(), x0);
  EXPECT_EQ(s.ticks(), 0);
  EXPECT_EQ(frame_without_timing(s.tick()), first);
}

TEST(GameSession, RequiresTrackingScenario) {
  const ScenarioModel ramp(load_scenario(MPGP_CONFIG_DIR "/ramp_merge.json"));
  EXPECT_THROW(GameSession(ramp, 0), std::invalid_argument);
}

TEST(Protocol, ParsesClientMessages) {
  auto m = parse_client_message(R"({"type":"input","vx":0.5,"vy":-1})");
  EXPECT_EQ(std::get<VelocityCommand>(std::get<HumanCommand>(m)).velocity, Eigen::Vector2d(0.5, -1.0));
  m = parse_client_message(R"({"type":"target_point","x":1,"y":2})");
  EXPECT_EQ(std::get<TargetPointCommand>(std::get<HumanCommand>(m)).point, Eigen::Vector2d(1.0, 2.0));
  m = parse_client_message(R"({"type":"reset","seed":42})");
  EXPECT_EQ(std::get<ResetRequest>(m).seed, 42u);
}

TEST(Protocol, RejectsInvalidMessages) {
  for (const char* bad : {"not json", "[1,2]", R"({"vx":1})", R"({"type":"jump"})",
                          R"({"type":"input","vx":1})", R"({"type":"input","vx":"1","vy":0})",
                          R"({"type":"reset","seed":-1})", R"({"type":"reset"})"}) {
    EXPECT_THROW(parse_client_message(bad), ProtocolError) << bad;
  }
}

TEST(Protocol, GoldenFrame) {
  StateFrame f;
  f.tick = 7;
  f.human << 1.0, 2.0, 0.5, 0.0;
  f.robot << -1.0, 0.25, 0.0, -0.5;
  f.plan.resize(2, 2);
  f.plan << -1.0, 0.25, -0.75, 0.5;
  f.goal_estimate << 0.125, -3.0;
  f.nll = 0.5;
  f.compute_ms = 12.5;
  EXPECT_EQ(frame_json(f).dump(),
            R"({"type":"frame","tick":7,"human":[1.0,2.0,0.5,0.0],"robot":[-1.0,0.25,0.0,-0.5],)"
            R"("plan":[[-1.0,0.25],[-0.75,0.5]],"goal_estimate":[0.125,-3.0],"nll":0.5,"status":"ok",)"
            R"("compute_ms":12.5})");
  f.nll = kNaN;
  f.infeasible = true;
  const auto j = frame_json(f);
  EXPECT_TRUE(j["nll"].is_null());
  EXPECT_EQ(j["status"], "infeasible");
}

TEST(Protocol, GoldenReplies) {
  GameSession s(tracking_model(), 0);
  EXPECT_EQ(handle_client_message(s, R"({"type":"input","vx":0.5,"vy":0})"),
            R"({"type":"ack","for":"input","vx":0.5,"vy":0.0,"clamped":false})");
  EXPECT_EQ(handle_client_message(s, R"({"type":"input","vx":0,"vy":-3})"),
            R"({"type":"ack","for":"input","vx":0.0,"vy":-2.0,"clamped":true})");
  EXPECT_EQ(handle_client_message(s, R"({"type":"target_point","x":1.5,"y":9})"),
            R"({"type":"ack","for":"target_point","x":1.5,"y":4.0,"clamped":true})");
  EXPECT_EQ(handle_client_message(s, R"({"type":"reset","seed":3})"),
            R"({"type":"ack","for":"reset","seed":3})");
  EXPECT_EQ(s.seed(), 3u);
  EXPECT_EQ(handle_client_message(s, R"({"type":"jump"})"),
            R"({"type":"error","message":"unknown message type 'jump'"})");
}
