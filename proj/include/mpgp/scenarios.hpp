#pragma once

// Concrete games: planar double-integrator players in a 2-player tracking
// game and an N-player ramp merge, plus seeded trial samplers.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mpgp/calculus.hpp"
#include "mpgp/game.hpp"

namespace mpgp {

inline constexpr int kStateDim = 4;    // (px, py, vx, vy)
inline constexpr int kControlDim = 2;  // (ax, ay)

struct DoubleIntegratorDynamics {
  double dt = 0.1;

  template <class S>
  S next(std::span<const S> x, std::span<const S> u, int k) const {
    const double h = dt;
    switch (k) {
      case 0: return x[0] + x[2] * h + u[0] * (0.5 * h * h);
      case 1: return x[1] + x[3] * h + u[1] * (0.5 * h * h);
      case 2: return x[2] + u[0] * h;
      default: return x[3] + u[1] * h;
    }
  }
};

/// Zero-order-hold double integrator step.
inline Vector step_dynamics(const DoubleIntegratorDynamics& dyn, const Vector& x, const Vector& u) {
  if (!(dyn.dt > 0)) throw std::invalid_argument("step_dynamics: dt must be positive");
  if (x.size() != kStateDim || u.size() != kControlDim) {
    throw std::invalid_argument("step_dynamics: expected 4 states and 2 inputs");
  }
  Vector out(kStateDim);
  std::span<const double> xs(x.data(), kStateDim);
  std::span<const double> us(u.data(), kControlDim);
  for (int k = 0; k < kStateDim; ++k) out[k] = dyn.next(xs, us, k);
  return out;
}

/// Steps every player of a joint state with its slice of the joint control.
inline Vector step_joint(const DoubleIntegratorDynamics& dyn, const Vector& joint_state,
                         const Vector& joint_control) {
  const auto n = joint_state.size() / kStateDim;
  Vector out(joint_state.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.segment<kStateDim>(kStateDim * i) = step_dynamics(
        dyn, joint_state.segment<kStateDim>(kStateDim * i),
        joint_control.segment<kControlDim>(kControlDim * i));
  }
  return out;
}

namespace detail {

inline constexpr double kNormSmoothing = 1e-10;

/// Lifts a constant into the scalar type of a local-variable span.
template <class V>
auto S_of(const V& v, double c) {
  using S = std::decay_t<decltype(v[0])>;
  return S(c);
}

template <class S>
S smooth_distance(const S& dx, const S& dy) {
  using std::sqrt;
  return sqrt(dx * dx + dy * dy + S(kNormSmoothing));
}

template <class S>
S cubic_penalty(const S& distance, double d_min, double weight) {
  S gap = S(d_min) - distance;
  if (gap > 0.0) return S(weight) * gap * gap * gap;
  return S(0.0);
}

inline double cubic_penalty_value(double distance, double d_min, double weight) {
  const double gap = d_min - distance;
  return gap > 0 ? weight * gap * gap * gap : 0.0;
}

/// Where a player's position lives at time t: in the primal vector, or in the
/// parameter vector as a frozen prediction.
using PositionRefs = std::function<std::array<VarRef, 2>(int player, int t)>;

inline void add_control_bounds(GameBuilder& b, int i, double bound) {
  for (int t = 0; t < b.horizon(); ++t) {
    for (int k = 0; k < kControlDim; ++k) {
      b.add_private_inequality(
          i, {b.control(i, t, k)}, [bound](const auto& v) { return v[0] + bound; },
          "control_lower", true);
      b.add_private_inequality(
          i, {b.control(i, t, k)}, [bound](const auto& v) { return bound - v[0]; },
          "control_upper", true);
    }
  }
}

inline void add_speed_bounds(GameBuilder& b, int i, double bound) {
  for (int t = 1; t < b.horizon(); ++t) {
    for (int k = 2; k < 4; ++k) {
      b.add_private_inequality(
          i, {b.state(i, t, k)}, [bound](const auto& v) { return v[0] + bound; }, "speed_lower",
          true);
      b.add_private_inequality(
          i, {b.state(i, t, k)}, [bound](const auto& v) { return bound - v[0]; }, "speed_upper",
          true);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tracking game
// ---------------------------------------------------------------------------

struct TrackingGameSpec {
  int horizon = 10;
  double dt = 0.1;
  double d_min = 0.5;
  double control_weight = 0.1;
  double penalty_weight = 50.0;
  double control_bound = 2.0;
  // Speed limit for the human-driven target and the sampler. Not a game
  // constraint unless enforce_speed_bound is set.
  double speed_bound = 2.0;
  bool enforce_speed_bound = false;
  double arena_size = 8.0;  // square arena centered at the origin

  void validate() const {
    if (horizon < 2 || !(dt > 0) || !(d_min > 0) || control_weight < 0 || penalty_weight < 0 ||
        !(control_bound > 0) || !(speed_bound > 0) || !(arena_size > 0)) {
      throw std::invalid_argument("TrackingGameSpec: invalid parameters");
    }
  }
};

/// Stage-summed cost of one tracking player over a joint trajectory
/// (X: T x 8, U: T x 4). Player 0 tracks player 1; player 1 heads for the
/// goal `theta` (x, y).
inline double tracking_cost(const TrackingGameSpec& spec, const Matrix& X, const Matrix& U,
                            int player, const Vector& goal) {
  const int T = static_cast<int>(X.rows());
  const int other = 1 - player;
  double J = 0.0;
  for (int t = 0; t + 1 < T; ++t) {
    const Eigen::Vector2d p = X.row(t + 1).segment<2>(kStateDim * player).transpose();
    const Eigen::Vector2d q = X.row(t + 1).segment<2>(kStateDim * other).transpose();
    const Eigen::Vector2d target = player == 0 ? q : Eigen::Vector2d(goal);
    J += (p - target).squaredNorm();
    J += spec.control_weight * U.row(t).segment<2>(kControlDim * player).squaredNorm();
    J += detail::cubic_penalty_value((p - q).norm(), spec.d_min, spec.penalty_weight);
  }
  return J;
}

namespace detail {

inline void add_tracking_player_costs(GameBuilder& b, const TrackingGameSpec& spec, int i,
                                      const PositionRefs& pos, bool target_is_goal) {
  const int T = b.horizon();
  const double cw = spec.control_weight;
  for (int t = 0; t + 1 < T; ++t) {
    auto own = pos(i, t + 1);
    std::array<VarRef, 2> goal = target_is_goal
                                     ? std::array<VarRef, 2>{b.objective(i, 0), b.objective(i, 1)}
                                     : pos(1 - i, t + 1);
    b.add_cost(i, {own[0], own[1], goal[0], goal[1]}, [](const auto& v) {
      auto dx = v[0] - v[2];
      auto dy = v[1] - v[3];
      return dx * dx + dy * dy;
    });
    auto other = pos(1 - i, t + 1);
    const double dmin = spec.d_min;
    const double w = spec.penalty_weight;
    b.add_cost(i, {own[0], own[1], other[0], other[1]}, [dmin, w](const auto& v) {
      return cubic_penalty(smooth_distance(v[0] - v[2], v[1] - v[3]), dmin, w);
    });
  }
  for (int t = 0; t < T; ++t) {
    // The last input only appears in this effort term, which pins it to zero.
    b.add_cost(i, {b.control(i, t, 0), b.control(i, t, 1)},
               [cw](const auto& v) { return S_of(v, cw) * (v[0] * v[0] + v[1] * v[1]); });
  }
}

}  // namespace detail

/// Two players; player 0 (ego) tracks player 1, whose goal is its objective
/// parameter. Shared collision rows at t = 2..T, private control boxes.
inline TrajectoryGame make_tracking_game(const TrackingGameSpec& spec) {
  spec.validate();
  GameBuilder b(spec.horizon, {{kStateDim, kControlDim}, {kStateDim, kControlDim}}, {0, 2});
  DoubleIntegratorDynamics dyn{spec.dt};
  for (int i = 0; i < 2; ++i) {
    b.set_dynamics(i, [dyn](auto x, auto u, int k) { return dyn.next(x, u, k); }, true);
  }
  detail::PositionRefs pos = [&b](int i, int t) {
    return std::array<VarRef, 2>{b.state(i, t, 0), b.state(i, t, 1)};
  };
  detail::add_tracking_player_costs(b, spec, 0, pos, false);
  detail::add_tracking_player_costs(b, spec, 1, pos, true);
  for (int i = 0; i < 2; ++i) {
    detail::add_control_bounds(b, i, spec.control_bound);
    if (spec.enforce_speed_bound) detail::add_speed_bounds(b, i, spec.speed_bound);
  }
  const double dmin = spec.d_min;
  for (int t = 1; t < spec.horizon; ++t) {
    b.add_shared_inequality({b.state(0, t, 0), b.state(0, t, 1), b.state(1, t, 0), b.state(1, t, 1)},
                            [dmin](const auto& v) {
                              return detail::smooth_distance(v[0] - v[2], v[1] - v[3]) -
                                     detail::S_of(v, dmin);
                            },
                            "collision");
  }
  return b.build();
}

/// Ego-only variant: the target's positions at t = 0..T-1 are frozen in the
/// extra parameter block (x, y per knot) and collision rows become private.
inline TrajectoryGame make_tracking_prediction_game(const TrackingGameSpec& spec) {
  spec.validate();
  const int T = spec.horizon;
  GameBuilder b(T, {{kStateDim, kControlDim}}, {0}, 2 * T);
  DoubleIntegratorDynamics dyn{spec.dt};
  b.set_dynamics(0, [dyn](auto x, auto u, int k) { return dyn.next(x, u, k); }, true);
  detail::PositionRefs pos = [&b](int i, int t) {
    if (i == 0) return std::array<VarRef, 2>{b.state(0, t, 0), b.state(0, t, 1)};
    return std::array<VarRef, 2>{b.extra(2 * t), b.extra(2 * t + 1)};
  };
  detail::add_tracking_player_costs(b, spec, 0, pos, false);
  detail::add_control_bounds(b, 0, spec.control_bound);
  if (spec.enforce_speed_bound) detail::add_speed_bounds(b, 0, spec.speed_bound);
  const double dmin = spec.d_min;
  for (int t = 1; t < T; ++t) {
    b.add_private_inequality(
        0, {b.state(0, t, 0), b.state(0, t, 1), b.extra(2 * t), b.extra(2 * t + 1)},
        [dmin](const auto& v) {
          return detail::smooth_distance(v[0] - v[2], v[1] - v[3]) - detail::S_of(v, dmin);
        },
        "collision");
  }
  return b.build();
}

// ---------------------------------------------------------------------------
// Ramp merge
// ---------------------------------------------------------------------------

/// Road along +x: main lanes y in [0, lane_width * num_lanes], on-ramp lane
/// y in [-lane_width, 0] used by the ego (player 0) only. Objective
/// parameters of every player are (reference speed, reference lateral
/// position).
struct RampMergeSpec {
  int n_players = 7;
  int horizon = 10;
  double dt = 0.1;
  double d_min = 0.5;
  double lane_width = 1.0;
  int num_lanes = 2;
  double velocity_weight = 1.0;
  double lane_weight = 1.0;
  double control_weight = 0.1;
  double penalty_weight = 50.0;
  double control_bound = 2.0;
  double speed_min = 1.0;  // reference speed sampling range
  double speed_max = 2.0;
  // Traffic light: x <= light_position for players starting in a lane listed
  // in light_lanes (lane 0 is the rightmost main lane).
  double light_position = 10.0;
  std::vector<int> light_lanes{0};
  // Initial placement box along x.
  double spawn_x_min = -3.0;
  double spawn_x_max = 8.0;
  double ego_x = 0.0;

  void validate() const {
    if (n_players < 1 || horizon < 2 || !(dt > 0) || !(d_min > 0) || !(lane_width > 0) ||
        num_lanes < 1 || !(control_bound > 0) || !(speed_min > 0) || speed_max < speed_min ||
        !(spawn_x_max > spawn_x_min)) {
      throw std::invalid_argument("RampMergeSpec: invalid parameters");
    }
  }
  double road_top() const { return lane_width * num_lanes; }
  double lane_center(int lane) const { return lane_width * (lane + 0.5); }
  int lane_of(double y) const {
    if (y < 0) return -1;
    return std::min(num_lanes - 1, static_cast<int>(y / lane_width));
  }
};

/// Stage-summed cost of one ramp-merge player over a joint trajectory;
/// `objective` is (reference speed, reference lateral position).
inline double ramp_merge_cost(const RampMergeSpec& spec, const Matrix& X, const Matrix& U,
                              int player, const Vector& objective) {
  const int T = static_cast<int>(X.rows());
  const int N = static_cast<int>(X.cols()) / kStateDim;
  double J = 0.0;
  for (int t = 0; t + 1 < T; ++t) {
    const Vector x = X.row(t + 1).segment<kStateDim>(kStateDim * player).transpose();
    const double ev = x[2] - objective[0];
    const double el = x[1] - objective[1];
    J += spec.velocity_weight * ev * ev + spec.lane_weight * el * el;
    J += spec.control_weight * U.row(t).segment<2>(kControlDim * player).squaredNorm();
    for (int j = 0; j < N; ++j) {
      if (j == player) continue;
      const double d = (X.row(t + 1).segment<2>(kStateDim * j) - x.head<2>().transpose()).norm();
      J += detail::cubic_penalty_value(d, spec.d_min, spec.penalty_weight);
    }
  }
  return J;
}

namespace detail {

inline void add_ramp_player_costs(GameBuilder& b, const RampMergeSpec& spec, int i, int n_players,
                                  const PositionRefs& pos,
                                  const std::function<VarRef(int, int)>& objective_ref) {
  const int T = b.horizon();
  const double wv = spec.velocity_weight;
  const double wl = spec.lane_weight;
  const double cw = spec.control_weight;
  const double dmin = spec.d_min;
  const double pw = spec.penalty_weight;
  for (int t = 0; t + 1 < T; ++t) {
    b.add_cost(i, {b.state(i, t + 1, 2), objective_ref(i, 0)}, [wv](const auto& v) {
      auto e = v[0] - v[1];
      return S_of(v, wv) * e * e;
    });
    b.add_cost(i, {b.state(i, t + 1, 1), objective_ref(i, 1)}, [wl](const auto& v) {
      auto e = v[0] - v[1];
      return S_of(v, wl) * e * e;
    });
    auto own = pos(i, t + 1);
    for (int j = 0; j < n_players; ++j) {
      if (j == i) continue;
      auto other = pos(j, t + 1);
      b.add_cost(i, {own[0], own[1], other[0], other[1]}, [dmin, pw](const auto& v) {
        return cubic_penalty(smooth_distance(v[0] - v[2], v[1] - v[3]), dmin, pw);
      });
    }
  }
  for (int t = 0; t < T; ++t) {
    b.add_cost(i, {b.control(i, t, 0), b.control(i, t, 1)},
               [cw](const auto& v) { return S_of(v, cw) * (v[0] * v[0] + v[1] * v[1]); });
  }
}

inline void add_ramp_private_rows(GameBuilder& b, const RampMergeSpec& spec, int i,
                                  bool light_applies) {
  add_control_bounds(b, i, spec.control_bound);
  const double y_lo = i == 0 ? -spec.lane_width : 0.0;
  const double y_hi = spec.road_top();
  const double light = spec.light_position;
  for (int t = 1; t < b.horizon(); ++t) {
    b.add_private_inequality(
        i, {b.state(i, t, 1)}, [y_lo](const auto& v) { return v[0] - S_of(v, y_lo); },
        "lane_lower", true);
    b.add_private_inequality(
        i, {b.state(i, t, 1)}, [y_hi](const auto& v) { return S_of(v, y_hi) - v[0]; },
        "lane_upper", true);
    if (light_applies) {
      b.add_private_inequality(
          i, {b.state(i, t, 0)}, [light](const auto& v) { return S_of(v, light) - v[0]; },
          "traffic_light", true);
    }
  }
}

}  // namespace detail

/// `light_players[i]` says whether the traffic light binds player i (decided
/// by the lane the player starts in).
inline TrajectoryGame make_ramp_merge(const RampMergeSpec& spec,
                                      const std::vector<bool>& light_players) {
  spec.validate();
  const int N = spec.n_players;
  if (static_cast<int>(light_players.size()) != N) {
    throw std::invalid_argument("make_ramp_merge: light_players size");
  }
  std::vector<PlayerSpec> players(static_cast<size_t>(N), {kStateDim, kControlDim});
  GameBuilder b(spec.horizon, players, std::vector<int>(static_cast<size_t>(N), 2));
  DoubleIntegratorDynamics dyn{spec.dt};
  for (int i = 0; i < N; ++i) {
    b.set_dynamics(i, [dyn](auto x, auto u, int k) { return dyn.next(x, u, k); }, true);
  }
  detail::PositionRefs pos = [&b](int i, int t) {
    return std::array<VarRef, 2>{b.state(i, t, 0), b.state(i, t, 1)};
  };
  auto obj = [&b](int i, int k) { return b.objective(i, k); };
  for (int i = 0; i < N; ++i) {
    detail::add_ramp_player_costs(b, spec, i, N, pos, obj);
    detail::add_ramp_private_rows(b, spec, i, light_players[static_cast<size_t>(i)]);
  }
  const double dmin = spec.d_min;
  for (int t = 1; t < spec.horizon; ++t) {
    for (int i = 0; i < N; ++i) {
      for (int j = i + 1; j < N; ++j) {
        b.add_shared_inequality(
            {b.state(i, t, 0), b.state(i, t, 1), b.state(j, t, 0), b.state(j, t, 1)},
            [dmin](const auto& v) {
              return detail::smooth_distance(v[0] - v[2], v[1] - v[3]) - detail::S_of(v, dmin);
            },
            "collision");
      }
    }
  }
  return b.build();
}

/// Ego-only ramp merge against frozen predictions of the N-1 opponents. The
/// extra block holds, for opponent j = 1..N-1 and knot t, (x, y) at index
/// 2 * ((j - 1) * T + t).
inline TrajectoryGame make_ramp_merge_prediction_game(const RampMergeSpec& spec,
                                                      bool light_applies_to_ego) {
  spec.validate();
  const int N = spec.n_players;
  const int T = spec.horizon;
  GameBuilder b(T, {{kStateDim, kControlDim}}, {2}, 2 * T * (N - 1));
  DoubleIntegratorDynamics dyn{spec.dt};
  b.set_dynamics(0, [dyn](auto x, auto u, int k) { return dyn.next(x, u, k); }, true);
  detail::PositionRefs pos = [&b, T](int i, int t) {
    if (i == 0) return std::array<VarRef, 2>{b.state(0, t, 0), b.state(0, t, 1)};
    const int base = 2 * ((i - 1) * T + t);
    return std::array<VarRef, 2>{b.extra(base), b.extra(base + 1)};
  };
  auto obj = [&b](int i, int k) { return b.objective(i, k); };
  detail::add_ramp_player_costs(b, spec, 0, N, pos, obj);
  detail::add_ramp_private_rows(b, spec, 0, light_applies_to_ego);
  const double dmin = spec.d_min;
  for (int t = 1; t < T; ++t) {
    auto own = pos(0, t);
    for (int j = 1; j < N; ++j) {
      auto other = pos(j, t);
      b.add_private_inequality(
          0, {own[0], own[1], other[0], other[1]},
          [dmin](const auto& v) {
            return detail::smooth_distance(v[0] - v[2], v[1] - v[3]) - detail::S_of(v, dmin);
          },
          "collision");
    }
  }
  return b.build();
}

// ---------------------------------------------------------------------------
// Trial sampling
// ---------------------------------------------------------------------------

struct Trial {
  std::uint64_t seed = 0;
  std::vector<Vector> objectives;  // ground-truth objective parameters per player
  Vector initial_state;            // joint state
};

inline double min_pairwise_distance(const Vector& joint_state) {
  const auto n = joint_state.size() / kStateDim;
  double best = kInf;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      best = std::min(best, (joint_state.segment<2>(kStateDim * i) -
                             joint_state.segment<2>(kStateDim * j))
                                .norm());
    }
  }
  return best;
}

/// Goal and both start positions uniform in the arena (shrunk by d_min),
/// players at rest, starts at least 2 * d_min apart.
inline Trial sample_tracking_trial(const TrackingGameSpec& spec, std::uint64_t seed) {
  spec.validate();
  const double half = 0.5 * spec.arena_size - spec.d_min;
  if (!(half > 0)) throw std::invalid_argument("sample_tracking_trial: arena too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(-half, half);
  Trial trial;
  trial.seed = seed;
  trial.objectives = {Vector(0), Vector(2)};
  trial.objectives[1] << coord(rng), coord(rng);
  trial.initial_state = Vector::Zero(2 * kStateDim);
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw std::runtime_error("sample_tracking_trial: rejection sampling failed");
    for (int i = 0; i < 2; ++i) {
      trial.initial_state[kStateDim * i] = coord(rng);
      trial.initial_state[kStateDim * i + 1] = coord(rng);
    }
    if (min_pairwise_distance(trial.initial_state) >= 2 * spec.d_min) break;
  }
  return trial;
}

/// Ego on the ramp; opponents in random main lanes at their reference
/// speed; all starts at least 2 * d_min apart.
inline Trial sample_ramp_merge_trial(const RampMergeSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> speed(spec.speed_min, spec.speed_max);
  std::uniform_real_distribution<double> spawn(spec.spawn_x_min, spec.spawn_x_max);
  std::uniform_real_distribution<double> offset(-0.2 * spec.lane_width, 0.2 * spec.lane_width);
  std::uniform_int_distribution<int> lane(0, spec.num_lanes - 1);
  const int N = spec.n_players;
  Trial trial;
  trial.seed = seed;
  trial.objectives.assign(static_cast<size_t>(N), Vector(2));
  trial.initial_state = Vector::Zero(N * kStateDim);
  // The ego wants to merge into the rightmost main lane.
  trial.objectives[0] << speed(rng), spec.lane_center(0);
  for (int i = 1; i < N; ++i) {
    trial.objectives[static_cast<size_t>(i)] << speed(rng),
        spec.lane_center(lane(rng)) + offset(rng);
  }
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw std::runtime_error("sample_ramp_merge_trial: rejection sampling failed");
    trial.initial_state.segment<4>(0) << spec.ego_x,
        -0.5 * spec.lane_width, trial.objectives[0][0], 0.0;
    for (int i = 1; i < N; ++i) {
      const int l = lane(rng);
      trial.initial_state.segment<4>(kStateDim * i) << spawn(rng), spec.lane_center(l),
          trial.objectives[static_cast<size_t>(i)][0], 0.0;
    }
    if (min_pairwise_distance(trial.initial_state) >= 2 * spec.d_min) break;
  }
  return trial;
}

}  // namespace mpgp
