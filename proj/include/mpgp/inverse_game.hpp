#pragma once

// Maximum-likelihood estimation of game parameters from a window of noisy,
// possibly partial observations, by gradient descent through the solver.

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpgp/game.hpp"
#include "mpgp/mcp.hpp"
#include "mpgp/sensitivity.hpp"

namespace mpgp {

/// One sensed joint state. Entries that are not observed hold NaN.
struct Observation {
  int tick = 0;
  Vector joint;
};

/// Fixed-length FIFO window of observations, oldest first.
class ObservationBuffer {
 public:
  explicit ObservationBuffer(int capacity = 10) : capacity_(capacity) {
    if (capacity <= 0) throw std::invalid_argument("ObservationBuffer: capacity must be positive");
  }

  void push(Observation obs) {
    if (!entries_.empty() && obs.joint.size() != entries_.front().joint.size()) {
      throw std::invalid_argument("ObservationBuffer: observation size changed");
    }
    entries_.push_back(std::move(obs));
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }
  void clear() { entries_.clear(); }

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  bool full() const { return size() == capacity_; }
  const Observation& operator[](int k) const { return entries_.at(static_cast<size_t>(k)); }
  const Observation& oldest() const { return entries_.front(); }
  const Observation& newest() const { return entries_.back(); }

 private:
  int capacity_;
  std::deque<Observation> entries_;
};

enum class ObservationMode { Full, PositionOnly };

inline const char* to_string(ObservationMode m) {
  return m == ObservationMode::Full ? "full" : "position_only";
}

inline ObservationMode observation_mode_from_string(const std::string& s) {
  if (s == "full") return ObservationMode::Full;
  if (s == "position_only") return ObservationMode::PositionOnly;
  throw std::invalid_argument("unknown observation mode: " + s);
}

/// Linear selection r(X): the joint-state columns compared against the
/// observations, plus the isotropic noise level used to generate them.
struct ObservationModel {
  std::vector<int> selected;
  double sigma = 0.0;
  ObservationMode mode = ObservationMode::Full;

  /// Observes every player other than the ego (player 0). Each player's
  /// state is (px, py, vx, vy).
  static ObservationModel opponents(int n_players, int state_dim, ObservationMode mode,
                                    double sigma) {
    if (sigma < 0) throw std::invalid_argument("ObservationModel: sigma must be >= 0");
    ObservationModel m;
    m.sigma = sigma;
    m.mode = mode;
    const int per = mode == ObservationMode::Full ? state_dim : 2;
    for (int i = 1; i < n_players; ++i) {
      for (int k = 0; k < per; ++k) m.selected.push_back(i * state_dim + k);
    }
    return m;
  }
};

/// Sum of squared residuals between buffered observations and the first
/// `buffer.size()` knots of the joint state trajectory X (T x n).
inline double negative_log_likelihood(const ObservationBuffer& buffer, const Matrix& X,
                                      const ObservationModel& model) {
  if (X.rows() < buffer.size()) {
    throw std::invalid_argument("negative_log_likelihood: trajectory shorter than the window");
  }
  double nll = 0.0;
  for (int t = 0; t < buffer.size(); ++t) {
    const Vector& y = buffer[t].joint;
    for (int j : model.selected) {
      if (j >= X.cols() || j >= y.size()) {
        throw std::invalid_argument("negative_log_likelihood: selection out of range");
      }
      const double r = y[j] - X(t, j);
      nll += r * r;
    }
  }
  return nll;
}

struct ForwardSolveFailed : std::runtime_error {
  SolveStatus status;
  explicit ForwardSolveFailed(SolveStatus s)
      : std::runtime_error(std::string("forward solve failed: ") + to_string(s)), status(s) {}
};

struct LikelihoodGradient {
  double nll = 0.0;
  Vector gradient;  // same length as theta
  Vector z_star;
  int solver_iterations = 0;
};

namespace detail {

/// z index of column j of the joint state at knot t.
inline int joint_state_z_index(const TrajectoryGame& game, int t, int j) {
  for (int i = game.num_players() - 1; i >= 0; --i) {
    const int off = game.state_offset_in_joint(i);
    if (j >= off) return game.state_index(i, t, j - off);
  }
  throw std::out_of_range("joint_state_z_index");
}

}  // namespace detail

/// NLL at theta and its gradient d NLL / d theta, chained through the
/// solution sensitivity of the compiled game.
inline LikelihoodGradient likelihood_gradient(const CompiledGame& game, const Vector& theta,
                                              const ObservationBuffer& buffer,
                                              const ObservationModel& model,
                                              const Vector& warm_start,
                                              const SolverConfig& solver = {}) {
  if (buffer.size() > game.game.horizon()) {
    throw std::invalid_argument("likelihood_gradient: window longer than the horizon");
  }
  MCPSolution sol = solve_mcp(game.problem, theta, warm_start, solver);
  if (!sol.solved()) throw ForwardSolveFailed(sol.status);
  LikelihoodGradient out;
  out.z_star = sol.z_star;
  out.solver_iterations = sol.iterations;
  const JointTrajectory tr = extract_trajectories(game.layout, sol.z_star);
  out.nll = negative_log_likelihood(buffer, tr.states, model);
  out.gradient = Vector::Zero(theta.size());
  if (theta.size() == 0 || buffer.empty()) return out;

  const ActiveSetPartition part = partition_indices(game.problem, sol.z_star, theta);
  const SolutionSensitivity sens = differentiate_solution(game.problem, sol.z_star, theta, part);
  for (int t = 0; t < buffer.size(); ++t) {
    const Vector& y = buffer[t].joint;
    for (int j : model.selected) {
      const double r = tr.states(t, j) - y[j];
      const int zi = detail::joint_state_z_index(game.game, t, j);
      out.gradient += 2.0 * r * sens.jacobian.row(zi).transpose();
    }
  }
  return out;
}

struct EstimatorConfig {
  double learning_rate = 0.02;
  int max_steps = 30;
  double stop_tol = 1e-4;
  // Optional clamp box for theta (full packed length).
  std::optional<BoxBounds> theta_bounds;

  void validate() const {
    if (learning_rate < 0 || max_steps < 0 || !(stop_tol > 0)) {
      throw std::invalid_argument("EstimatorConfig: invalid parameters");
    }
  }
};

struct EstimateResult {
  Vector theta;
  int steps = 0;
  double nll_initial = std::numeric_limits<double>::quiet_NaN();
  double nll_final = std::numeric_limits<double>::quiet_NaN();
  double gradient_norm = std::numeric_limits<double>::quiet_NaN();
  int failed_solves = 0;
  bool ok = false;  // at least one successful solve
  Vector z_star;    // inverse-game solution at the returned theta (if ok)
  int solver_iterations = 0;
};

/// Plain gradient descent on the entries of theta selected by `free_mask`.
/// A failed solve ends the loop at the last good iterate; if no solve
/// succeeds, the input theta is returned with ok = false.
inline EstimateResult update_estimate(const CompiledGame& game, const Vector& theta_tilde,
                                      const ObservationBuffer& buffer,
                                      const ObservationModel& model, const EstimatorConfig& config,
                                      const std::vector<bool>& free_mask, Vector warm_start,
                                      const SolverConfig& solver = {}) {
  config.validate();
  if (static_cast<Eigen::Index>(free_mask.size()) != theta_tilde.size()) {
    throw std::invalid_argument("update_estimate: mask size");
  }
  EstimateResult res;
  res.theta = theta_tilde;
  if (config.theta_bounds) res.theta = config.theta_bounds->clamp(res.theta);
  auto masked = [&](const Vector& g) {
    Vector m = g;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      if (!free_mask[static_cast<size_t>(k)]) m[k] = 0.0;
    }
    return m;
  };

  LikelihoodGradient cur;
  try {
    cur = likelihood_gradient(game, res.theta, buffer, model, warm_start, solver);
  } catch (const ForwardSolveFailed&) {
    res.failed_solves = 1;
    res.theta = theta_tilde;
    return res;
  }
  res.ok = true;
  res.nll_initial = cur.nll;
  res.solver_iterations += cur.solver_iterations;
  Vector g = masked(cur.gradient);
  while (res.steps < config.max_steps && g.norm() > config.stop_tol) {
    Vector next = res.theta - config.learning_rate * g;
    if (config.theta_bounds) next = config.theta_bounds->clamp(next);
    LikelihoodGradient trial;
    try {
      trial = likelihood_gradient(game, next, buffer, model, cur.z_star, solver);
    } catch (const ForwardSolveFailed&) {
      ++res.failed_solves;
      break;
    }
    res.solver_iterations += trial.solver_iterations;
    res.theta = next;
    cur = std::move(trial);
    g = masked(cur.gradient);
    ++res.steps;
  }
  res.nll_final = cur.nll;
  res.gradient_norm = g.norm();
  res.z_star = std::move(cur.z_star);
  return res;
}

}  // namespace mpgp
