#pragma once

// Two-layer feed-forward network mapping an observation window to an
// initial parameter estimate, trained through the differentiable game
// solver on the observation likelihood.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "mpgp/inverse_game.hpp"
#include "mpgp/mpgp.hpp"
#include "mpgp/simulation.hpp"

namespace mpgp {

/// out = output_offset + output_scale * (W2 tanh(W1 (input_scale * (x - input_offset)) + b1) + b2)
struct WarmstartNet {
  Matrix W1;
  Vector b1;
  Matrix W2;
  Vector b2;
  Vector input_offset;
  Vector input_scale;
  Vector output_offset;
  Vector output_scale;

  int input_dim() const { return static_cast<int>(W1.cols()); }
  int hidden_dim() const { return static_cast<int>(W1.rows()); }
  int output_dim() const { return static_cast<int>(W2.rows()); }
  Eigen::Index parameter_count() const { return W1.size() + b1.size() + W2.size() + b2.size(); }

  /// Xavier-normal weights, zero biases, identity normalization.
  static WarmstartNet create(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed) {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
      throw std::invalid_argument("WarmstartNet: dimensions must be positive");
    }
    WarmstartNet n;
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Matrix& m) {
      std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols())));
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = d(rng);
    };
    n.W1.resize(hidden_dim, input_dim);
    n.W2.resize(output_dim, hidden_dim);
    fill(n.W1);
    fill(n.W2);
    n.b1 = Vector::Zero(hidden_dim);
    n.b2 = Vector::Zero(output_dim);
    n.input_offset = Vector::Zero(input_dim);
    n.input_scale = Vector::Ones(input_dim);
    n.output_offset = Vector::Zero(output_dim);
    n.output_scale = Vector::Ones(output_dim);
    return n;
  }

  void validate() const {
    const auto h = W1.rows(), in = W1.cols(), out = W2.rows();
    if (b1.size() != h || W2.cols() != h || b2.size() != out || input_offset.size() != in ||
        input_scale.size() != in || output_offset.size() != out || output_scale.size() != out) {
      throw std::invalid_argument("WarmstartNet: inconsistent dimensions");
    }
    for (const Vector* v : {&input_offset, &input_scale, &output_offset, &output_scale, &b1, &b2}) {
      if (!v->allFinite()) throw std::invalid_argument("WarmstartNet: non-finite entries");
    }
    if (!W1.allFinite() || !W2.allFinite()) throw std::invalid_argument("WarmstartNet: non-finite weights");
  }

  Vector forward(const Vector& x) const {
    if (x.size() != input_dim()) throw std::invalid_argument("WarmstartNet: input size");
    const Vector xs = input_scale.cwiseProduct(x - input_offset);
    const Vector h = (W1 * xs + b1).array().tanh().matrix();
    return output_offset + output_scale.cwiseProduct(W2 * h + b2);
  }

  /// Gradient of a scalar loss with respect to the flattened weights
  /// (W1, b1, W2, b2; column-major), given d loss / d output.
  Vector backward(const Vector& x, const Vector& grad_out) const {
    const Vector xs = input_scale.cwiseProduct(x - input_offset);
    const Vector h = (W1 * xs + b1).array().tanh().matrix();
    const Vector gy = output_scale.cwiseProduct(grad_out);
    const Vector ga = (W2.transpose() * gy).cwiseProduct((1.0 - h.array().square()).matrix());
    Vector g(parameter_count());
    Eigen::Index k = 0;
    Eigen::Map<Matrix>(g.data() + k, W1.rows(), W1.cols()) = ga * xs.transpose();
    k += W1.size();
    g.segment(k, b1.size()) = ga;
    k += b1.size();
    Eigen::Map<Matrix>(g.data() + k, W2.rows(), W2.cols()) = gy * h.transpose();
    k += W2.size();
    g.segment(k, b2.size()) = gy;
    return g;
  }

  Vector weights() const {
    Vector w(parameter_count());
    Eigen::Index k = 0;
    w.segment(k, W1.size()) = Eigen::Map<const Vector>(W1.data(), W1.size());
    k += W1.size();
    w.segment(k, b1.size()) = b1;
    k += b1.size();
    w.segment(k, W2.size()) = Eigen::Map<const Vector>(W2.data(), W2.size());
    k += W2.size();
    w.segment(k, b2.size()) = b2;
    return w;
  }

  void set_weights(const Vector& w) {
    if (w.size() != parameter_count()) throw std::invalid_argument("WarmstartNet: weight count");
    Eigen::Index k = 0;
    W1 = Eigen::Map<const Matrix>(w.data() + k, W1.rows(), W1.cols());
    k += W1.size();
    b1 = w.segment(k, b1.size());
    k += b1.size();
    W2 = Eigen::Map<const Matrix>(w.data() + k, W2.rows(), W2.cols());
    k += W2.size();
    b2 = w.segment(k, b2.size());
  }
};

// ---------------------------------------------------------------------------
// Serialization: one JSON header line, then little-endian float64 values.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xFFu) << (8 * (7 - b));
  return r;
}

inline std::vector<const Vector*> net_vectors(const WarmstartNet& n) {
  return {&n.input_offset, &n.input_scale, &n.output_offset, &n.output_scale};
}

}  // namespace detail

inline void save_warmstart(const WarmstartNet& net, std::ostream& out) {
  net.validate();
  const nlohmann::json header = {
      {"format", "mpgp_warmstart"},
      {"version", 1},
      {"input_dim", net.input_dim()},
      {"hidden_dim", net.hidden_dim()},
      {"output_dim", net.output_dim()},
      {"activation", "tanh"},
      {"dtype", "float64_le"},
      {"order", {"W1", "b1", "W2", "b2", "input_offset", "input_scale", "output_offset", "output_scale"}},
  };
  out << header.dump() << '\n';
  auto write = [&out](const Vector& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const std::uint64_t bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v[k]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  };
  write(net.weights());
  for (const Vector* v : detail::net_vectors(net)) write(*v);
  if (!out) throw std::runtime_error("save_warmstart: write failed");
}

inline WarmstartNet load_warmstart(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_warmstart: missing header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("load_warmstart: bad header: ") + e.what());
  }
  if (h.value("format", "") != "mpgp_warmstart" || h.value("version", 0) != 1 ||
      h.value("activation", "") != "tanh" || h.value("dtype", "") != "float64_le") {
    throw std::runtime_error("load_warmstart: unsupported header");
  }
  WarmstartNet net = WarmstartNet::create(h.at("input_dim").get<int>(), h.at("hidden_dim").get<int>(),
                                          h.at("output_dim").get<int>(), 0);
  auto read = [&in](Vector& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw std::runtime_error("load_warmstart: truncated data");
      }
      v[k] = std::bit_cast<double>(detail::to_little_endian(bits));
    }
  };
  Vector w(net.parameter_count());
  read(w);
  net.set_weights(w);
  read(net.input_offset);
  read(net.input_scale);
  read(net.output_offset);
  read(net.output_scale);
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("load_warmstart: trailing data");
  net.validate();
  return net;
}

inline void save_warmstart(const WarmstartNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  save_warmstart(net, out);
}

inline WarmstartNet load_warmstart(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_warmstart(in);
}

// ---------------------------------------------------------------------------
// Task, samples and prediction
// ---------------------------------------------------------------------------

/// One training or evaluation window.
struct WarmstartSample {
  std::uint64_t seed = 0;
  ObservationBuffer buffer;
  Vector theta_prior;  // packed: observed window start, prior objectives
  Vector theta_true;   // packed ground truth
};

/// The inverse game and the estimator settings shared by all samples.
struct WarmstartTask {
  std::shared_ptr<const CompiledGame> game;
  ObservationModel model;
  std::vector<int> free;  // packed entries the network predicts
  BoxBounds theta_bounds;
  EstimatorConfig estimator;
  SolverConfig solver;
  double dt = 0.1;
  int n_players = 2;

  std::vector<bool> mask() const {
    std::vector<bool> m(static_cast<size_t>(theta_bounds.size()), false);
    for (int k : free) m[static_cast<size_t>(k)] = true;
    return m;
  }

  static WarmstartTask for_scenario(const ScenarioModel& model, const Trial& any_trial) {
    const PlannerGames games = model.games_for(any_trial);
    WarmstartTask t;
    t.game = games.full;
    const ParameterLayout& pl = t.game->game.parameters();
    const PlannerConfig pc = model.planner_config(BaselineKind::AdaptiveMPGP, pl);
    t.model = pc.model;
    t.estimator = pc.estimator;
    t.theta_bounds = *pc.estimator.theta_bounds;
    t.solver = pc.solver;
    t.dt = games.dt;
    t.n_players = model.n_players();
    const auto m = estimator_mask(pl, t.n_players, pc.model.mode == ObservationMode::PositionOnly);
    for (size_t k = 0; k < m.size(); ++k) {
      if (m[k]) t.free.push_back(static_cast<int>(k));
    }
    return t;
  }
};

/// Network input: the ego's window-start state followed by the observed
/// entries of every buffered observation.
inline Vector warmstart_features(const ObservationBuffer& buffer, const ObservationModel& model) {
  if (buffer.empty()) throw std::invalid_argument("warmstart_features: empty buffer");
  const auto per = static_cast<Eigen::Index>(model.selected.size());
  Vector x(kStateDim + per * buffer.size());
  x.head(kStateDim) = buffer[0].joint.head(kStateDim);
  for (int t = 0; t < buffer.size(); ++t) {
    for (Eigen::Index j = 0; j < per; ++j) {
      x[kStateDim + per * t + j] = buffer[t].joint[model.selected[static_cast<size_t>(j)]];
    }
  }
  return x;
}

/// Packed parameter guess: the prior with the free entries replaced by the
/// network output, clamped to the task bounds.
inline Vector predict_theta(const WarmstartNet& net, const WarmstartTask& task,
                            const WarmstartSample& sample) {
  if (!sample.buffer.full()) throw std::invalid_argument("predict_theta: buffer not full");
  const Vector y = net.forward(warmstart_features(sample.buffer, task.model));
  if (y.size() != static_cast<Eigen::Index>(task.free.size())) {
    throw std::invalid_argument("predict_theta: output size does not match the task");
  }
  Vector theta = sample.theta_prior;
  for (size_t k = 0; k < task.free.size(); ++k) theta[task.free[k]] = y[static_cast<Eigen::Index>(k)];
  return task.theta_bounds.clamp(theta);
}

/// Observation loss at a packed parameter and its gradient with respect to
/// the network output (zero on clamped entries). Throws ForwardSolveFailed.
struct WarmstartLoss {
  double nll = 0.0;
  Vector grad_output;
  Vector z_star;
};

inline WarmstartLoss warmstart_loss(const WarmstartNet& net, const WarmstartTask& task,
                                    const WarmstartSample& sample, const Vector& warm) {
  const Vector y = net.forward(warmstart_features(sample.buffer, task.model));
  const Vector theta = predict_theta(net, task, sample);
  const LikelihoodGradient lg =
      likelihood_gradient(*task.game, theta, sample.buffer, task.model, warm, task.solver);
  WarmstartLoss out;
  out.nll = lg.nll;
  out.z_star = lg.z_star;
  out.grad_output = Vector::Zero(y.size());
  for (size_t k = 0; k < task.free.size(); ++k) {
    const int j = task.free[k];
    if (theta[j] == y[static_cast<Eigen::Index>(k)]) out.grad_output[static_cast<Eigen::Index>(k)] = lg.gradient[j];
  }
  return out;
}

inline Vector initial_guess(const WarmstartTask& task, const Vector& theta) {
  return rollout_guess(*task.game, theta.head(task.game->game.parameters().initial_dim), task.dt);
}

/// Input standardization from the sample features and output scaling from
/// the spread of the prior estimates (at least 1 per entry).
inline void fit_normalization(WarmstartNet& net, const WarmstartTask& task,
                              const std::vector<WarmstartSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("fit_normalization: no samples");
  const auto n = static_cast<double>(samples.size());
  Vector mean_x = Vector::Zero(net.input_dim()), sq_x = Vector::Zero(net.input_dim());
  Vector mean_y = Vector::Zero(net.output_dim()), sq_y = Vector::Zero(net.output_dim());
  for (const auto& s : samples) {
    const Vector x = warmstart_features(s.buffer, task.model);
    mean_x += x;
    sq_x += x.cwiseAbs2();
    for (size_t k = 0; k < task.free.size(); ++k) {
      const double v = s.theta_prior[task.free[k]];
      mean_y[static_cast<Eigen::Index>(k)] += v;
      sq_y[static_cast<Eigen::Index>(k)] += v * v;
    }
  }
  mean_x /= n;
  mean_y /= n;
  const Vector sd_x = (sq_x / n - mean_x.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  const Vector sd_y = (sq_y / n - mean_y.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  net.input_offset = mean_x;
  net.input_scale = sd_x.unaryExpr([](double s) { return s > 1e-9 ? 1.0 / s : 1.0; });
  net.output_offset = mean_y;
  net.output_scale = sd_y.cwiseMax(1.0);
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

struct WarmstartDataConfig {
  int episodes = 500;
  std::uint64_t seed = 0;
  int max_start_tick = 10;  // window taken at a uniform tick in [0, max_start_tick]
  double sigma = 0.0;
  int workers = 1;
};

/// One window per episode: the ground-truth closed loop runs to a random
/// tick, and the window is the ground-truth game's plan from there,
/// observed under the scenario's observation model. Episodes whose
/// ground-truth solve fails are dropped.
inline std::vector<WarmstartSample> generate_warmstart_samples(const ScenarioModel& model,
                                                              const WarmstartDataConfig& dc) {
  if (dc.episodes < 0 || dc.max_start_tick < 0 || dc.sigma < 0 || dc.workers < 1) {
    throw std::invalid_argument("generate_warmstart_samples: bad config");
  }
  const ScenarioConfig& cfg = model.config();
  const int N = model.n_players();
  const double dt = cfg.dt();
  std::vector<std::optional<WarmstartSample>> slots(static_cast<size_t>(dc.episodes));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int e = next++; e < dc.episodes; e = next++) {
      const std::uint64_t seed = dc.seed + static_cast<std::uint64_t>(e);
      const Trial trial = model.sample(seed);
      const PlannerGames games = model.games_for(trial);
      const CompiledGame& gt = *games.full;
      PlannerConfig pc = model.planner_config(BaselineKind::AdaptiveMPGP, gt.game.parameters());
      pc.model.sigma = dc.sigma;
      std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
      const int start = std::uniform_int_distribution<int>(0, dc.max_start_tick)(rng);
      std::normal_distribution<double> noise(0.0, 1.0);
      const DoubleIntegratorDynamics dyn{dt};
      Vector x = trial.initial_state;
      std::optional<Vector> last;
      std::optional<JointTrajectory> window;
      for (int k = 0; k <= start; ++k) {
        const Vector th = Theta{x, trial.objectives, Vector(0)}.pack();
        const MCPSolution sol =
            solve_with_restart(gt, th, warm_start(gt, last, x, dt), x, dt, cfg.solver);
        if (!sol.solved()) break;
        last = sol.z_star;
        JointTrajectory tr = extract_trajectories(gt.layout, sol.z_star);
        if (k == start) {
          window = std::move(tr);
          break;
        }
        Vector u = tr.controls.row(0).transpose();
        u = u.cwiseMax(-games.control_bound).cwiseMin(games.control_bound);
        x = step_joint(dyn, x, u);
      }
      if (!window) continue;
      WarmstartSample s;
      s.seed = seed;
      s.buffer = detail::observe_window(window->states, pc.model, N, [&] { return noise(rng); });
      const Vector x_start = detail::window_start_guess(s.buffer, x, pc.model, N, dt);
      s.theta_prior = Theta{x_start, model.prior(trial), Vector(0)}.pack();
      s.theta_true = Theta{x, trial.objectives, Vector(0)}.pack();
      slots[static_cast<size_t>(e)] = std::move(s);
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(dc.workers, std::max(1, dc.episodes));
  for (int w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::vector<WarmstartSample> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int max_epochs = 40;
  int batch_size = 16;
  double learning_rate = 1e-3;  // Adam step size
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int patience = 5;               // epochs without validation improvement
  double min_improvement = 1e-3;  // relative
  std::uint64_t seed = 0;         // sample order

  void validate() const {
    if (max_epochs < 0 || batch_size < 1 || learning_rate < 0 || !(beta1 >= 0 && beta1 < 1) ||
        !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0) || patience < 1 || min_improvement < 0) {
      throw std::invalid_argument("TrainConfig: invalid parameters");
    }
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;       // mean training NLL per epoch
  std::vector<double> validation_loss;  // mean validation NLL after each epoch
  double initial_validation_loss = kNaN;
  int skipped = 0;  // training samples whose forward solve failed
  int epochs = 0;
  bool stopped_early = false;
};

/// Mean NLL of the network predictions over `samples`, skipping failed
/// solves; `warm` caches per-sample solutions.
inline double mean_prediction_loss(const WarmstartNet& net, const WarmstartTask& task,
                                   const std::vector<WarmstartSample>& samples,
                                   std::vector<std::optional<Vector>>* warm = nullptr,
                                   int* failures = nullptr) {
  double sum = 0.0;
  int count = 0;
  for (size_t k = 0; k < samples.size(); ++k) {
    const Vector theta = predict_theta(net, task, samples[k]);
    const Vector guess = warm && (*warm)[k] ? *(*warm)[k] : initial_guess(task, theta);
    try {
      const LikelihoodGradient lg =
          likelihood_gradient(*task.game, theta, samples[k].buffer, task.model, guess, task.solver);
      sum += lg.nll;
      ++count;
      if (warm) (*warm)[k] = lg.z_star;
    } catch (const ForwardSolveFailed&) {
      if (failures) ++*failures;
    }
  }
  return count > 0 ? sum / count : kNaN;
}

/// Mini-batch Adam on the mean observation NLL. The best weights by
/// validation loss are kept.
inline TrainReport train_warmstart(WarmstartNet& net, const WarmstartTask& task,
                                   const std::vector<WarmstartSample>& train,
                                   const std::vector<WarmstartSample>& validation,
                                   const TrainConfig& tc) {
  tc.validate();
  net.validate();
  TrainReport rep;
  std::vector<std::optional<Vector>> warm_train(train.size()), warm_val(validation.size());
  rep.initial_validation_loss = mean_prediction_loss(net, task, validation, &warm_val);
  double best = rep.initial_validation_loss;
  Vector best_w = net.weights();
  Vector w = best_w;
  Vector m = Vector::Zero(w.size()), v = Vector::Zero(w.size());
  long step = 0;
  int stale = 0;
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(tc.seed);
  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(tc.batch_size)) {
      const size_t e = std::min(order.size(), b + static_cast<size_t>(tc.batch_size));
      Vector g = Vector::Zero(w.size());
      int used = 0;
      for (size_t q = b; q < e; ++q) {
        const size_t k = order[q];
        const WarmstartSample& s = train[k];
        const Vector guess =
            warm_train[k] ? *warm_train[k] : initial_guess(task, predict_theta(net, task, s));
        WarmstartLoss L;
        try {
          L = warmstart_loss(net, task, s, guess);
        } catch (const ForwardSolveFailed&) {
          try {
            L = warmstart_loss(net, task, s, initial_guess(task, predict_theta(net, task, s)));
          } catch (const ForwardSolveFailed&) {
            ++rep.skipped;
            continue;
          }
        }
        warm_train[k] = L.z_star;
        loss_sum += L.nll;
        ++loss_count;
        g += net.backward(warmstart_features(s.buffer, task.model), L.grad_output);
        ++used;
      }
      if (used == 0) continue;
      g /= used;
      ++step;
      m = tc.beta1 * m + (1 - tc.beta1) * g;
      v = tc.beta2 * v + (1 - tc.beta2) * g.cwiseAbs2();
      const double c1 = 1 - std::pow(tc.beta1, static_cast<double>(step));
      const double c2 = 1 - std::pow(tc.beta2, static_cast<double>(step));
      w -= (tc.learning_rate * (m / c1).array() / ((v / c2).array().sqrt() + tc.epsilon)).matrix();
      net.set_weights(w);
    }
    rep.epoch_loss.push_back(loss_count > 0 ? loss_sum / loss_count : kNaN);
    const double val = mean_prediction_loss(net, task, validation, &warm_val);
    rep.validation_loss.push_back(val);
    ++rep.epochs;
    if (std::isfinite(val) && (!std::isfinite(best) || val < best * (1 - tc.min_improvement))) {
      best = val;
      best_w = w;
      stale = 0;
    } else if (++stale >= tc.patience) {
      rep.stopped_early = true;
      break;
    }
  }
  if (std::isfinite(best)) net.set_weights(best_w);
  return rep;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct WarmstartComparison {
  std::vector<double> nll_network;  // prediction + network_steps
  std::vector<double> nll_prior;    // prior + prior_steps
  int failures = 0;                 // samples where either arm failed (excluded)
  double mean_network = kNaN;
  double mean_prior = kNaN;
};

/// Final NLL of gradient descent started from the network prediction with
/// `network_steps` steps against the prior with `prior_steps` steps.
inline WarmstartComparison compare_warmstart(const WarmstartNet& net, const WarmstartTask& task,
                                             const std::vector<WarmstartSample>& samples,
                                             int network_steps = 3, int prior_steps = 30) {
  WarmstartComparison c;
  const std::vector<bool> mask = task.mask();
  auto run = [&](const Vector& theta0, int steps, const ObservationBuffer& buf) {
    EstimatorConfig ec = task.estimator;
    ec.max_steps = steps;
    ec.theta_bounds = task.theta_bounds;
    return update_estimate(*task.game, theta0, buf, task.model, ec, mask, initial_guess(task, theta0),
                           task.solver);
  };
  for (const auto& s : samples) {
    const EstimateResult a = run(predict_theta(net, task, s), network_steps, s.buffer);
    const EstimateResult b = run(s.theta_prior, prior_steps, s.buffer);
    if (!a.ok || !b.ok) {
      ++c.failures;
      continue;
    }
    c.nll_network.push_back(a.nll_final);
    c.nll_prior.push_back(b.nll_final);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  c.mean_network = mean(c.nll_network);
  c.mean_prior = mean(c.nll_prior);
  return c;
}

}  // namespace mpgp
