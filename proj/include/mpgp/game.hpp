#pragma once

// N-player generalized Nash trajectory games and their compilation into a
// parametric MCP over the stacked primal-dual vector
//   z = [X^1, U^1, ..., X^N, U^N, mu, p_lambda^1, ..., p_lambda^N, s_lambda].
//
// Every cost, dynamics row and constraint row is a scalar term over a short
// list of variable references (primal entries of z or entries of the
// parameter vector). Derivatives of terms come from nested dual numbers.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mpgp/calculus.hpp"
#include "mpgp/mcp.hpp"

namespace mpgp {

struct VarRef {
  enum class Kind : std::uint8_t { Primal, Param };
  Kind kind = Kind::Primal;
  int index = 0;

  static VarRef primal(int i) { return {Kind::Primal, i}; }
  static VarRef param(int i) { return {Kind::Param, i}; }
  bool is_primal() const { return kind == Kind::Primal; }
};

class ScalarTerm {
 public:
  ScalarTerm(std::vector<VarRef> vars, bool linear) : vars_(std::move(vars)), linear_(linear) {}
  virtual ~ScalarTerm() = default;

  virtual double value(std::span<const double> local) const = 0;
  virtual void derivatives(std::span<const double> local, bool need_hessian,
                           LocalDerivatives& out) const = 0;

  const std::vector<VarRef>& vars() const { return vars_; }
  bool linear() const { return linear_; }

 private:
  std::vector<VarRef> vars_;
  bool linear_;
};

template <class Fn>
class LambdaTerm final : public ScalarTerm {
 public:
  LambdaTerm(std::vector<VarRef> vars, Fn fn, bool linear)
      : ScalarTerm(std::move(vars), linear), fn_(std::move(fn)) {}

  double value(std::span<const double> local) const override { return fn_(local); }

  void derivatives(std::span<const double> local, bool need_hessian,
                   LocalDerivatives& out) const override {
    local_derivatives(fn_, local, need_hessian && !linear(), out);
  }

 private:
  Fn fn_;
};

using TermPtr = std::shared_ptr<const ScalarTerm>;

/// `fn` is a generic callable `S fn(std::span<const S> local)` where `local`
/// holds the referenced variables in order.
template <class Fn>
TermPtr make_term(std::vector<VarRef> vars, Fn fn, bool linear = false) {
  return std::make_shared<LambdaTerm<Fn>>(std::move(vars), std::move(fn), linear);
}

struct ParameterLayout {
  int initial_dim = 0;
  std::vector<int> objective_dims;
  int extra_dim = 0;

  int objective_offset(int player) const {
    return initial_dim + std::accumulate(objective_dims.begin(),
                                         objective_dims.begin() + player, 0);
  }
  int extra_offset() const { return objective_offset(static_cast<int>(objective_dims.size())); }
  int size() const { return extra_offset() + extra_dim; }
};

/// Game parameters: the joint initial state, per-player objective parameters,
/// and an optional extra block (e.g. frozen opponent predictions).
struct Theta {
  Vector initial_state;
  std::vector<Vector> objectives;
  Vector extra;

  Vector pack() const {
    Eigen::Index n = initial_state.size() + extra.size();
    for (const auto& o : objectives) n += o.size();
    Vector out(n);
    Eigen::Index k = 0;
    out.segment(k, initial_state.size()) = initial_state;
    k += initial_state.size();
    for (const auto& o : objectives) {
      out.segment(k, o.size()) = o;
      k += o.size();
    }
    out.segment(k, extra.size()) = extra;
    return out;
  }

  static Theta unpack(const ParameterLayout& layout, const Vector& v) {
    if (v.size() != layout.size()) throw std::invalid_argument("Theta::unpack: size mismatch");
    Theta t;
    t.initial_state = v.head(layout.initial_dim);
    for (size_t i = 0; i < layout.objective_dims.size(); ++i) {
      t.objectives.push_back(
          v.segment(layout.objective_offset(static_cast<int>(i)), layout.objective_dims[i]));
    }
    t.extra = v.segment(layout.extra_offset(), layout.extra_dim);
    return t;
  }
};

struct PlayerSpec {
  int state_dim = 0;
  int control_dim = 0;
};

enum class RowKind : std::uint8_t { Equality, Private, Shared };

struct ConstraintRow {
  TermPtr term;
  RowKind kind = RowKind::Private;
  int player = -1;  // -1 for shared rows
  std::string tag;
};

class TrajectoryGame {
 public:
  int horizon() const { return horizon_; }
  int num_players() const { return static_cast<int>(players_.size()); }
  const PlayerSpec& player(int i) const { return players_.at(static_cast<size_t>(i)); }
  const ParameterLayout& parameters() const { return params_; }

  int primal_offset(int i) const { return primal_offsets_.at(static_cast<size_t>(i)); }
  int primal_dim(int i) const {
    const auto& p = player(i);
    return horizon_ * (p.state_dim + p.control_dim);
  }
  int total_primal() const { return primal_offsets_.back(); }
  int joint_state_dim() const {
    int n = 0;
    for (const auto& p : players_) n += p.state_dim;
    return n;
  }
  int joint_control_dim() const {
    int m = 0;
    for (const auto& p : players_) m += p.control_dim;
    return m;
  }
  int state_offset_in_joint(int i) const {
    int n = 0;
    for (int j = 0; j < i; ++j) n += player(j).state_dim;
    return n;
  }
  int control_offset_in_joint(int i) const {
    int m = 0;
    for (int j = 0; j < i; ++j) m += player(j).control_dim;
    return m;
  }

  // Zero-based time index t in [0, T).
  int state_index(int i, int t, int k) const {
    return primal_offset(i) + t * player(i).state_dim + k;
  }
  int control_index(int i, int t, int k) const {
    const auto& p = player(i);
    return primal_offset(i) + horizon_ * p.state_dim + t * p.control_dim + k;
  }
  int owner_of_primal(int index) const {
    for (int i = num_players() - 1; i >= 0; --i) {
      if (index >= primal_offset(i)) return i;
    }
    throw std::out_of_range("owner_of_primal");
  }

  const std::vector<TermPtr>& costs(int i) const { return costs_.at(static_cast<size_t>(i)); }
  const std::vector<ConstraintRow>& rows() const { return rows_; }

  int count_rows(RowKind kind, int player = -2) const {
    int n = 0;
    for (const auto& r : rows_) {
      if (r.kind == kind && (player == -2 || r.player == player)) ++n;
    }
    return n;
  }

  /// Copy without any inequality rows (equality-constrained KKT variant).
  TrajectoryGame without_inequalities() const {
    TrajectoryGame g = *this;
    std::erase_if(g.rows_, [](const ConstraintRow& r) { return r.kind != RowKind::Equality; });
    return g;
  }

 private:
  friend class GameBuilder;

  int horizon_ = 0;
  std::vector<PlayerSpec> players_;
  std::vector<int> primal_offsets_;
  ParameterLayout params_;
  std::vector<std::vector<TermPtr>> costs_;
  std::vector<ConstraintRow> rows_;
};

/// Incremental construction of a TrajectoryGame. Dynamics and initial-state
/// equality rows are generated from each player's dynamics map.
class GameBuilder {
 public:
  GameBuilder(int horizon, std::vector<PlayerSpec> players, std::vector<int> objective_dims,
              int extra_dim = 0) {
    if (horizon < 2) throw std::invalid_argument("GameBuilder: horizon must be >= 2");
    if (players.empty()) throw std::invalid_argument("GameBuilder: need at least one player");
    if (objective_dims.size() != players.size()) {
      throw std::invalid_argument("GameBuilder: one objective block per player");
    }
    g_.horizon_ = horizon;
    g_.players_ = std::move(players);
    g_.primal_offsets_.push_back(0);
    int init = 0;
    for (const auto& p : g_.players_) {
      if (p.state_dim <= 0 || p.control_dim < 0) {
        throw std::invalid_argument("GameBuilder: invalid player dimensions");
      }
      g_.primal_offsets_.push_back(g_.primal_offsets_.back() +
                                   horizon * (p.state_dim + p.control_dim));
      init += p.state_dim;
    }
    g_.params_.initial_dim = init;
    g_.params_.objective_dims = std::move(objective_dims);
    g_.params_.extra_dim = extra_dim;
    g_.costs_.resize(g_.players_.size());
    has_dynamics_.assign(g_.players_.size(), false);
  }

  const TrajectoryGame& game() const { return g_; }
  int horizon() const { return g_.horizon_; }

  VarRef state(int i, int t, int k) const { return VarRef::primal(g_.state_index(i, t, k)); }
  VarRef control(int i, int t, int k) const { return VarRef::primal(g_.control_index(i, t, k)); }
  VarRef initial_state(int i, int k) const {
    return VarRef::param(g_.state_offset_in_joint(i) + k);
  }
  VarRef objective(int i, int k) const {
    if (k >= g_.params_.objective_dims.at(static_cast<size_t>(i))) {
      throw std::out_of_range("GameBuilder::objective");
    }
    return VarRef::param(g_.params_.objective_offset(i) + k);
  }
  VarRef extra(int k) const {
    if (k >= g_.params_.extra_dim) throw std::out_of_range("GameBuilder::extra");
    return VarRef::param(g_.params_.extra_offset() + k);
  }

  /// `dyn(std::span<const S> x, std::span<const S> u, int k) -> S` returns
  /// component k of the next state.
  template <class Dyn>
  void set_dynamics(int i, Dyn dyn, bool linear) {
    const auto& p = g_.player(i);
    const int n = p.state_dim;
    const int m = p.control_dim;
    for (int k = 0; k < n; ++k) {
      add_row(RowKind::Equality, i, "initial",
              make_term({state(i, 0, k), initial_state(i, k)},
                        [](const auto& v) { return v[0] - v[1]; }, true));
    }
    for (int t = 0; t + 1 < g_.horizon_; ++t) {
      for (int k = 0; k < n; ++k) {
        std::vector<VarRef> vars{state(i, t + 1, k)};
        for (int a = 0; a < n; ++a) vars.push_back(state(i, t, a));
        for (int a = 0; a < m; ++a) vars.push_back(control(i, t, a));
        add_row(RowKind::Equality, i, "dynamics",
                make_term(std::move(vars),
                          [dyn, n, m, k](const auto& v) {
                            return v[0] - dyn(v.subspan(1, static_cast<size_t>(n)),
                                              v.subspan(1 + static_cast<size_t>(n),
                                                        static_cast<size_t>(m)),
                                              k);
                          },
                          linear));
      }
    }
    has_dynamics_[static_cast<size_t>(i)] = true;
  }

  template <class Fn>
  void add_cost(int i, std::vector<VarRef> vars, Fn fn, bool linear = false) {
    g_.costs_.at(static_cast<size_t>(i)).push_back(make_term(std::move(vars), std::move(fn), linear));
  }

  /// g(vars) >= 0 owned by player i; may only touch player i's primal entries.
  template <class Fn>
  void add_private_inequality(int i, std::vector<VarRef> vars, Fn fn, std::string tag = "private",
                              bool linear = false) {
    for (const auto& v : vars) {
      if (v.is_primal() && g_.owner_of_primal(v.index) != i) {
        throw std::invalid_argument("private constraint references another player's variables");
      }
    }
    add_row(RowKind::Private, i, std::move(tag), make_term(std::move(vars), std::move(fn), linear));
  }

  /// g(vars) >= 0 shared by all players with a single multiplier.
  template <class Fn>
  void add_shared_inequality(std::vector<VarRef> vars, Fn fn, std::string tag = "shared",
                             bool linear = false) {
    add_row(RowKind::Shared, -1, std::move(tag), make_term(std::move(vars), std::move(fn), linear));
  }

  TrajectoryGame build() const {
    for (size_t i = 0; i < has_dynamics_.size(); ++i) {
      if (!has_dynamics_[i]) throw std::logic_error("GameBuilder: player without dynamics");
    }
    return g_;
  }

 private:
  void add_row(RowKind kind, int player, std::string tag, TermPtr term) {
    g_.rows_.push_back({std::move(term), kind, player, std::move(tag)});
  }

  TrajectoryGame g_;
  std::vector<bool> has_dynamics_;
};

struct IndexRange {
  int begin = 0;
  int size = 0;
  int end() const { return begin + size; }
};

/// Index bookkeeping for the stacked primal-dual vector.
struct PrimalDualLayout {
  int horizon = 0;
  std::vector<PlayerSpec> players;
  std::vector<IndexRange> states;    // X^i
  std::vector<IndexRange> controls;  // U^i
  std::vector<IndexRange> equality_multipliers;
  std::vector<IndexRange> private_multipliers;
  IndexRange shared_multipliers;
  int dimension = 0;
  int primal_dimension = 0;
  // row_of_constraint[k] is the z index of the multiplier for game.rows()[k].
  std::vector<int> row_of_constraint;

  IndexRange primal(int i) const {
    return {states[static_cast<size_t>(i)].begin,
            states[static_cast<size_t>(i)].size + controls[static_cast<size_t>(i)].size};
  }
};

inline PrimalDualLayout make_layout(const TrajectoryGame& game) {
  PrimalDualLayout L;
  const int N = game.num_players();
  const int T = game.horizon();
  L.horizon = T;
  for (int i = 0; i < N; ++i) {
    L.players.push_back(game.player(i));
    const int off = game.primal_offset(i);
    L.states.push_back({off, T * game.player(i).state_dim});
    L.controls.push_back({off + T * game.player(i).state_dim, T * game.player(i).control_dim});
  }
  L.primal_dimension = game.total_primal();
  int next = L.primal_dimension;
  L.row_of_constraint.assign(game.rows().size(), -1);
  auto assign = [&](RowKind kind, int player) {
    IndexRange r{next, 0};
    for (size_t k = 0; k < game.rows().size(); ++k) {
      const auto& row = game.rows()[k];
      if (row.kind == kind && row.player == player) {
        L.row_of_constraint[k] = next++;
        ++r.size;
      }
    }
    return r;
  };
  for (int i = 0; i < N; ++i) L.equality_multipliers.push_back(assign(RowKind::Equality, i));
  for (int i = 0; i < N; ++i) L.private_multipliers.push_back(assign(RowKind::Private, i));
  L.shared_multipliers = assign(RowKind::Shared, -1);
  L.dimension = next;
  return L;
}

namespace detail {

inline void gather_local(const ScalarTerm& term, const Vector& z, const Vector& theta,
                         std::vector<double>& local) {
  const auto& vars = term.vars();
  local.resize(vars.size());
  for (size_t a = 0; a < vars.size(); ++a) {
    local[a] = vars[a].is_primal() ? z[vars[a].index] : theta[vars[a].index];
  }
}

/// Accumulates the contribution of one scalar term into F / Jz / Jtheta.
/// `owned(primal_index)` selects the stationarity rows that receive the
/// term's gradient; `weight` multiplies the gradient (1 for costs, +/-lambda
/// for constraint rows). When `multiplier_row >= 0`, the term is a constraint
/// row: F[multiplier_row] receives its value and the stationarity rows
/// receive the column d(grad)/d(multiplier) = sign * grad.
template <class Owned>
void scatter_term(const ScalarTerm& term, const LocalDerivatives& ld, Owned owned, double weight,
                  int multiplier_row, double sign, unsigned request, Vector& F,
                  std::vector<Triplet>& jz, Matrix& jt) {
  const auto& vars = term.vars();
  const bool want_jz = request & kJacZ;
  const bool want_jt = request & kJacTheta;
  const bool has_h = ld.hessian.size() > 0;
  if (multiplier_row >= 0) {
    F[multiplier_row] = ld.value;
    for (size_t b = 0; b < vars.size(); ++b) {
      if (vars[b].is_primal()) {
        if (want_jz) jz.emplace_back(multiplier_row, vars[b].index, ld.gradient[static_cast<Eigen::Index>(b)]);
      } else if (want_jt) {
        jt(multiplier_row, vars[b].index) += ld.gradient[static_cast<Eigen::Index>(b)];
      }
    }
  }
  for (size_t a = 0; a < vars.size(); ++a) {
    if (!vars[a].is_primal() || !owned(vars[a].index)) continue;
    const int row = vars[a].index;
    const auto ai = static_cast<Eigen::Index>(a);
    F[row] += weight * ld.gradient[ai];
    if (multiplier_row >= 0 && want_jz) jz.emplace_back(row, multiplier_row, sign * ld.gradient[ai]);
    if (!has_h || weight == 0.0) continue;
    for (size_t b = 0; b < vars.size(); ++b) {
      const double h = weight * ld.hessian(ai, static_cast<Eigen::Index>(b));
      if (vars[b].is_primal()) {
        if (want_jz) jz.emplace_back(row, vars[b].index, h);
      } else if (want_jt) {
        jt(row, vars[b].index) += h;
      }
    }
  }
}

inline double row_sign(RowKind kind) { return kind == RowKind::Equality ? 1.0 : -1.0; }

}  // namespace detail

/// Stacked joint KKT conditions: stationarity rows are free, equality rows
/// are free, inequality rows have multipliers in [0, inf).
inline std::pair<MCPProblem, PrimalDualLayout> build_mcp(const TrajectoryGame& game) {
  PrimalDualLayout layout = make_layout(game);
  MCPProblem p;
  p.dimension = layout.dimension;
  p.parameter_dimension = game.parameters().size();
  Vector lo = Vector::Constant(layout.dimension, -kInf);
  Vector up = Vector::Constant(layout.dimension, kInf);
  for (size_t k = 0; k < game.rows().size(); ++k) {
    if (game.rows()[k].kind != RowKind::Equality) lo[layout.row_of_constraint[k]] = 0.0;
  }
  p.bounds = BoxBounds(lo, up);

  auto shared_game = std::make_shared<const TrajectoryGame>(game);
  p.evaluate = [g = shared_game, layout](const Vector& z, const Vector& theta, unsigned request,
                                         MCPEvaluation& out) {
    const int d = layout.dimension;
    out.value.setZero(d);
    std::vector<Triplet> jz;
    Matrix jt;
    if (request & kJacTheta) jt.setZero(d, theta.size());
    const bool need_h = (request & (kJacZ | kJacTheta)) != 0;
    std::vector<double> local;
    LocalDerivatives ld;
    for (int i = 0; i < g->num_players(); ++i) {
      const IndexRange own = layout.primal(i);
      auto owned = [own](int idx) { return idx >= own.begin && idx < own.end(); };
      for (const auto& term : g->costs(i)) {
        detail::gather_local(*term, z, theta, local);
        term->derivatives(local, need_h, ld);
        detail::scatter_term(*term, ld, owned, 1.0, -1, 0.0, request, out.value, jz, jt);
      }
    }
    for (size_t k = 0; k < g->rows().size(); ++k) {
      const auto& row = g->rows()[k];
      const int mrow = layout.row_of_constraint[k];
      const double sign = detail::row_sign(row.kind);
      detail::gather_local(*row.term, z, theta, local);
      row.term->derivatives(local, need_h, ld);
      const double w = sign * z[mrow];
      if (row.kind == RowKind::Shared) {
        auto owned = [](int) { return true; };
        detail::scatter_term(*row.term, ld, owned, w, mrow, sign, request, out.value, jz, jt);
      } else {
        const IndexRange own = layout.primal(row.player);
        auto owned = [own](int idx) { return idx >= own.begin && idx < own.end(); };
        detail::scatter_term(*row.term, ld, owned, w, mrow, sign, request, out.value, jz, jt);
      }
    }
    if (request & kJacZ) {
      out.jac_z.resize(d, d);
      out.jac_z.setFromTriplets(jz.begin(), jz.end());
    }
    if (request & kJacTheta) out.jac_theta = std::move(jt);
  };
  return {std::move(p), std::move(layout)};
}

/// L^i = J^i + mu^i' h^i - s_lambda' s_g - p_lambda^i' p_g^i.
inline double lagrangian_value(const TrajectoryGame& game, const PrimalDualLayout& layout,
                               const Vector& z, const Vector& theta, int player) {
  std::vector<double> local;
  double L = 0.0;
  for (const auto& term : game.costs(player)) {
    detail::gather_local(*term, z, theta, local);
    L += term->value(local);
  }
  for (size_t k = 0; k < game.rows().size(); ++k) {
    const auto& row = game.rows()[k];
    if (row.kind != RowKind::Shared && row.player != player) continue;
    detail::gather_local(*row.term, z, theta, local);
    L += detail::row_sign(row.kind) * z[layout.row_of_constraint[k]] * row.term->value(local);
  }
  return L;
}

/// Gradient of L^i with respect to player i's own (X^i, U^i).
inline Vector lagrangian_gradient(const TrajectoryGame& game, const PrimalDualLayout& layout,
                                  const Vector& z, const Vector& theta, int player) {
  if (z.size() != layout.dimension || theta.size() != game.parameters().size()) {
    throw std::invalid_argument("lagrangian_gradient: dimension mismatch");
  }
  const IndexRange own = layout.primal(player);
  auto owned = [own](int idx) { return idx >= own.begin && idx < own.end(); };
  Vector F = Vector::Zero(layout.dimension);
  std::vector<Triplet> unused;
  Matrix unused_jt;
  std::vector<double> local;
  LocalDerivatives ld;
  for (const auto& term : game.costs(player)) {
    detail::gather_local(*term, z, theta, local);
    term->derivatives(local, false, ld);
    detail::scatter_term(*term, ld, owned, 1.0, -1, 0.0, kValue, F, unused, unused_jt);
  }
  for (size_t k = 0; k < game.rows().size(); ++k) {
    const auto& row = game.rows()[k];
    if (row.kind != RowKind::Shared && row.player != player) continue;
    detail::gather_local(*row.term, z, theta, local);
    row.term->derivatives(local, false, ld);
    const double w = detail::row_sign(row.kind) * z[layout.row_of_constraint[k]];
    detail::scatter_term(*row.term, ld, owned, w, -1, 0.0, kValue, F, unused, unused_jt);
  }
  return F.segment(own.begin, own.size);
}

struct JointTrajectory {
  Matrix states;    // T x sum(n^i)
  Matrix controls;  // T x sum(m^i)
};

inline JointTrajectory extract_trajectories(const PrimalDualLayout& layout, const Vector& z) {
  if (z.size() != layout.dimension) throw std::invalid_argument("extract_trajectories: size");
  int n = 0, m = 0;
  for (const auto& p : layout.players) {
    n += p.state_dim;
    m += p.control_dim;
  }
  JointTrajectory tr{Matrix(layout.horizon, n), Matrix(layout.horizon, m)};
  int so = 0, co = 0;
  for (size_t i = 0; i < layout.players.size(); ++i) {
    const auto& p = layout.players[i];
    for (int t = 0; t < layout.horizon; ++t) {
      for (int k = 0; k < p.state_dim; ++k) {
        tr.states(t, so + k) = z[layout.states[i].begin + t * p.state_dim + k];
      }
      for (int k = 0; k < p.control_dim; ++k) {
        tr.controls(t, co + k) = z[layout.controls[i].begin + t * p.control_dim + k];
      }
    }
    so += p.state_dim;
    co += p.control_dim;
  }
  return tr;
}

/// Inverse of extract_trajectories on the primal block; multipliers are left
/// untouched.
inline void embed_trajectories(const PrimalDualLayout& layout, const JointTrajectory& tr,
                               Vector& z) {
  int so = 0, co = 0;
  for (size_t i = 0; i < layout.players.size(); ++i) {
    const auto& p = layout.players[i];
    for (int t = 0; t < layout.horizon; ++t) {
      for (int k = 0; k < p.state_dim; ++k) {
        z[layout.states[i].begin + t * p.state_dim + k] = tr.states(t, so + k);
      }
      for (int k = 0; k < p.control_dim; ++k) {
        z[layout.controls[i].begin + t * p.control_dim + k] = tr.controls(t, co + k);
      }
    }
    so += p.state_dim;
    co += p.control_dim;
  }
}

/// Shifts every player's state and control sequence one step forward in time
/// (last knot repeated). Used to warm start the next receding-horizon solve.
inline Vector shift_primal(const PrimalDualLayout& layout, const Vector& z) {
  JointTrajectory tr = extract_trajectories(layout, z);
  const int T = layout.horizon;
  JointTrajectory shifted = tr;
  shifted.states.topRows(T - 1) = tr.states.bottomRows(T - 1);
  shifted.controls.topRows(T - 1) = tr.controls.bottomRows(T - 1);
  Vector out = z;
  embed_trajectories(layout, shifted, out);
  return out;
}

enum class SecondOrderDiagnostic { Sufficient, Indeterminate };

/// Projects each player's Lagrangian Hessian onto the nullspace of its active
/// constraint Jacobians (equalities and inequalities with positive
/// multipliers) and checks positive definiteness there.
inline SecondOrderDiagnostic check_second_order(const MCPProblem& problem,
                                                const PrimalDualLayout& layout,
                                                const Vector& z_star, const Vector& theta,
                                                double multiplier_tol = 1e-7,
                                                double eig_tol = 1e-9) {
  MCPEvaluation e = problem.eval(z_star, theta, kValue | kJacZ);
  const Matrix J(e.jac_z);
  for (size_t i = 0; i < layout.players.size(); ++i) {
    const IndexRange own = layout.primal(static_cast<int>(i));
    const Matrix H = J.block(own.begin, own.begin, own.size, own.size);
    std::vector<int> active;
    for (int r = layout.equality_multipliers[i].begin; r < layout.equality_multipliers[i].end(); ++r) {
      active.push_back(r);
    }
    auto add_ineq = [&](IndexRange range) {
      for (int r = range.begin; r < range.end(); ++r) {
        if (z_star[r] > multiplier_tol) active.push_back(r);
      }
    };
    add_ineq(layout.private_multipliers[i]);
    add_ineq(layout.shared_multipliers);
    Matrix A(static_cast<Eigen::Index>(active.size()), own.size);
    for (size_t r = 0; r < active.size(); ++r) {
      A.row(static_cast<Eigen::Index>(r)) = J.block(active[r], own.begin, 1, own.size);
    }
    Matrix null_basis;
    if (A.rows() == 0) {
      null_basis = Matrix::Identity(own.size, own.size);
    } else {
      Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullV);
      const double cutoff = std::max(1.0, svd.singularValues().size() > 0
                                              ? svd.singularValues()[0]
                                              : 1.0) *
                            1e-10;
      int rank = 0;
      for (Eigen::Index s = 0; s < svd.singularValues().size(); ++s) {
        if (svd.singularValues()[s] > cutoff) ++rank;
      }
      null_basis = svd.matrixV().rightCols(own.size - rank);
    }
    if (null_basis.cols() == 0) continue;
    const Matrix reduced = null_basis.transpose() * (0.5 * (H + H.transpose())) * null_basis;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(reduced, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() <= eig_tol) return SecondOrderDiagnostic::Indeterminate;
  }
  return SecondOrderDiagnostic::Sufficient;
}

/// Convenience bundle: a game compiled once and solved many times.
struct CompiledGame {
  TrajectoryGame game;
  MCPProblem problem;
  PrimalDualLayout layout;

  explicit CompiledGame(TrajectoryGame g) : game(std::move(g)) {
    auto [p, l] = build_mcp(game);
    problem = std::move(p);
    layout = std::move(l);
  }
};

}  // namespace mpgp
