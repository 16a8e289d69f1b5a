#pragma once

// Box-constrained mixed complementarity problems and a semismooth Newton
// solver on the Fischer-Burmeister reformulation.
//
// A solution z* satisfies, for every component j, one of
//   z_j = lower_j,            F_j(z) >= 0
//   lower_j < z_j < upper_j,  F_j(z) == 0
//   z_j = upper_j,            F_j(z) <= 0

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/KLUSupport>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpgp/calculus.hpp"

namespace mpgp {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using SparseLUSolver = Eigen::KLU<SparseMatrix>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct BoxBounds {
  Vector lower;
  Vector upper;

  BoxBounds() = default;
  BoxBounds(Vector lo, Vector up) : lower(std::move(lo)), upper(std::move(up)) { validate(); }

  static BoxBounds free(int d) {
    return {Vector::Constant(d, -kInf), Vector::Constant(d, kInf)};
  }

  int size() const { return static_cast<int>(lower.size()); }

  void validate() const {
    if (lower.size() != upper.size()) throw std::invalid_argument("BoxBounds: length mismatch");
    for (Eigen::Index j = 0; j < lower.size(); ++j) {
      if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] > upper[j]) {
        throw std::invalid_argument("BoxBounds: lower > upper at index " + std::to_string(j));
      }
    }
  }

  Vector clamp(const Vector& z) const { return z.cwiseMax(lower).cwiseMin(upper); }
};

enum EvalRequest : unsigned { kValue = 1u, kJacZ = 2u, kJacTheta = 4u };

struct MCPEvaluation {
  Vector value;
  SparseMatrix jac_z;
  Matrix jac_theta;
};

/// Parametric family F(z; theta) with box bounds. Immutable once built; the
/// evaluator must be reentrant.
struct MCPProblem {
  int dimension = 0;
  int parameter_dimension = 0;
  BoxBounds bounds;
  std::function<void(const Vector& z, const Vector& theta, unsigned request, MCPEvaluation& out)>
      evaluate;

  MCPEvaluation eval(const Vector& z, const Vector& theta, unsigned request) const {
    if (z.size() != dimension || theta.size() != parameter_dimension) {
      throw std::invalid_argument("MCPProblem: dimension mismatch (z " +
                                  std::to_string(z.size()) + "/" + std::to_string(dimension) +
                                  ", theta " + std::to_string(theta.size()) + "/" +
                                  std::to_string(parameter_dimension) + ")");
    }
    MCPEvaluation e;
    evaluate(z, theta, request, e);
    return e;
  }
};

/// Wraps a small dense DifferentiableMap as an MCP.
inline MCPProblem make_dense_mcp(DifferentiableMap map, BoxBounds bounds) {
  if (map.output_dim() != map.z_dim() || bounds.size() != map.z_dim()) {
    throw std::invalid_argument("make_dense_mcp: F must be square and match bounds");
  }
  MCPProblem p;
  p.dimension = map.z_dim();
  p.parameter_dimension = map.theta_dim();
  p.bounds = std::move(bounds);
  p.evaluate = [map = std::move(map)](const Vector& z, const Vector& theta, unsigned request,
                                      MCPEvaluation& out) {
    if (request == kValue) {
      out.value = map.value(z, theta);
      return;
    }
    Matrix jz, jt;
    map.jacobians(z, theta, out.value, jz, jt);
    if (request & kJacZ) out.jac_z = jz.sparseView(0.0, 0.0);
    if (request & kJacTheta) out.jac_theta = std::move(jt);
  };
  return p;
}

enum class SolveStatus { Solved, MaxIterations, LineSearchFailure, NumericalBreakdown };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Solved: return "solved";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::LineSearchFailure: return "line_search_failure";
    case SolveStatus::NumericalBreakdown: return "numerical_breakdown";
  }
  return "unknown";
}

struct MCPSolution {
  Vector z_star;
  SolveStatus status = SolveStatus::MaxIterations;
  double merit_residual = kInf;  // infinity norm of the FB residual
  int iterations = 0;

  bool solved() const { return status == SolveStatus::Solved; }
};

struct LineSearchConfig {
  double sufficient_decrease = 1e-4;
  double backtracking_ratio = 0.5;
  double min_step = 1e-10;
};

struct SolverConfig {
  double tolerance = 1e-8;
  int max_iterations = 100;
  LineSearchConfig line_search;
  double regularization = 1e-10;

  void validate() const {
    if (!(tolerance > 0) || max_iterations <= 0 || !(regularization > 0) ||
        !(line_search.sufficient_decrease > 0) || !(line_search.min_step > 0) ||
        !(line_search.backtracking_ratio > 0 && line_search.backtracking_ratio < 1)) {
      throw std::invalid_argument("SolverConfig: invalid parameters");
    }
  }
};

inline double fischer_burmeister(double a, double b) { return a + b - std::hypot(a, b); }

namespace detail {

struct FBPartials {
  double da;
  double db;
};

inline FBPartials fb_partials(double a, double b) {
  const double r = std::hypot(a, b);
  if (r < 1e-14) {
    const double c = 1.0 - 1.0 / std::sqrt(2.0);
    return {c, c};
  }
  return {1.0 - a / r, 1.0 - b / r};
}

struct ResidualComponent {
  double phi;
  double dz;
  double dF;
};

inline ResidualComponent residual_component(double z, double f, double lo, double up) {
  const bool has_lo = std::isfinite(lo);
  const bool has_up = std::isfinite(up);
  if (!has_lo && !has_up) return {f, 0.0, 1.0};
  if (has_lo && !has_up) {
    auto p = fb_partials(z - lo, f);
    return {fischer_burmeister(z - lo, f), p.da, p.db};
  }
  if (!has_lo && has_up) {
    auto p = fb_partials(up - z, -f);
    return {-fischer_burmeister(up - z, -f), p.da, p.db};
  }
  // phi(z - lo, -phi(up - z, -F))
  const double inner = fischer_burmeister(up - z, -f);
  auto pi = fb_partials(up - z, -f);
  auto po = fb_partials(z - lo, -inner);
  return {fischer_burmeister(z - lo, -inner), po.da + po.db * pi.da, po.db * pi.db};
}

}  // namespace detail

/// Componentwise reformulation whose roots are exactly the MCP solutions.
inline Vector mcp_residual(const MCPProblem& problem, const Vector& z, const Vector& theta) {
  MCPEvaluation e = problem.eval(z, theta, kValue);
  Vector r(problem.dimension);
  for (int j = 0; j < problem.dimension; ++j) {
    r[j] = detail::residual_component(z[j], e.value[j], problem.bounds.lower[j],
                                      problem.bounds.upper[j])
               .phi;
  }
  return r;
}

/// Which of the three complementarity cases holds for index j, if any, at
/// tolerance `tol`. Returns 0 (lower), 1 (interior root), 2 (upper), or -1.
inline int complementarity_case(double z, double f, double lo, double up, double tol) {
  if (std::isfinite(lo) && std::abs(z - lo) <= tol && f >= -tol) return 0;
  if (std::isfinite(up) && std::abs(z - up) <= tol && f <= tol) return 2;
  if (z >= lo - tol && z <= up + tol && std::abs(f) <= tol) return 1;
  return -1;
}

namespace detail {

inline SparseMatrix newton_matrix(const SparseMatrix& jac_z, const Vector& dz, const Vector& dF,
                                  double shift) {
  std::vector<Triplet> t;
  t.reserve(static_cast<size_t>(jac_z.nonZeros() + jac_z.rows()));
  for (int k = 0; k < jac_z.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(jac_z, k); it; ++it) {
      t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                     dF[it.row()] * it.value());
    }
  }
  for (Eigen::Index j = 0; j < dz.size(); ++j) {
    t.emplace_back(static_cast<int>(j), static_cast<int>(j), dz[j] + shift);
  }
  SparseMatrix h(jac_z.rows(), jac_z.cols());
  h.setFromTriplets(t.begin(), t.end());
  return h;
}

}  // namespace detail

/// Semismooth Newton with Armijo backtracking on 0.5*||Phi||^2. Never throws
/// for numerical trouble; the status says what happened.
inline MCPSolution solve_mcp(const MCPProblem& problem, const Vector& theta,
                             const Vector& initial_guess, const SolverConfig& config = {}) {
  config.validate();
  const int d = problem.dimension;
  if (initial_guess.size() != d) throw std::invalid_argument("solve_mcp: initial guess size");
  if (theta.size() != problem.parameter_dimension) {
    throw std::invalid_argument("solve_mcp: parameter size");
  }
  const Vector& lo = problem.bounds.lower;
  const Vector& up = problem.bounds.upper;

  MCPSolution best;
  best.z_star = problem.bounds.clamp(initial_guess);

  Vector z = best.z_star;
  Vector phi(d), dz(d), dF(d);
  MCPEvaluation eval;

  auto residual_at = [&](const Vector& x, const Vector& f, Vector& out) {
    for (int j = 0; j < d; ++j) out[j] = detail::residual_component(x[j], f[j], lo[j], up[j]).phi;
  };
  auto merit_of = [&](const Vector& x, Vector& scratch) -> double {
    MCPEvaluation e;
    problem.evaluate(x, theta, kValue, e);
    if (!e.value.allFinite()) return kInf;
    residual_at(x, e.value, scratch);
    return 0.5 * scratch.squaredNorm();
  };

  Vector trial(d), trial_phi(d);
  // The Newton matrix always has the pattern of J plus the diagonal, so the
  // fill-reducing ordering is computed once per solve.
  SparseLUSolver lu;
  bool analyzed = false;
  for (int iter = 0;; ++iter) {
    problem.evaluate(z, theta, kValue | kJacZ, eval);
    if (!eval.value.allFinite()) {
      best.status = SolveStatus::NumericalBreakdown;
      best.iterations = iter;
      return best;
    }
    for (int j = 0; j < d; ++j) {
      auto c = detail::residual_component(z[j], eval.value[j], lo[j], up[j]);
      phi[j] = c.phi;
      dz[j] = c.dz;
      dF[j] = c.dF;
    }
    const double inf_norm = d > 0 ? phi.lpNorm<Eigen::Infinity>() : 0.0;
    if (inf_norm < best.merit_residual) {
      best.merit_residual = inf_norm;
      best.z_star = z;
    }
    best.iterations = iter;
    if (inf_norm <= config.tolerance) {
      best.status = SolveStatus::Solved;
      best.z_star = problem.bounds.clamp(z);
      return best;
    }
    if (iter >= config.max_iterations) {
      best.status = SolveStatus::MaxIterations;
      return best;
    }

    const double merit = 0.5 * phi.squaredNorm();
    bool accepted = false;
    SparseMatrix h0 = detail::newton_matrix(eval.jac_z, dz, dF, 0.0);
    const Vector merit_grad = h0.transpose() * phi;

    auto line_search = [&](const Vector& dir, double slope) -> bool {
      if (!(slope < 0.0) || !dir.allFinite()) return false;
      for (double step = 1.0; step >= config.line_search.min_step;
           step *= config.line_search.backtracking_ratio) {
        trial = z + step * dir;
        const double m = merit_of(trial, trial_phi);
        if (m <= merit + config.line_search.sufficient_decrease * step * slope && m < merit) {
          z = trial;
          return true;
        }
      }
      return false;
    };

    // Plain Newton, then up to three regularized retries.
    for (int attempt = 0; attempt <= 3 && !accepted; ++attempt) {
      const double shift =
          attempt == 0 ? 0.0 : config.regularization * std::pow(1e4, attempt - 1);
      SparseMatrix h = attempt == 0 ? h0 : detail::newton_matrix(eval.jac_z, dz, dF, shift);
      if (!analyzed) {
        lu.analyzePattern(h);
        analyzed = true;
      }
      lu.factorize(h);
      if (lu.info() != Eigen::Success) continue;
      Vector dir = lu.solve(-phi);
      if (lu.info() != Eigen::Success || !dir.allFinite()) continue;
      accepted = line_search(dir, merit_grad.dot(dir));
    }
    if (!accepted) {
      Vector dir = -merit_grad;
      accepted = line_search(dir, merit_grad.dot(dir));
    }
    if (!accepted) {
      best.status = SolveStatus::LineSearchFailure;
      best.iterations = iter + 1;
      return best;
    }
  }
}

}  // namespace mpgp
