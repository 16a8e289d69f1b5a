#pragma once

// Derivatives of MCP solutions with respect to the problem parameters via
// the implicit function theorem applied to the rows that are roots of F.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mpgp/mcp.hpp"

namespace mpgp {

struct ActiveSetPartition {
  std::vector<int> active;    // strictly at a bound, F bounded away from zero
  std::vector<int> inactive;  // strictly interior roots of F (after the weak merge)
  std::vector<int> weak;      // at a bound with F == 0 (before the merge)
  double epsilon = 1e-7;

  // The partition as classified, before weak indices were merged into
  // `inactive`.
  std::vector<int> inactive_before_merge;
};

inline ActiveSetPartition partition_indices(const MCPProblem& problem, const Vector& z_star,
                                            const Vector& theta, double epsilon = 1e-7) {
  MCPEvaluation e = problem.eval(z_star, theta, kValue);
  ActiveSetPartition part;
  part.epsilon = epsilon;
  for (int j = 0; j < problem.dimension; ++j) {
    const double gap = std::min(z_star[j] - problem.bounds.lower[j],
                                problem.bounds.upper[j] - z_star[j]);
    const bool at_bound = gap <= epsilon;
    const bool f_zero = std::abs(e.value[j]) <= epsilon;
    if (at_bound && f_zero) {
      part.weak.push_back(j);
    } else if (at_bound) {
      part.active.push_back(j);
    } else {
      part.inactive_before_merge.push_back(j);
    }
  }
  // Weakly active indices are treated as free.
  part.inactive = part.inactive_before_merge;
  part.inactive.insert(part.inactive.end(), part.weak.begin(), part.weak.end());
  std::sort(part.inactive.begin(), part.inactive.end());
  return part;
}

struct SolutionSensitivity {
  Matrix jacobian;  // d x p
  ActiveSetPartition partition;
  double least_squares_residual = 0.0;
  bool rank_deficient = false;
};

namespace detail {

inline SparseMatrix select_block(const SparseMatrix& m, const std::vector<int>& rows,
                                 const std::vector<int>& cols) {
  std::vector<int> row_map(static_cast<size_t>(m.rows()), -1);
  std::vector<int> col_map(static_cast<size_t>(m.cols()), -1);
  for (size_t r = 0; r < rows.size(); ++r) row_map[static_cast<size_t>(rows[r])] = static_cast<int>(r);
  for (size_t c = 0; c < cols.size(); ++c) col_map[static_cast<size_t>(cols[c])] = static_cast<int>(c);
  std::vector<Triplet> t;
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      const int r = row_map[static_cast<size_t>(it.row())];
      const int c = col_map[static_cast<size_t>(it.col())];
      if (r >= 0 && c >= 0) t.emplace_back(r, c, it.value());
    }
  }
  SparseMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

}  // namespace detail

/// Rows in `partition.active` are zero; the remaining rows solve
///   dF_I/dz_I * dz_I/dtheta = -dF_I/dtheta
/// in the least-squares sense (minimum norm when rank deficient).
inline SolutionSensitivity differentiate_solution(const MCPProblem& problem, const Vector& z_star,
                                                  const Vector& theta,
                                                  const ActiveSetPartition& partition) {
  const int d = problem.dimension;
  const int p = problem.parameter_dimension;
  MCPEvaluation e = problem.eval(z_star, theta, kValue | kJacZ | kJacTheta);
  if (!e.jac_theta.allFinite()) throw NumericalBreakdown("differentiate_solution: non-finite dF/dtheta");
  for (int k = 0; k < e.jac_z.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(e.jac_z, k); it; ++it) {
      if (!std::isfinite(it.value())) {
        throw NumericalBreakdown("differentiate_solution: non-finite dF/dz");
      }
    }
  }

  SolutionSensitivity s;
  s.partition = partition;
  s.jacobian.setZero(d, p);
  const auto& I = partition.inactive;
  const auto n = static_cast<Eigen::Index>(I.size());
  if (n == 0 || p == 0) return s;

  const SparseMatrix A = detail::select_block(e.jac_z, I, I);
  Matrix rhs(n, p);
  for (Eigen::Index r = 0; r < n; ++r) rhs.row(r) = -e.jac_theta.row(I[static_cast<size_t>(r)]);

  Matrix x;
  bool ok = false;
  SparseLUSolver lu;
  lu.compute(A);
  if (lu.info() == Eigen::Success) {
    x = lu.solve(rhs);
    if (lu.info() == Eigen::Success && x.allFinite()) {
      const double scale = std::max(1.0, rhs.norm());
      ok = (A * x - rhs).norm() <= 1e-8 * scale;
    }
  }
  if (!ok) {
    // Dense minimum-norm least squares with a numerical-rank cutoff.
    const Matrix dense(A);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
    cod.setThreshold(static_cast<double>(n) * std::numeric_limits<double>::epsilon());
    cod.compute(dense);
    x = cod.solve(rhs);
    s.rank_deficient = cod.rank() < n;
  }
  s.least_squares_residual = (A * x - rhs).norm();
  for (Eigen::Index r = 0; r < n; ++r) s.jacobian.row(I[static_cast<size_t>(r)]) = x.row(r);
  return s;
}

}  // namespace mpgp
