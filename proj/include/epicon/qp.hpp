#pragma once

#include <Eigen/Dense>

namespace epicon {

/// Convex QP:  min 1/2 x^T P x + q^T x   s.t.  A x = b,  G x <= h.
/// P must be symmetric positive semidefinite. A and G may have zero rows.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
};

struct QpOptions {
  double tol = 1e-9;       // scaled residual + gap target
  int max_iter = 100;
  double rank_tol = 1e-9;  // relative rank threshold for the equality block
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // equality multipliers
  Eigen::VectorXd z;  // inequality multipliers, >= 0
  Eigen::VectorXd s;  // slacks h - G x
  double objective = 0.0;
  double kkt_residual = 0.0;  // scaled, on the original data
  int iterations = 0;
  bool converged = false;
};

/// Dense primal-dual interior-point solver (Mehrotra predictor-corrector).
///
/// Equality constraints are eliminated up front through a rank-revealing QR
/// of A^T; this tolerates rank-deficient equality blocks, which the grid
/// discretization of functional constraints produces by construction. The
/// equality multipliers are recovered afterwards from stationarity; when A
/// has dependent rows the recovered y is one valid choice among many.
QpSolution solve_qp(const QpProblem& prob, const QpOptions& opts = {});

/// Inequality-only building block: min 1/2 x^T P x + q^T x s.t. G x <= h.
/// Callers are expected to pre-scale rows of G and the objective.
struct IpmResult {
  Eigen::VectorXd x, s, z;
  int iterations = 0;
  bool converged = false;
};

IpmResult solve_qp_inequality(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                              const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                              const QpOptions& opts = {});

}  // namespace epicon
