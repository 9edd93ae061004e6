#pragma once

#include <Eigen/Dense>

namespace epicon {

/// Clamped B-spline basis on [0, T] with uniformly spaced interior knots.
struct BasisSystem {
  int K = 0;       // number of basis functions
  int degree = 3;  // polynomial degree
  double T = 0.0;
  Eigen::VectorXd knots;  // K + degree + 1 entries, (degree+1)-fold clamped
};

/// Builds the clamped basis; requires K >= degree + 1.
BasisSystem build_basis(int K, int degree, double T);

/// Basis function values phi_k(t), Cox-de Boor recursion. t must be in [0,T].
Eigen::VectorXd eval_basis(const BasisSystem& basis, double t);

/// First derivatives phi'_k(t) via the degree-lowering formula.
Eigen::VectorXd eval_basis_derivative(const BasisSystem& basis, double t);

/// Running integrals Phi_k(t) = int_0^t phi_k, using the closed-form identity
/// that expresses each Phi_k as a sum of degree+1 B-splines on the once-more
/// clamped knot vector. Exact up to rounding, no quadrature.
Eigen::VectorXd eval_basis_integral(const BasisSystem& basis, double t);

/// Basis values, derivative values and running integrals on a grid.
struct DesignMatrices {
  Eigen::MatrixXd B;    // (M+1) x K values
  Eigen::MatrixXd Bp;   // (M+1) x K derivatives
  Eigen::MatrixXd Phi;  // (M+1) x K running integrals
  Eigen::VectorXd grid;
};

DesignMatrices design_matrices(const BasisSystem& basis,
                               const Eigen::VectorXd& grid);

/// H^1 Gram matrix G_{kl} = int phi_k phi_l + rho * int phi'_k phi'_l.
struct GramH1 {
  Eigen::MatrixXd G;
  double rho = 1.0;
  double lambda_min = 0.0;
};

/// Entries assembled by per-knot-interval Gauss-Legendre quadrature with
/// enough nodes to be exact for the piecewise-polynomial integrands.
/// Throws DegenerateBasis if the result is not positive definite.
GramH1 gram_h1(const BasisSystem& basis, double rho);

/// Least-squares coefficients of `values` sampled on `grid` (QR based).
/// Throws IllPosedFit if the design matrix is rank deficient.
Eigen::VectorXd fit_coefficients(const BasisSystem& basis,
                                 const Eigen::VectorXd& values,
                                 const Eigen::VectorXd& grid);

/// Cached QR factorization for repeated least-squares fits on a fixed grid.
class CurveFitter {
 public:
  CurveFitter(const BasisSystem& basis, const Eigen::VectorXd& grid);

  Eigen::VectorXd fit(const Eigen::VectorXd& values) const;

  const Eigen::VectorXd& grid() const { return grid_; }

 private:
  Eigen::VectorXd grid_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

/// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration.
void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

}  // namespace epicon
