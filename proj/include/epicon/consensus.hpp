#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "epicon/basis.hpp"
#include "epicon/epi_models.hpp"
#include "epicon/fspace.hpp"

namespace epicon {

struct Bounds {
  double lo = 0.0;
  double hi = 0.0;
  double clip(double v) const { return std::min(std::max(v, lo), hi); }
  double mid() const { return 0.5 * (lo + hi); }
};

/// Hyperparameters and tolerances for the consensus problem.
struct ProblemSpec {
  double q = 1.0;
  double rho = 1.0;
  int K = 30;
  int degree = 3;
  // Constraint grid is M+1 equally spaced points on [0, T]. M = 0 selects
  // M = K - 1, one collocation point per basis function: the dynamics rows
  // then pin E to I without over-restricting the curve shapes. Much denser
  // grids (several points per knot span) force the infectious curve down to
  // a single global cubic and visibly bias the recovered rates.
  int M = 0;
  Bounds sigma_bounds{1e-3, 2.0};
  Bounds gamma_bounds{1e-3, 2.0};
  Bounds beta_bounds{1e-3, 10.0};
  double delta_max = 120.0;
  double N = 1e6;
  double T = 720.0;
  double eps_q = 1e-3;     // q = 1 is handled as q = 1 + eps_q
  double eps_irls = 0.0;   // 0 -> scale-aware default
  double tol_outer = 1e-3;
  int max_outer = 50;

  void validate() const;
  double effective_q() const;
  int effective_M() const;
  Eigen::VectorXd constraint_grid() const;
};

/// Linearized constraint blocks at fixed (sigma, gamma):
///   A_eq c = b_eq        dynamics rows  [-sigma B | B' + gamma B]
///   A_in c <= b_in       rows ordered [E >= 0; I >= 0; population cap]
struct ConstraintSet {
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  int grid_size = 0;  // M + 1
};

ConstraintSet constraint_matrices(const DesignMatrices& design, double sigma,
                                  double gamma, double N);

/// Inequality-only constraints used by the initialization problem
/// (nonnegativity and N-cap, no dynamics, no integral term).
ConstraintSet init_constraints(const DesignMatrices& design, double N);

/// Inner solution at fixed (sigma, gamma): primal, multipliers, diagnostics.
/// `objective` is the smoothed power objective (1/J) sum_j (D_j^2 + eps)^(q/2)
/// whose duals the multipliers correspond to; eps = 0 when q = 2.
struct InnerSolution {
  CoefVector c;
  Eigen::VectorXd nu;         // dynamics multipliers, one per grid point
  Eigen::VectorXd lambda_E;   // E >= 0 multipliers
  Eigen::VectorXd lambda_I;   // I >= 0 multipliers
  Eigen::VectorXd lambda_pop; // population cap multipliers
  double objective = 0.0;
  double objective_raw = 0.0;  // (1/J) sum_j D_j^q, no smoothing
  double kkt_residual = 0.0;
  int irls_iterations = 0;
  int ipm_iterations = 0;
  bool converged = false;
};

/// Weighted QPs behind the inner problem, with the equality reduction and
/// factorizations cached so IRLS and profile sweeps stay cheap.
class InnerSolver {
 public:
  InnerSolver(const ConstraintSet& constraints, const BlockGram& gram);

  /// min sum_j a_j (c - c_j)^T GY (c - c_j) s.t. constraints, passed as the
  /// weighted mean c_w = sum a_j c_j / sum a_j and the weight sum.
  struct WeightedResult {
    CoefVector c;
    Eigen::VectorXd y;  // equality multipliers
    Eigen::VectorXd z;  // inequality multipliers
    int ipm_iterations = 0;
    bool converged = false;
  };
  WeightedResult solve_weighted(const CoefVector& c_w, double weight_sum) const;

  const ConstraintSet& constraints() const { return *cons_; }
  const BlockGram& gram() const { return *gram_; }
  int null_dim() const { return static_cast<int>(Z_.cols()); }

 private:
  const ConstraintSet* cons_;
  const BlockGram* gram_;
  Eigen::MatrixXd Z_;         // null basis of A_eq (2K x nz)
  Eigen::MatrixXd Gz_;        // row-scaled A_in * Z
  Eigen::VectorXd hz_;        // row-scaled b_in
  Eigen::VectorXd row_scale_;
  Eigen::MatrixXd ZtGY_;      // Z^T diag(G,G)  (nz x 2K)
  Eigen::MatrixXd Gred_;      // Z^T diag(G,G) Z (nz x nz)
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_at_;
  bool has_eq_ = false;
};

/// Solves min (1/J) sum_j D(c, c_j)^2 subject to the constraint set.
InnerSolution inner_solve_q2(const std::vector<CoefVector>& cjs,
                             const BlockGram& gram, const ConstraintSet& cons);

/// IRLS for the power objective; q = 1 is mapped to 1 + eps_q. eps_irls <= 0
/// selects the scale-aware default 1e-8 * median pairwise D^2.
InnerSolution inner_solve_irls(double q, const std::vector<CoefVector>& cjs,
                               const BlockGram& gram, const ConstraintSet& cons,
                               double eps_irls = 0.0, double eps_q = 1e-3,
                               const CoefVector* warm = nullptr);

/// Scale-aware IRLS regularizer: 1e-8 * median pairwise squared distance.
double default_eps_irls(const std::vector<CoefVector>& cjs, const BlockGram& gram);

/// Feasibility-implied upper bound on gamma; +inf when the integral of I is
/// nonpositive at every grid point.
double gamma_upper_bound(const CoefVector& c, const DesignMatrices& design,
                         double N);

/// Profile objective V(sigma, gamma) with envelope-theorem gradients computed
/// from the inner multipliers.
struct ProfilePoint {
  double value = 0.0;
  double d_sigma = 0.0;
  double d_gamma = 0.0;
  InnerSolution inner;
};

ProfilePoint profile_value_and_gradient(double sigma, double gamma,
                                        const std::vector<CoefVector>& cjs,
                                        const BlockGram& gram,
                                        const DesignMatrices& design,
                                        const ProblemSpec& spec,
                                        double eps_irls,
                                        const CoefVector* warm = nullptr);

struct ProfileResult {
  double sigma = 0.0;
  double gamma = 0.0;
  InnerSolution inner;
  int evaluations = 0;
  bool used_fallback = false;  // Nelder-Mead path taken
};

/// Projected quasi-Newton over the (sigma, gamma) box using envelope
/// gradients; falls back to Nelder-Mead when the gradients disagree with
/// finite differences (active-set kink).
ProfileResult optimize_profile(const std::vector<CoefVector>& cjs,
                               const BlockGram& gram,
                               const DesignMatrices& design,
                               const ProblemSpec& spec,
                               std::pair<double, double> init,
                               double eps_irls,
                               const CoefVector* warm = nullptr);

struct InitSolution {
  CoefVector c;
  double sigma = 0.0;
  double gamma = 0.0;
  bool ls_fallback = false;  // degenerate least squares -> box midpoint
};

/// Reduced problem (nonnegativity + cap only) and box-clipped least squares
/// for the rate initializer.
InitSolution init_solution(const std::vector<CoefVector>& cjs,
                           const BlockGram& gram, const DesignMatrices& design,
                           const ProblemSpec& spec, double eps_irls);

/// Projects raw per-curve shifts onto {sum = 0, |delta_j| <= delta_max} by
/// the clipped-sum root mu: delta_j = clip(raw_j - mu).
std::vector<double> center_shifts(const std::vector<double>& raw,
                                  double delta_max);

/// Peak-alignment initial shifts, clipped and centred to sum zero.
std::vector<double> init_shifts(const std::vector<SampledTrajectory>& trajs,
                                double delta_max);

/// Per-curve Brent searches followed by the clipped-sum centring step.
std::vector<double> update_shifts(const CoefVector& c_hat,
                                  const std::vector<SampledTrajectory>& trajs,
                                  const std::vector<CurveFitter>& fitters,
                                  const BlockGram& gram,
                                  const ProblemSpec& spec);

/// Convenience overload building per-curve fitters on the fly.
std::vector<double> update_shifts(const CoefVector& c_hat,
                                  const std::vector<SampledTrajectory>& trajs,
                                  const BasisSystem& basis,
                                  const BlockGram& gram,
                                  const ProblemSpec& spec);

struct FeasibilityReport {
  double min_E = 0.0;        // min over grid of B c^E
  double min_I = 0.0;
  double cap_slack = 0.0;    // min over grid of N - E - I - gamma * int I
  double eq_residual = 0.0;  // sup norm of B'c^I - sigma B c^E + gamma B c^I
  double shift_sum = 0.0;
};

struct ConsensusSolution {
  CoefVector c_hat;
  double sigma_hat = 0.0;
  double gamma_hat = 0.0;
  std::vector<double> delta_hat;
  std::vector<double> objective_trace;
  InnerSolution inner;  // final inner solution with multipliers
  FeasibilityReport feasibility;
  bool converged = false;
  int outer_iterations = 0;
  double q_effective = 0.0;
  double eps_irls_used = 0.0;
  double solve_seconds = 0.0;
};

/// Full alternating minimization: profile update of (c, sigma, gamma) then
/// shift registration, iterated until the maximum relative parameter change
/// drops below tol_outer.
ConsensusSolution solve(const std::vector<SampledTrajectory>& trajs,
                        const ProblemSpec& spec);

}  // namespace epicon
