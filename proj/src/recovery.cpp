#include "epicon/recovery.hpp"

#include <cmath>

#include "epicon/errors.hpp"

namespace epicon {

FullTrajectory recover_full(const ConsensusSolution& sol, const BasisSystem& basis,
                            const DesignMatrices& design, double N) {
  if (sol.c_hat.K() != basis.K) {
    throw ContractViolation("recover_full: coefficient length != basis size");
  }
  FullTrajectory full;
  full.grid = design.grid;
  full.N = N;
  full.sigma_hat = sol.sigma_hat;
  full.gamma_hat = sol.gamma_hat;
  full.E = design.B * sol.c_hat.cE;
  full.I = design.B * sol.c_hat.cI;
  full.int_E = design.Phi * sol.c_hat.cE;
  full.int_I = design.Phi * sol.c_hat.cI;
  full.R = sol.gamma_hat * full.int_I;
  full.S = N - full.E.array() - full.I.array() - full.R.array();

  // Feasibility leaves at most round-off-negative values; clamp those while
  // preserving S + E + I + R = N through S.
  auto clamp_col = [](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v(i) < 0.0) v(i) = 0.0;
    }
  };
  clamp_col(full.E);
  clamp_col(full.I);
  clamp_col(full.R);
  full.S = N - full.E.array() - full.I.array() - full.R.array();
  return full;
}

double estimate_beta(const FullTrajectory& full, double sigma_hat, Bounds bounds) {
  const Eigen::Index M1 = full.grid.size();
  Eigen::VectorXd a(M1);  // cumulative trapezoid of S*I/N
  a(0) = 0.0;
  for (Eigen::Index m = 1; m < M1; ++m) {
    const double h = full.grid(m) - full.grid(m - 1);
    const double f0 = full.S(m - 1) * full.I(m - 1) / full.N;
    const double f1 = full.S(m) * full.I(m) / full.N;
    a(m) = a(m - 1) + 0.5 * h * (f0 + f1);
  }

  double num = 0.0, den = 0.0;
  for (Eigen::Index m = 0; m < M1; ++m) {
    const double b = full.E(m) - full.E(0) + sigma_hat * full.int_E(m);
    num += a(m) * b;
    den += a(m) * a(m);
  }
  if (den == 0.0) {
    throw DegenerateEstimate("estimate_beta: no transmission signal (S*I == 0)");
  }
  return bounds.clip(num / den);
}

}  // namespace epicon
