#pragma once

#include <Eigen/Core>

#include "epicon/basis.hpp"
#include "epicon/consensus.hpp"

namespace epicon {

/// Full compartmental state reconstructed from a consensus solution:
/// R = gamma * int I, S = N - E - I - R. Carries the provenance needed by the
/// transmission-rate estimate (running integrals and the fitted rates).
struct FullTrajectory {
  Eigen::VectorXd grid;
  Eigen::VectorXd S, E, I, R;
  Eigen::VectorXd int_E;  // running integral of E (analytic, via Phi)
  Eigen::VectorXd int_I;
  double N = 0.0;
  double sigma_hat = 0.0;
  double gamma_hat = 0.0;
};

FullTrajectory recover_full(const ConsensusSolution& sol, const BasisSystem& basis,
                            const DesignMatrices& design, double N);

/// Closed-form least squares for beta from the integral form of the exposed
/// equation; the nonlinear integrand S*I/N is accumulated by the composite
/// trapezoid rule on the grid. Result clipped to `bounds`.
double estimate_beta(const FullTrajectory& full, double sigma_hat, Bounds bounds);

}  // namespace epicon
