#pragma once

#include <Eigen/Dense>

#include "epicon/basis.hpp"
#include "epicon/epi_models.hpp"

namespace epicon {

/// Coefficient representation c = (c^(E), c^(I)) of a trajectory pair.
struct CoefVector {
  Eigen::VectorXd cE;
  Eigen::VectorXd cI;

  int K() const { return static_cast<int>(cE.size()); }
  Eigen::VectorXd stacked() const;
  static CoefVector from_stacked(const Eigen::VectorXd& c);
};

/// Block-diagonal metric diag(G, G) on coefficient pairs, with an upper
/// triangular factor U such that G = U^T U per block.
struct BlockGram {
  Eigen::MatrixXd G;     // K x K H1 Gram block
  Eigen::MatrixXd sqrt;  // upper factor U, G = U^T U
  double lambda_min = 0.0;

  int K() const { return static_cast<int>(G.rows()); }
};

BlockGram block_gram(const GramH1& gram);

/// d(c1, c2) = sqrt((c1-c2)^T diag(G,G) (c1-c2)).
double distance(const CoefVector& c1, const CoefVector& c2, const BlockGram& gram);
double distance_squared(const CoefVector& c1, const CoefVector& c2,
                        const BlockGram& gram);

/// Evaluates sampled data at arbitrary query points with piecewise cubic
/// Hermite interpolation inside the grid and constant extension outside.
Eigen::VectorXd interpolate_with_extension(const Eigen::VectorXd& grid,
                                           const Eigen::VectorXd& values,
                                           const Eigen::VectorXd& queries);

/// y_ext(t + delta) sampled on the original grid (constant extension).
SampledTrajectory shift(const SampledTrajectory& traj, double delta);

/// All columns re-evaluated on a new grid (cubic interpolation).
SampledTrajectory resample(const SampledTrajectory& traj,
                           const Eigen::VectorXd& new_grid);

/// Basis coefficients of the shifted E and I columns.
CoefVector shifted_coefficients(const SampledTrajectory& traj, double delta,
                                const BasisSystem& basis);

/// Hot-path overload with a pre-factorized fitter for the trajectory grid.
CoefVector shifted_coefficients(const SampledTrajectory& traj, double delta,
                                const CurveFitter& fitter);

}  // namespace epicon
