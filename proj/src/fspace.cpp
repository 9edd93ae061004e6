#include "epicon/fspace.hpp"

#include <algorithm>
#include <cmath>

#include "epicon/errors.hpp"

namespace epicon {

Eigen::VectorXd CoefVector::stacked() const {
  Eigen::VectorXd c(cE.size() + cI.size());
  c << cE, cI;
  return c;
}

CoefVector CoefVector::from_stacked(const Eigen::VectorXd& c) {
  if (c.size() % 2 != 0) {
    throw ContractViolation("CoefVector: stacked vector must have even length");
  }
  const Eigen::Index k = c.size() / 2;
  CoefVector out;
  out.cE = c.head(k);
  out.cI = c.tail(k);
  return out;
}

BlockGram block_gram(const GramH1& gram) {
  BlockGram bg;
  bg.G = gram.G;
  bg.lambda_min = gram.lambda_min;
  Eigen::LLT<Eigen::MatrixXd> llt(gram.G);
  if (llt.info() != Eigen::Success) {
    throw DegenerateBasis("block_gram: Cholesky factorization failed");
  }
  bg.sqrt = llt.matrixU();
  return bg;
}

double distance_squared(const CoefVector& c1, const CoefVector& c2,
                        const BlockGram& gram) {
  if (c1.K() != gram.K() || c2.K() != gram.K()) {
    throw ContractViolation("distance: coefficient length does not match Gram");
  }
  const Eigen::VectorXd dE = c1.cE - c2.cE;
  const Eigen::VectorXd dI = c1.cI - c2.cI;
  return (gram.sqrt * dE).squaredNorm() + (gram.sqrt * dI).squaredNorm();
}

double distance(const CoefVector& c1, const CoefVector& c2, const BlockGram& gram) {
  return std::sqrt(std::max(0.0, distance_squared(c1, c2, gram)));
}

namespace {

// Three-point finite-difference slopes, one-sided at the ends; exact for
// quadratics on nonuniform grids.
Eigen::VectorXd hermite_slopes(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd m(n);
  if (n == 1) {
    m(0) = 0.0;
    return m;
  }
  if (n == 2) {
    m(0) = m(1) = (y(1) - y(0)) / (x(1) - x(0));
    return m;
  }
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    const double h0 = x(i) - x(i - 1);
    const double h1 = x(i + 1) - x(i);
    const double d0 = (y(i) - y(i - 1)) / h0;
    const double d1 = (y(i + 1) - y(i)) / h1;
    m(i) = (h1 * d0 + h0 * d1) / (h0 + h1);
  }
  {
    const double h0 = x(1) - x(0);
    const double h1 = x(2) - x(1);
    const double d0 = (y(1) - y(0)) / h0;
    const double d1 = (y(2) - y(1)) / h1;
    m(0) = d0 + (d0 - d1) * h0 / (h0 + h1);
  }
  {
    const double h0 = x(n - 2) - x(n - 3);
    const double h1 = x(n - 1) - x(n - 2);
    const double d0 = (y(n - 2) - y(n - 3)) / h0;
    const double d1 = (y(n - 1) - y(n - 2)) / h1;
    m(n - 1) = d1 + (d1 - d0) * h1 / (h0 + h1);
  }
  return m;
}

}  // namespace

Eigen::VectorXd interpolate_with_extension(const Eigen::VectorXd& grid,
                                           const Eigen::VectorXd& values,
                                           const Eigen::VectorXd& queries) {
  if (grid.size() != values.size() || grid.size() == 0) {
    throw ContractViolation("interpolate: grid/values length mismatch");
  }
  const Eigen::Index n = grid.size();
  const Eigen::VectorXd m = hermite_slopes(grid, values);

  Eigen::VectorXd out(queries.size());
  for (Eigen::Index qi = 0; qi < queries.size(); ++qi) {
    const double s = queries(qi);
    if (s <= grid(0)) {
      out(qi) = values(0);
      continue;
    }
    if (s >= grid(n - 1)) {
      out(qi) = values(n - 1);
      continue;
    }
    // Interval index via binary search: grid(i) <= s < grid(i+1).
    Eigen::Index lo = 0, hi = n - 1;
    while (hi - lo > 1) {
      const Eigen::Index mid = (lo + hi) / 2;
      if (s < grid(mid)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    const double h = grid(lo + 1) - grid(lo);
    const double u = (s - grid(lo)) / h;
    const double u2 = u * u, u3 = u2 * u;
    const double h00 = 2 * u3 - 3 * u2 + 1;
    const double h10 = u3 - 2 * u2 + u;
    const double h01 = -2 * u3 + 3 * u2;
    const double h11 = u3 - u2;
    out(qi) = h00 * values(lo) + h10 * h * m(lo) + h01 * values(lo + 1) +
              h11 * h * m(lo + 1);
  }
  return out;
}

SampledTrajectory shift(const SampledTrajectory& traj, double delta) {
  SampledTrajectory out;
  out.grid = traj.grid;
  out.names = traj.names;
  out.columns.reserve(traj.columns.size());
  const Eigen::VectorXd queries = traj.grid.array() + delta;
  for (const auto& col : traj.columns) {
    out.columns.push_back(interpolate_with_extension(traj.grid, col, queries));
  }
  return out;
}

SampledTrajectory resample(const SampledTrajectory& traj,
                           const Eigen::VectorXd& new_grid) {
  SampledTrajectory out;
  out.grid = new_grid;
  out.names = traj.names;
  out.columns.reserve(traj.columns.size());
  for (const auto& col : traj.columns) {
    out.columns.push_back(interpolate_with_extension(traj.grid, col, new_grid));
  }
  return out;
}

CoefVector shifted_coefficients(const SampledTrajectory& traj, double delta,
                                const CurveFitter& fitter) {
  const Eigen::VectorXd queries = traj.grid.array() + delta;
  CoefVector c;
  c.cE = fitter.fit(interpolate_with_extension(traj.grid, traj.column("E"), queries));
  c.cI = fitter.fit(interpolate_with_extension(traj.grid, traj.column("I"), queries));
  return c;
}

CoefVector shifted_coefficients(const SampledTrajectory& traj, double delta,
                                const BasisSystem& basis) {
  CurveFitter fitter(basis, traj.grid);
  return shifted_coefficients(traj, delta, fitter);
}

}  // namespace epicon
