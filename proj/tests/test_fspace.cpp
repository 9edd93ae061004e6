#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "epicon/basis.hpp"
#include "epicon/epi_models.hpp"
#include "epicon/fspace.hpp"
#include "epicon/rng.hpp"
#include "oracles.hpp"

using namespace epicon;

namespace {

CoefVector random_coef(int K, RngStream& rng, double scale = 1.0) {
  CoefVector c;
  c.cE.resize(K);
  c.cI.resize(K);
  for (int k = 0; k < K; ++k) {
    c.cE(k) = scale * (2.0 * rng.next_double() - 1.0);
    c.cI(k) = scale * (2.0 * rng.next_double() - 1.0);
  }
  return c;
}

SampledTrajectory point_estimate_curve() {
  ModelParams p;
  p.beta = 0.2933;
  p.sigma = 0.1923;
  p.gamma = 0.1333;
  p.N = 1e6;
  p.E0 = 1.0;
  p.T = 720.0;
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(721, 0.0, 720.0);
  return integrate(p, grid);
}

}  // namespace

TEST_CASE("distance: identity, block symmetry, Cholesky agreement") {
  const BasisSystem b = build_basis(10, 3, 4.0);
  const BlockGram gram = block_gram(gram_h1(b, 1.0));

  // The factor reproduces the Gram block.
  CHECK((gram.sqrt.transpose() * gram.sqrt - gram.G).lpNorm<Eigen::Infinity>() <=
        1e-10 * gram.G.lpNorm<Eigen::Infinity>());

  RngStream rng(3);
  const CoefVector c = random_coef(10, rng);
  CHECK(distance(c, c, gram) == 0.0);

  // A difference in the E block and the same difference in the I block have
  // equal distances.
  CoefVector base = random_coef(10, rng);
  Eigen::VectorXd step(10);
  for (int k = 0; k < 10; ++k) step(k) = rng.next_double();
  CoefVector dE = base, dI = base;
  dE.cE += step;
  dI.cI += step;
  CHECK(distance(base, dE, gram) == doctest::Approx(distance(base, dI, gram)));

  // Quadratic form route agrees with the factored route.
  for (int trial = 0; trial < 50; ++trial) {
    const CoefVector c1 = random_coef(10, rng);
    const CoefVector c2 = random_coef(10, rng);
    const Eigen::VectorXd dEv = c1.cE - c2.cE;
    const Eigen::VectorXd dIv = c1.cI - c2.cI;
    const double quad = dEv.dot(gram.G * dEv) + dIv.dot(gram.G * dIv);
    const double chol = distance_squared(c1, c2, gram);
    CHECK(chol == doctest::Approx(quad).epsilon(1e-10));
  }
}

TEST_CASE("distance matches quadrature of the functional metric") {
  const BasisSystem b = build_basis(10, 3, 4.0);
  const double rho = 0.8;
  const BlockGram gram = block_gram(gram_h1(b, rho));

  RngStream rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const CoefVector c1 = random_coef(10, rng);
    const CoefVector c2 = random_coef(10, rng);
    auto integrand = [&](double t) {
      const Eigen::VectorXd v = eval_basis(b, t);
      const Eigen::VectorXd dv = eval_basis_derivative(b, t);
      const double de = v.dot(c1.cE - c2.cE);
      const double dde = dv.dot(c1.cE - c2.cE);
      const double di = v.dot(c1.cI - c2.cI);
      const double ddi = dv.dot(c1.cI - c2.cI);
      return de * de + rho * dde * dde + di * di + rho * ddi * ddi;
    };
    const double quad = oracles::simpson(integrand, 0.0, 4.0, 8000);
    CHECK(distance_squared(c1, c2, gram) ==
          doctest::Approx(quad).epsilon(1e-6));
  }
}

TEST_CASE("distance satisfies the triangle inequality") {
  const BasisSystem b = build_basis(8, 3, 2.0);
  const BlockGram gram = block_gram(gram_h1(b, 1.0));
  RngStream rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const CoefVector a = random_coef(8, rng);
    const CoefVector c = random_coef(8, rng);
    const CoefVector d = random_coef(8, rng);
    CHECK(distance(a, d, gram) <=
          distance(a, c, gram) + distance(c, d, gram) + 1e-10);
  }
}

TEST_CASE("shift: identity at delta = 0 is bitwise") {
  const SampledTrajectory traj = point_estimate_curve();
  const SampledTrajectory sh = shift(traj, 0.0);
  for (std::size_t c = 0; c < traj.columns.size(); ++c) {
    CHECK((sh.columns[c] - traj.columns[c]).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("shift: delta = T saturates to the terminal value") {
  const SampledTrajectory traj = point_estimate_curve();
  const SampledTrajectory sh = shift(traj, 720.0);
  for (std::size_t c = 0; c < traj.columns.size(); ++c) {
    const double terminal = traj.columns[c](traj.grid.size() - 1);
    CHECK((sh.columns[c].array() - terminal).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("shift moves the peak earlier by delta") {
  const SampledTrajectory traj = point_estimate_curve();
  const SampledTrajectory sh = shift(traj, 10.0);
  Eigen::Index p0 = 0, p1 = 0;
  traj.column("I").maxCoeff(&p0);
  sh.column("I").maxCoeff(&p1);
  CHECK(std::abs((traj.grid(p0) - 10.0) - sh.grid(p1)) <= 1.0);
}

TEST_CASE("shift semigroup on unclamped grid-aligned shifts") {
  const SampledTrajectory traj = point_estimate_curve();
  const SampledTrajectory one = shift(shift(traj, 5.0), 7.0);
  const SampledTrajectory two = shift(traj, 12.0);
  // Grid points whose intermediate queries stay inside [0, T].
  const double scale = traj.column("I").maxCoeff();
  for (Eigen::Index i = 0; i < traj.grid.size(); ++i) {
    if (traj.grid(i) + 12.0 > 720.0) continue;
    CHECK(std::abs(one.column("I")(i) - two.column("I")(i)) <= 1e-8 * scale);
  }
}

TEST_CASE("shifted_coefficients: delta 0 equals the plain fit") {
  const SampledTrajectory traj = point_estimate_curve();
  const BasisSystem b = build_basis(30, 3, 720.0);
  const CoefVector c0 = shifted_coefficients(traj, 0.0, b);
  const Eigen::VectorXd fitE = fit_coefficients(b, traj.column("E"), traj.grid);
  CHECK((c0.cE - fitE).lpNorm<Eigen::Infinity>() <= 1e-12 * fitE.cwiseAbs().maxCoeff());
}

TEST_CASE("shifted_coefficients: constant trajectory is shift invariant") {
  SampledTrajectory traj;
  traj.grid = Eigen::VectorXd::LinSpaced(101, 0.0, 100.0);
  traj.names = {"E", "I"};
  traj.columns = {Eigen::VectorXd::Constant(101, 3.0),
                  Eigen::VectorXd::Constant(101, 4.0)};
  const BasisSystem b = build_basis(10, 3, 100.0);
  const CoefVector c0 = shifted_coefficients(traj, 0.0, b);
  for (double delta : {-40.0, -3.3, 11.7, 100.0}) {
    const CoefVector cd = shifted_coefficients(traj, delta, b);
    CHECK((cd.cE - c0.cE).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK((cd.cI - c0.cI).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_CASE("shifted coefficients vary continuously in delta") {
  const SampledTrajectory traj = point_estimate_curve();
  const BasisSystem b = build_basis(30, 3, 720.0);
  const CurveFitter fitter(b, traj.grid);
  const BlockGram gram = block_gram(gram_h1(b, 1.0));
  for (double delta : {-50.0, 0.0, 33.0, 110.0}) {
    const CoefVector c1 = shifted_coefficients(traj, delta, fitter);
    const CoefVector c2 = shifted_coefficients(traj, delta + 1e-3, fitter);
    const double dist = distance(c1, c2, gram);
    const double scale = distance(
        c1, CoefVector{Eigen::VectorXd::Zero(30), Eigen::VectorXd::Zero(30)}, gram);
    CHECK(dist <= 1e-2 * (1.0 + scale));
  }
}

TEST_CASE("resample onto a coarser grid reproduces smooth columns") {
  const SampledTrajectory traj = point_estimate_curve();
  Eigen::VectorXd coarse = Eigen::VectorXd::LinSpaced(241, 0.0, 720.0);
  const SampledTrajectory rs = resample(traj, coarse);
  // Values at shared points are exact.
  for (int i = 0; i < 241; ++i) {
    const int j = 3 * i;
    CHECK(rs.column("I")(i) == traj.column("I")(j));
  }
}
