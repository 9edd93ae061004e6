#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "epicon/epi_models.hpp"
#include "epicon/errors.hpp"
#include "oracles.hpp"

using namespace epicon;

namespace {

Eigen::VectorXd daily_grid(double T) {
  const int n = static_cast<int>(T) + 1;
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) g(i) = i;
  return g;
}

ModelParams point_estimate_params() {
  ModelParams p;
  p.variant = ModelVariant::SEIR;
  p.beta = 0.2933;
  p.sigma = 0.1923;
  p.gamma = 0.1333;
  p.N = 1e6;
  p.E0 = 1.0;
  p.I0 = 0.0;
  p.T = 720.0;
  return p;
}

}  // namespace

TEST_CASE("rhs: SEIR flows at the initial state") {
  ModelParams p = point_estimate_params();
  Eigen::VectorXd state(4);
  state << p.N - 1, 1.0, 0.0, 0.0;
  const Eigen::VectorXd d = rhs(p, state, 0.0);
  CHECK(d(0) == doctest::Approx(0.0));                 // no infection while I=0
  CHECK(d(1) == doctest::Approx(-0.1923).epsilon(1e-10));
  CHECK(d(2) == doctest::Approx(0.1923).epsilon(1e-10));
  CHECK(d(3) == doctest::Approx(0.0));
}

TEST_CASE("rhs: disease-free state has zero derivative for every variant") {
  for (auto variant : {ModelVariant::SEIR, ModelVariant::SEIUR,
                       ModelVariant::SEIQR, ModelVariant::SEIRD}) {
    ModelParams p = point_estimate_params();
    p.variant = variant;
    p.f = 0.6;
    p.nu = 0.1;
    p.xi = 0.07;
    Eigen::VectorXd state = Eigen::VectorXd::Zero(state_dimension(variant));
    state(0) = p.N;
    const Eigen::VectorXd d = rhs(p, state, 3.0);
    CHECK(d.lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("rhs: components sum to zero (closed population)") {
  for (auto variant : {ModelVariant::SEIR, ModelVariant::SEIUR,
                       ModelVariant::SEIQR, ModelVariant::SEIRD}) {
    ModelParams p = point_estimate_params();
    p.variant = variant;
    p.f = 0.4;
    p.nu = 0.21;
    p.xi = 0.05;
    const int dim = state_dimension(variant);
    Eigen::VectorXd state(dim);
    state << Eigen::VectorXd::LinSpaced(dim, 1e5, 3e5);
    const Eigen::VectorXd d = rhs(p, state, 1.0);
    CHECK(std::abs(d.sum()) <= 1e-12 * d.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("rhs rejects mismatched state dimension") {
  ModelParams p = point_estimate_params();
  CHECK_THROWS_AS(rhs(p, Eigen::VectorXd::Zero(5), 0.0), ContractViolation);
  p.variant = ModelVariant::SEIQR;
  p.nu = 0.1;
  p.xi = 0.1;
  CHECK_THROWS_AS(rhs(p, Eigen::VectorXd::Zero(4), 0.0), ContractViolation);
}

TEST_CASE("ModelParams invariants") {
  ModelParams p = point_estimate_params();
  CHECK_NOTHROW(p.validate());
  ModelParams bad = p;
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = p;
  bad.E0 = 0.0;
  bad.I0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = p;
  bad.N = 1.0;  // N - E0 - I0 <= 0
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = p;
  bad.f = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("integrate: single-peaked I curve and conservation") {
  const ModelParams p = point_estimate_params();
  const SampledTrajectory traj = integrate(p, daily_grid(p.T));

  Eigen::VectorXd total = Eigen::VectorXd::Zero(traj.grid.size());
  for (const auto& col : traj.columns) total += col;
  CHECK(((total.array() - p.N).abs() <= 1e-6 * p.N).all());

  // Single interior peak: nondecreasing before the argmax, nonincreasing
  // after, up to integrator round-off in the tail.
  const Eigen::VectorXd& I = traj.column("I");
  Eigen::Index peak = 0;
  const double peak_value = I.maxCoeff(&peak);
  CHECK(peak > 0);
  CHECK(peak < I.size() - 1);
  const double slack = 1e-9 * peak_value;
  for (Eigen::Index i = 0; i + 1 < I.size(); ++i) {
    if (i < peak) {
      CHECK(I(i + 1) >= I(i) - slack);
    } else {
      CHECK(I(i + 1) <= I(i) + slack);
    }
  }
}

TEST_CASE("integrate: beta = 0 gives the analytic linear decay") {
  ModelParams p = point_estimate_params();
  p.beta = 1e-300;  // exact zero fails validation; transmission negligible
  p.E0 = 100.0;
  p.I0 = 0.0;
  const SampledTrajectory traj = integrate(p, daily_grid(p.T));
  const Eigen::VectorXd& E = traj.column("E");
  const Eigen::VectorXd& I = traj.column("I");
  for (Eigen::Index i = 0; i < traj.grid.size(); ++i) {
    const double t = traj.grid(i);
    const double e_exact = p.E0 * std::exp(-p.sigma * t);
    CHECK(E(i) == doctest::Approx(e_exact).epsilon(1e-6));
    const double i_exact = p.E0 * p.sigma / (p.gamma - p.sigma) *
                           (std::exp(-p.sigma * t) - std::exp(-p.gamma * t));
    CHECK(I(i) <= i_exact + 1e-6 * p.N);
  }
}

TEST_CASE("integrate: peak height cross-checked against fixed-step RK4") {
  const ModelParams p = point_estimate_params();
  const SampledTrajectory traj = integrate(p, daily_grid(p.T));

  auto f = [&](const Eigen::VectorXd& y, double t) { return rhs(p, y, t); };
  std::vector<double> daily_I;
  int steps_per_day = 0;
  oracles::rk4_integrate(f, p.initial_state(), 0.0, p.T, 0.01,
                         [&](double /*t*/, const Eigen::VectorXd& y) {
                           if (steps_per_day == 0) daily_I.push_back(y(2));
                           steps_per_day = (steps_per_day + 1) % 100;
                         });

  const double peak_dp = traj.column("I").maxCoeff();
  const double peak_rk4 = *std::max_element(daily_I.begin(), daily_I.end());
  CHECK(std::abs(peak_dp - peak_rk4) <= 1e-4 * peak_rk4);
}

TEST_CASE("integrate: errors on out-of-domain grid") {
  const ModelParams p = point_estimate_params();
  Eigen::VectorXd g(2);
  g << 0.0, 2.0 * p.T;
  CHECK_THROWS_AS(integrate(p, g), ContractViolation);
}

TEST_CASE("params_from_quantities") {
  const RateParams r = params_from_quantities(5.2, 7.5, 2.2);
  CHECK(r.sigma == doctest::Approx(0.1923).epsilon(5e-4));
  CHECK(r.gamma == doctest::Approx(0.1333).epsilon(5e-4));
  CHECK(r.beta == doctest::Approx(0.2933).epsilon(5e-4));

  const RateParams unit = params_from_quantities(1.0, 1.0, 1.0);
  CHECK(unit.sigma == 1.0);
  CHECK(unit.gamma == 1.0);
  CHECK(unit.beta == 1.0);

  // Tang study row (7.00, 2.16, 6.47).
  const RateParams tang = params_from_quantities(7.00, 2.16, 6.47);
  CHECK(tang.gamma == doctest::Approx(0.46296).epsilon(1e-4));
  CHECK(tang.beta == doctest::Approx(2.9954).epsilon(1e-4));

  CHECK_THROWS_AS(params_from_quantities(0.0, 1.0, 1.0), ContractViolation);
}

TEST_CASE("simulate_ensemble: distinct peaks, determinism, degenerate variance") {
  EnsembleSpec spec;
  spec.D_E = TwoPieceNormalSpec::from_ci(5.2, 4.1, 7.0);
  spec.D_I = TwoPieceNormalSpec::from_ci(7.5, 5.3, 19.0);
  spec.R0 = TwoPieceNormalSpec::from_ci(2.2, 1.4, 3.9);
  const Eigen::VectorXd grid = daily_grid(spec.T);

  RngStream rng(2020);
  const Ensemble ens = simulate_ensemble(5, spec, grid, rng);
  REQUIRE(ens.trajectories.size() == 5);

  std::vector<double> peaks;
  for (const auto& traj : ens.trajectories) {
    Eigen::Index arg = 0;
    traj.column("I").maxCoeff(&arg);
    peaks.push_back(traj.grid(arg));
  }
  std::sort(peaks.begin(), peaks.end());
  CHECK(std::unique(peaks.begin(), peaks.end()) == peaks.end());

  // Identical seed implies a bit-identical ensemble.
  RngStream rng2(2020);
  const Ensemble ens2 = simulate_ensemble(5, spec, grid, rng2);
  for (int j = 0; j < 5; ++j) {
    CHECK(ens.members[j].D_E == ens2.members[j].D_E);
    for (std::size_t c = 0; c < ens.trajectories[j].columns.size(); ++c) {
      CHECK((ens.trajectories[j].columns[c] - ens2.trajectories[j].columns[c])
                .lpNorm<Eigen::Infinity>() == 0.0);
    }
  }

  // Near-zero variance reproduces the point-estimate curve.
  EnsembleSpec tight = spec;
  tight.D_E = TwoPieceNormalSpec{5.2, 1e-12, 1e-12, 1e-4};
  tight.D_I = TwoPieceNormalSpec{7.5, 1e-12, 1e-12, 1e-4};
  tight.R0 = TwoPieceNormalSpec{2.2, 1e-12, 1e-12, 1e-4};
  RngStream rng3(77);
  const Ensemble one = simulate_ensemble(1, tight, grid, rng3);
  ModelParams p;
  p.beta = 2.2 / 7.5;
  p.sigma = 1.0 / 5.2;
  p.gamma = 1.0 / 7.5;
  p.N = spec.N;
  p.E0 = spec.E0;
  p.I0 = spec.I0;
  p.T = spec.T;
  const SampledTrajectory ref = integrate(p, grid);
  CHECK((one.trajectories[0].column("I") - ref.column("I")).lpNorm<Eigen::Infinity>() <=
        1e-6 * spec.N);
}

TEST_CASE("sampled infectious period has median 7.5") {
  EnsembleSpec spec;
  spec.D_I = TwoPieceNormalSpec::from_ci(7.5, 5.3, 19.0);
  RngStream rng(31);
  const int n = 10000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) {
    RngStream s = rng.child(i);
    draws[i] = sample_two_piece_normal(spec.D_I, s);
  }
  std::nth_element(draws.begin(), draws.begin() + n / 2, draws.end());
  CHECK(draws[n / 2] == doctest::Approx(7.5).epsilon(0.03));
}
