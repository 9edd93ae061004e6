#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "epicon/errors.hpp"
#include "epicon/qp.hpp"
#include "epicon/rng.hpp"
#include "oracles.hpp"

using namespace epicon;

namespace {

Eigen::MatrixXd random_spd(int n, RngStream& rng, double ridge = 0.5) {
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) A(i, j) = 2.0 * rng.next_double() - 1.0;
  }
  return A.transpose() * A + ridge * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd random_vec(int n, RngStream& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * (2.0 * rng.next_double() - 1.0);
  return v;
}

}  // namespace

TEST_CASE("unconstrained minimum inside the feasible set") {
  QpProblem p;
  p.P = Eigen::MatrixXd::Identity(2, 2);
  p.q = Eigen::VectorXd::Zero(2);
  p.A.resize(0, 2);
  p.b.resize(0);
  p.G.resize(1, 2);
  p.G << 1.0, 1.0;
  p.h = Eigen::VectorXd::Constant(1, 10.0);
  const QpSolution s = solve_qp(p);
  CHECK(s.converged);
  CHECK(s.x.lpNorm<Eigen::Infinity>() <= 1e-7);
  CHECK(s.z(0) <= 1e-7);
}

TEST_CASE("active bound with known multiplier") {
  // min 1/2 |x - (3,0)|^2 s.t. x_0 <= 1 -> x = (1, 0), z = 2.
  QpProblem p;
  p.P = Eigen::MatrixXd::Identity(2, 2);
  p.q.resize(2);
  p.q << -3.0, 0.0;
  p.A.resize(0, 2);
  p.b.resize(0);
  p.G.resize(1, 2);
  p.G << 1.0, 0.0;
  p.h = Eigen::VectorXd::Constant(1, 1.0);
  const QpSolution s = solve_qp(p);
  CHECK(s.converged);
  CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(s.x(1) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(s.z(0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(s.kkt_residual <= 1e-6);
}

TEST_CASE("equality-only problem with analytic solution") {
  // min 1/2 |x|^2 s.t. sum x = 1 -> x = 1/n, y = -1/n.
  const int n = 5;
  QpProblem p;
  p.P = Eigen::MatrixXd::Identity(n, n);
  p.q = Eigen::VectorXd::Zero(n);
  p.A = Eigen::MatrixXd::Ones(1, n);
  p.b = Eigen::VectorXd::Ones(1);
  p.G.resize(0, n);
  p.h.resize(0);
  const QpSolution s = solve_qp(p);
  CHECK((s.x.array() - 0.2).abs().maxCoeff() <= 1e-9);
  CHECK(s.y(0) == doctest::Approx(-0.2).epsilon(1e-8));
}

TEST_CASE("duplicated equality rows are tolerated") {
  const int n = 4;
  QpProblem p;
  p.P = Eigen::MatrixXd::Identity(n, n);
  p.q = Eigen::VectorXd::Zero(n);
  p.A.resize(3, n);
  p.A.row(0) = Eigen::RowVectorXd::Ones(n);
  p.A.row(1) = Eigen::RowVectorXd::Ones(n);  // duplicate
  p.A.row(2) << 1.0, -1.0, 0.0, 0.0;
  p.b.resize(3);
  p.b << 1.0, 1.0, 0.0;
  p.G.resize(0, n);
  p.h.resize(0);
  const QpSolution s = solve_qp(p);
  CHECK((p.A * s.x - p.b).lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK(s.kkt_residual <= 1e-7);
}

TEST_CASE("inconsistent equalities raise InfeasibleProblem") {
  QpProblem p;
  p.P = Eigen::MatrixXd::Identity(2, 2);
  p.q = Eigen::VectorXd::Zero(2);
  p.A.resize(2, 2);
  p.A.row(0) << 1.0, 0.0;
  p.A.row(1) << 1.0, 0.0;
  p.b.resize(2);
  p.b << 0.0, 1.0;  // x0 = 0 and x0 = 1
  p.G.resize(0, 2);
  p.h.resize(0);
  CHECK_THROWS_AS(solve_qp(p), InfeasibleProblem);
}

TEST_CASE("random dense QPs match active-set enumeration") {
  RngStream rng(8675309);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_u64() % 4);     // 2..5
    const int mi = 2 + static_cast<int>(rng.next_u64() % 7);    // 2..8
    const int me = static_cast<int>(rng.next_u64() % 2);        // 0..1

    QpProblem p;
    p.P = random_spd(n, rng);
    p.q = random_vec(n, rng, 2.0);
    p.G.resize(mi, n);
    for (int i = 0; i < mi; ++i) p.G.row(i) = random_vec(n, rng).transpose();
    // Keep the origin strictly feasible so the problem is solvable.
    p.h = random_vec(mi, rng).cwiseAbs() + Eigen::VectorXd::Constant(mi, 0.3);
    p.A.resize(me, n);
    p.b.resize(me);
    for (int i = 0; i < me; ++i) {
      p.A.row(i) = random_vec(n, rng).transpose();
      p.b(i) = 0.0;  // through the origin
    }

    const QpSolution s = solve_qp(p);
    const auto oracle = oracles::enumerate_qp(p.P, p.q, p.A, p.b, p.G, p.h);
    REQUIRE(oracle.found);
    CHECK(s.objective ==
          doctest::Approx(oracle.objective)
              .epsilon(1e-6 * std::max(1.0, std::abs(oracle.objective))));
    CHECK((s.x - oracle.x).lpNorm<Eigen::Infinity>() <=
          1e-5 * std::max(1.0, oracle.x.lpNorm<Eigen::Infinity>()));
    CHECK(s.kkt_residual <= 1e-6);
  }
}

TEST_CASE("badly scaled problem still converges") {
  // Mimics the population-cap scale: h ~ 1e6, objective ~ 1e-6.
  QpProblem p;
  p.P = 1e-6 * Eigen::MatrixXd::Identity(3, 3);
  p.q.resize(3);
  p.q << -1.0, -2.0, -0.5;
  p.A.resize(0, 3);
  p.b.resize(0);
  p.G.resize(4, 3);
  p.G << 1.0, 1.0, 1.0,
        -1.0, 0.0, 0.0,
         0.0, -1.0, 0.0,
         0.0, 0.0, -1.0;
  p.h.resize(4);
  p.h << 1e6, 0.0, 0.0, 0.0;
  const QpSolution s = solve_qp(p);
  CHECK(s.converged);
  CHECK(s.kkt_residual <= 1e-6);
  // Optimum pushes against the cap.
  CHECK(s.x.sum() == doctest::Approx(1e6).epsilon(1e-6));
}
