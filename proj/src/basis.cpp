#include "epicon/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "epicon/errors.hpp"

namespace epicon {

namespace {

// Index of the knot span containing t: largest i with knots[i] <= t and
// knots[i] < knots[i+1]; t == T maps to the last nonempty span.
int find_span(const BasisSystem& b, double t) {
  const int p = b.degree;
  const int n = b.K - 1;
  if (t >= b.knots(n + 1)) return n;
  if (t <= b.knots(p)) return p;
  int lo = p, hi = n + 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (t < b.knots(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return lo;
}

// Nonzero basis values N_{span-p..span} at t (NURBS-book "BasisFuns").
void basis_funs(const BasisSystem& b, int span, double t, Eigen::VectorXd& out) {
  const int p = b.degree;
  out.resize(p + 1);
  Eigen::VectorXd left(p + 1), right(p + 1);
  out(0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left(j) = t - b.knots(span + 1 - j);
    right(j) = b.knots(span + j) - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right(r + 1) + left(j - r);
      const double temp = denom != 0.0 ? out(r) / denom : 0.0;
      out(r) = saved + right(r + 1) * temp;
      saved = left(j - r) * temp;
    }
    out(j) = saved;
  }
}

void check_domain(const BasisSystem& b, double t) {
  const double slack = 1e-12 * std::max(1.0, b.T);
  if (t < -slack || t > b.T + slack) {
    throw ContractViolation("basis: t = " + std::to_string(t) +
                            " outside [0, " + std::to_string(b.T) + "]");
  }
}

// Degree-(degree+1) companion basis whose splines express the running
// integrals: same interior knots, one more clamp at each end.
BasisSystem elevated_for_integral(const BasisSystem& b) {
  BasisSystem e;
  e.K = b.K + 1;
  e.degree = b.degree + 1;
  e.T = b.T;
  e.knots.resize(b.knots.size() + 2);
  e.knots(0) = b.knots(0);
  e.knots.segment(1, b.knots.size()) = b.knots;
  e.knots(e.knots.size() - 1) = b.knots(b.knots.size() - 1);
  return e;
}

}  // namespace

BasisSystem build_basis(int K, int degree, double T) {
  if (degree < 1) throw ContractViolation("build_basis: degree must be >= 1");
  if (K < degree + 1) {
    throw ContractViolation("build_basis: K must be >= degree + 1");
  }
  if (!(T > 0.0)) throw ContractViolation("build_basis: T must be > 0");

  BasisSystem b;
  b.K = K;
  b.degree = degree;
  b.T = T;
  const int n_interior = K - degree - 1;
  b.knots.resize(K + degree + 1);
  for (int i = 0; i <= degree; ++i) b.knots(i) = 0.0;
  for (int i = 1; i <= n_interior; ++i) {
    b.knots(degree + i) = T * static_cast<double>(i) / (n_interior + 1);
  }
  for (int i = 0; i <= degree; ++i) b.knots(K + i) = T;
  return b;
}

Eigen::VectorXd eval_basis(const BasisSystem& b, double t) {
  check_domain(b, t);
  t = std::clamp(t, 0.0, b.T);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(b.K);
  const int span = find_span(b, t);
  Eigen::VectorXd vals;
  basis_funs(b, span, t, vals);
  for (int r = 0; r <= b.degree; ++r) out(span - b.degree + r) = vals(r);
  return out;
}

Eigen::VectorXd eval_basis_derivative(const BasisSystem& b, double t) {
  check_domain(b, t);
  t = std::clamp(t, 0.0, b.T);
  const int p = b.degree;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(b.K);
  const int span = find_span(b, t);

  // Degree p-1 values on the same knot vector, then the standard
  // first-derivative combination.
  Eigen::VectorXd lower(p);
  {
    Eigen::VectorXd left(p), right(p);
    lower(0) = 1.0;
    for (int j = 1; j <= p - 1; ++j) {
      left(j) = t - b.knots(span + 1 - j);
      right(j) = b.knots(span + j) - t;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double denom = right(r + 1) + left(j - r);
        const double temp = denom != 0.0 ? lower(r) / denom : 0.0;
        lower(r) = saved + right(r + 1) * temp;
        saved = left(j - r) * temp;
      }
      lower(j) = saved;
    }
  }

  for (int r = 0; r <= p; ++r) {
    const int k = span - p + r;
    double d = 0.0;
    const double den1 = b.knots(k + p) - b.knots(k);
    const double den2 = b.knots(k + p + 1) - b.knots(k + 1);
    // lower(i) holds N_{span-p+1+i, p-1}; N_{k,p-1} is lower(r-1).
    if (r >= 1 && den1 != 0.0) d += lower(r - 1) / den1;
    if (r <= p - 1 && den2 != 0.0) d -= lower(r) / den2;
    out(k) = p * d;
  }
  return out;
}

Eigen::VectorXd eval_basis_integral(const BasisSystem& b, double t) {
  check_domain(b, t);
  t = std::clamp(t, 0.0, b.T);
  const int p = b.degree;
  const BasisSystem elev = elevated_for_integral(b);
  const Eigen::VectorXd m = eval_basis(elev, t);  // K+1 values

  // Phi_k(t) = (u_{k+p+1} - u_k) / (p+1) * sum_{i>k} M_i(t); suffix sums.
  Eigen::VectorXd suffix(elev.K + 1);
  suffix(elev.K) = 0.0;
  for (int i = elev.K - 1; i >= 0; --i) suffix(i) = suffix(i + 1) + m(i);

  Eigen::VectorXd out(b.K);
  for (int k = 0; k < b.K; ++k) {
    const double w = (b.knots(k + p + 1) - b.knots(k)) / (p + 1);
    out(k) = w * suffix(k + 1);
  }
  return out;
}

DesignMatrices design_matrices(const BasisSystem& b, const Eigen::VectorXd& grid) {
  DesignMatrices d;
  d.grid = grid;
  const Eigen::Index m = grid.size();
  d.B.resize(m, b.K);
  d.Bp.resize(m, b.K);
  d.Phi.resize(m, b.K);
  for (Eigen::Index i = 0; i < m; ++i) {
    d.B.row(i) = eval_basis(b, grid(i)).transpose();
    d.Bp.row(i) = eval_basis_derivative(b, grid(i)).transpose();
    d.Phi.row(i) = eval_basis_integral(b, grid(i)).transpose();
  }
  return d;
}

void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  nodes.resize(n);
  weights.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    // Chebyshev-based starting guess, Newton on P_n.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes(i) = -x;
    nodes(n - 1 - i) = x;
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    weights(i) = w;
    weights(n - 1 - i) = w;
  }
}

GramH1 gram_h1(const BasisSystem& b, double rho) {
  if (!(rho >= 0.0)) throw ContractViolation("gram_h1: rho must be >= 0");

  GramH1 g;
  g.rho = rho;
  g.G = Eigen::MatrixXd::Zero(b.K, b.K);

  // phi_k * phi_l has degree 2p; p+2 nodes integrate degree 2p+3 exactly.
  const int n_nodes = b.degree + 2;
  Eigen::VectorXd xs, ws;
  gauss_legendre(n_nodes, xs, ws);

  const int p = b.degree;
  for (Eigen::Index s = p; s < b.knots.size() - p - 1; ++s) {
    const double a = b.knots(s), c = b.knots(s + 1);
    if (!(c > a)) continue;
    const double mid = 0.5 * (a + c), hw = 0.5 * (c - a);
    for (int q = 0; q < n_nodes; ++q) {
      const double t = mid + hw * xs(q);
      const double w = hw * ws(q);
      const Eigen::VectorXd v = eval_basis(b, t);
      const Eigen::VectorXd dv = eval_basis_derivative(b, t);
      // Only the p+1 nonzero indices of this span contribute.
      const int k0 = static_cast<int>(s) - p;
      for (int i = 0; i <= p; ++i) {
        for (int j = 0; j <= p; ++j) {
          g.G(k0 + i, k0 + j) += w * (v(k0 + i) * v(k0 + j) + rho * dv(k0 + i) * dv(k0 + j));
        }
      }
    }
  }

  g.G = 0.5 * (g.G + g.G.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.G, Eigen::EigenvaluesOnly);
  g.lambda_min = es.eigenvalues().minCoeff();
  if (!(g.lambda_min > 0.0)) {
    throw DegenerateBasis("gram_h1: Gram matrix not positive definite");
  }
  return g;
}

CurveFitter::CurveFitter(const BasisSystem& basis, const Eigen::VectorXd& grid)
    : grid_(grid) {
  if (grid.size() < basis.K) {
    throw ContractViolation("CurveFitter: need at least K grid points");
  }
  Eigen::MatrixXd B(grid.size(), basis.K);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    B.row(i) = eval_basis(basis, grid(i)).transpose();
  }
  qr_.compute(B);
  const auto& R = qr_.matrixR();
  const double rmax = std::abs(R(0, 0));
  const double rmin = std::abs(R(basis.K - 1, basis.K - 1));
  if (qr_.rank() < basis.K || rmin <= 1e-12 * rmax) {
    throw IllPosedFit("fit_coefficients: rank-deficient design matrix",
                      rmin > 0.0 ? rmax / rmin : std::numeric_limits<double>::infinity());
  }
}

Eigen::VectorXd CurveFitter::fit(const Eigen::VectorXd& values) const {
  if (values.size() != grid_.size()) {
    throw ContractViolation("CurveFitter: values length != grid length");
  }
  return qr_.solve(values);
}

Eigen::VectorXd fit_coefficients(const BasisSystem& basis,
                                 const Eigen::VectorXd& values,
                                 const Eigen::VectorXd& grid) {
  return CurveFitter(basis, grid).fit(values);
}

}  // namespace epicon
