#include "epicon/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "epicon/errors.hpp"

namespace epicon {

namespace {

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

}  // namespace

// Inequality-only Mehrotra predictor-corrector on (P, q, G, h); assumes the
// caller already scaled rows of G and the objective to O(1)-ish magnitudes.
IpmResult solve_qp_inequality(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                              const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                              const QpOptions& opts) {
  const Eigen::Index nv = P.rows();
  const Eigen::Index m = G.rows();

  IpmResult res;

  // Starting point from the least-squares relaxation, then Mehrotra's shift.
  double ridge = 1e-12 * (1.0 + P.trace() / std::max<Eigen::Index>(nv, 1));
  Eigen::MatrixXd H0 = P + G.transpose() * G;
  H0.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt0(H0);
  Eigen::VectorXd w;
  if (llt0.info() == Eigen::Success) {
    w = llt0.solve(-q + G.transpose() * h);
  } else {
    w = Eigen::VectorXd::Zero(nv);
  }
  Eigen::VectorXd s_raw = h - G * w;
  Eigen::VectorXd z_raw = -s_raw;

  const double dp = std::max(-1.5 * s_raw.minCoeff(), 0.0);
  const double dd = std::max(-1.5 * z_raw.minCoeff(), 0.0);
  Eigen::VectorXd s1 = s_raw.array() + dp;
  Eigen::VectorXd z1 = z_raw.array() + dd;
  const double g01 = s1.dot(z1);
  const double dhp = dp + 0.5 * g01 / std::max(z1.sum(), 1e-12);
  const double dhd = dd + 0.5 * g01 / std::max(s1.sum(), 1e-12);
  Eigen::VectorXd s = (s_raw.array() + dhp).cwiseMax(1e-4);
  Eigen::VectorXd z = (z_raw.array() + dhd).cwiseMax(1e-4);
  if (!s.allFinite() || !z.allFinite()) {
    s = Eigen::VectorXd::Ones(m);
    z = Eigen::VectorXd::Ones(m);
  }

  const double q_scale = 1.0 + q.lpNorm<Eigen::Infinity>();
  const double h_scale = 1.0 + h.lpNorm<Eigen::Infinity>();
  double mu = s.dot(z) / static_cast<double>(m);
  double mu_prev = mu;
  int stall = 0;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const Eigen::VectorXd r_d = P * w + q + G.transpose() * z;
    const Eigen::VectorXd r_p = G * w + s - h;
    mu = s.dot(z) / static_cast<double>(m);

    const double obj = 0.5 * w.dot(P * w) + q.dot(w);
    const double gap_tol = opts.tol * std::max(1.0, std::abs(obj));
    if (r_d.lpNorm<Eigen::Infinity>() <= opts.tol * q_scale &&
        r_p.lpNorm<Eigen::Infinity>() <= opts.tol * h_scale && mu <= gap_tol) {
      res.converged = true;
      res.iterations = iter;
      break;
    }
    if (iter > 0) {
      if (mu > 0.99 * mu_prev) {
        if (++stall >= 10) {
          res.iterations = iter;
          break;
        }
      } else {
        stall = 0;
      }
    }
    mu_prev = mu;

    const Eigen::VectorXd d = z.cwiseQuotient(s);
    Eigen::MatrixXd H = P + G.transpose() * d.asDiagonal() * G;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    double rr = ridge;
    while (llt.info() != Eigen::Success && rr < 1e-4) {
      rr *= 100.0;
      Eigen::MatrixXd Hr = H;
      Hr.diagonal().array() += rr;
      llt.compute(Hr);
    }
    if (llt.info() != Eigen::Success) {
      res.iterations = iter;
      break;
    }

    // Affine predictor.
    const Eigen::VectorXd rc_aff = s.cwiseProduct(z);
    Eigen::VectorXd v = (rc_aff - z.cwiseProduct(r_p)).cwiseQuotient(s);
    Eigen::VectorXd dw = llt.solve(-r_d + G.transpose() * v);
    Eigen::VectorXd ds = -r_p - G * dw;
    Eigen::VectorXd dz = -(rc_aff + z.cwiseProduct(ds)).cwiseQuotient(s);

    const double ap_aff = max_step(s, ds);
    const double ad_aff = max_step(z, dz);
    const double mu_aff = (s + ap_aff * ds).dot(z + ad_aff * dz) /
                          static_cast<double>(m);
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::clamp(sigma, 0.0, 0.99);

    // Corrector with centering.
    const Eigen::VectorXd rc =
        rc_aff + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(m, sigma * mu);
    v = (rc - z.cwiseProduct(r_p)).cwiseQuotient(s);
    dw = llt.solve(-r_d + G.transpose() * v);
    ds = -r_p - G * dw;
    dz = -(rc + z.cwiseProduct(ds)).cwiseQuotient(s);

    const double tau = 0.995;
    const double ap = std::min(1.0, tau * max_step(s, ds));
    const double ad = std::min(1.0, tau * max_step(z, dz));

    w += ap * dw;
    s += ap * ds;
    z += ad * dz;
    res.iterations = iter + 1;
  }

  // Active-set polish: re-solve on the apparent active set so the primal and
  // the complementarity products reach linear-solve accuracy.
  {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (z(i) > s(i)) act.push_back(i);
    }
    {
      Eigen::MatrixXd Ga(static_cast<Eigen::Index>(act.size()), nv);
      Eigen::VectorXd ha(static_cast<Eigen::Index>(act.size()));
      for (std::size_t k = 0; k < act.size(); ++k) {
        Ga.row(static_cast<Eigen::Index>(k)) = G.row(act[k]);
        ha(static_cast<Eigen::Index>(k)) = h(act[k]);
      }
      const Eigen::Index na = Ga.rows();
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nv + na, nv + na);
      kkt.topLeftCorner(nv, nv) = P;
      kkt.topRightCorner(nv, na) = Ga.transpose();
      kkt.bottomLeftCorner(na, nv) = Ga;
      Eigen::VectorXd rhs(nv + na);
      rhs.head(nv) = -q;
      rhs.tail(na) = ha;
      const Eigen::VectorXd sol =
          Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(kkt).solve(rhs);
      const Eigen::VectorXd wp = sol.head(nv);
      const Eigen::VectorXd za = sol.tail(na);
      const Eigen::VectorXd sp = h - G * wp;
      const double h_scale = 1.0 + h.lpNorm<Eigen::Infinity>();
      bool ok = sp.minCoeff() >= -1e-9 * h_scale &&
                (za.size() == 0 || za.minCoeff() >= -1e-9);
      if (ok) {
        Eigen::VectorXd zp = Eigen::VectorXd::Zero(m);
        for (std::size_t k = 0; k < act.size(); ++k) {
          zp(act[k]) = std::max(za(static_cast<Eigen::Index>(k)), 0.0);
        }
        const double rd_old = (P * w + q + G.transpose() * z).lpNorm<Eigen::Infinity>();
        const double rd_new = (P * wp + q + G.transpose() * zp).lpNorm<Eigen::Infinity>();
        if (rd_new <= std::max(rd_old, 1e-12 * (1.0 + q.lpNorm<Eigen::Infinity>()))) {
          w = wp;
          z = zp;
          s = sp.cwiseMax(0.0);
          res.converged = true;
        }
      }
    }
  }

  res.x = w;
  res.s = s;
  res.z = z;
  return res;
}

QpSolution solve_qp(const QpProblem& prob, const QpOptions& opts) {
  const Eigen::Index n = prob.P.rows();
  if (prob.P.cols() != n || prob.q.size() != n) {
    throw ContractViolation("solve_qp: inconsistent P/q dimensions");
  }
  const Eigen::Index m_eq = prob.A.rows();
  const Eigen::Index m_in = prob.G.rows();
  if ((m_eq > 0 && prob.A.cols() != n) || prob.b.size() != m_eq) {
    throw ContractViolation("solve_qp: inconsistent A/b dimensions");
  }
  if ((m_in > 0 && prob.G.cols() != n) || prob.h.size() != m_in) {
    throw ContractViolation("solve_qp: inconsistent G/h dimensions");
  }

  QpSolution sol;

  // Eliminate equalities through a rank-revealing QR of A^T.
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd Z;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_at;
  if (m_eq > 0) {
    qr_at.compute(prob.A.transpose());
    qr_at.setThreshold(opts.rank_tol);
    const Eigen::Index rank = qr_at.rank();
    if (!prob.b.isZero(0.0)) {
      x0 = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(prob.A)
               .solve(prob.b);
      const Eigen::VectorXd resid = prob.A * x0 - prob.b;
      Eigen::Index worst = 0;
      const double viol = resid.cwiseAbs().maxCoeff(&worst);
      if (viol > 1e-8 * (1.0 + prob.b.lpNorm<Eigen::Infinity>())) {
        throw InfeasibleProblem("solve_qp: inconsistent equality constraints",
                                static_cast<int>(worst), viol);
      }
    }
    if (rank < n) {
      const Eigen::MatrixXd Q = qr_at.householderQ();
      Z = Q.rightCols(n - rank);
    } else {
      Z.resize(n, 0);
    }
  } else {
    Z = Eigen::MatrixXd::Identity(n, n);
  }

  const Eigen::Index nz = Z.cols();

  if (nz == 0) {
    sol.x = x0;
    sol.z = Eigen::VectorXd::Zero(m_in);
    sol.s = m_in > 0 ? (prob.h - prob.G * x0).eval() : Eigen::VectorXd();
    if (m_in > 0) {
      Eigen::Index worst = 0;
      const double viol = (-sol.s).maxCoeff(&worst);
      if (viol > 1e-8 * (1.0 + prob.h.lpNorm<Eigen::Infinity>())) {
        throw InfeasibleProblem(
            "solve_qp: equality-determined point violates inequalities",
            static_cast<int>(worst), viol);
      }
    }
    sol.converged = true;
  } else {
    // Reduced data. Objective is rescaled to keep the IPM well conditioned.
    Eigen::MatrixXd Pz = Z.transpose() * prob.P * Z;
    Pz = 0.5 * (Pz + Pz.transpose()).eval();
    Eigen::VectorXd qz = Z.transpose() * (prob.P * x0 + prob.q);
    const double obj_scale =
        std::max({1.0, Pz.cwiseAbs().maxCoeff(), qz.lpNorm<Eigen::Infinity>()});
    Pz /= obj_scale;
    qz /= obj_scale;

    if (m_in == 0) {
      Eigen::MatrixXd Pr = Pz;
      Pr.diagonal().array() += 1e-13;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(Pr);
      if (ldlt.info() != Eigen::Success) {
        throw NumericError("solve_qp: singular reduced Hessian");
      }
      const Eigen::VectorXd w = ldlt.solve(-qz);
      sol.x = x0 + Z * w;
      sol.converged = true;
    } else {
      Eigen::MatrixXd Gz = prob.G * Z;
      Eigen::VectorXd hz = prob.h - prob.G * x0;
      // Row equilibration of the inequality block.
      Eigen::VectorXd row_scale(m_in);
      for (Eigen::Index i = 0; i < m_in; ++i) {
        row_scale(i) = 1.0 / std::max(1.0, Gz.row(i).lpNorm<Eigen::Infinity>());
      }
      Gz = row_scale.asDiagonal() * Gz;
      hz = row_scale.asDiagonal() * hz;

      const IpmResult ipm = solve_qp_inequality(Pz, qz, Gz, hz, opts);
      sol.x = x0 + Z * ipm.x;
      sol.z = obj_scale * row_scale.asDiagonal() * ipm.z;
      sol.iterations = ipm.iterations;
      sol.converged = ipm.converged;
    }
  }

  if (m_in > 0) {
    sol.s = prob.h - prob.G * sol.x;
    if (sol.z.size() == 0) sol.z = Eigen::VectorXd::Zero(m_in);
  } else {
    sol.s.resize(0);
    sol.z.resize(0);
  }

  // Equality multipliers from stationarity: A^T y = -(P x + q + G^T z).
  if (m_eq > 0) {
    Eigen::VectorXd rhs = -(prob.P * sol.x + prob.q);
    if (m_in > 0) rhs -= prob.G.transpose() * sol.z;
    sol.y = qr_at.solve(rhs);
  } else {
    sol.y.resize(0);
  }

  sol.objective = 0.5 * sol.x.dot(prob.P * sol.x) + prob.q.dot(sol.x);

  // Scaled KKT residual on the original data.
  {
    Eigen::VectorXd stat = prob.P * sol.x + prob.q;
    if (m_eq > 0) stat += prob.A.transpose() * sol.y;
    if (m_in > 0) stat += prob.G.transpose() * sol.z;
    double denom = std::max(
        {1.0, prob.q.lpNorm<Eigen::Infinity>(),
         (prob.P * sol.x).lpNorm<Eigen::Infinity>(),
         m_in > 0 ? (prob.G.transpose() * sol.z).lpNorm<Eigen::Infinity>() : 0.0,
         m_eq > 0 ? (prob.A.transpose() * sol.y).lpNorm<Eigen::Infinity>() : 0.0});
    double r = stat.lpNorm<Eigen::Infinity>() / denom;
    if (m_eq > 0) {
      const double eq = (prob.A * sol.x - prob.b).lpNorm<Eigen::Infinity>() /
                        (1.0 + prob.b.lpNorm<Eigen::Infinity>());
      r = std::max(r, eq);
    }
    if (m_in > 0) {
      const double pviol = std::max(0.0, (-sol.s).maxCoeff()) /
                           (1.0 + prob.h.lpNorm<Eigen::Infinity>());
      const double zviol = std::max(0.0, -sol.z.minCoeff());
      const double comp =
          sol.s.cwiseProduct(sol.z).cwiseAbs().maxCoeff() /
          std::max(1.0, std::abs(sol.objective));
      r = std::max({r, pviol, zviol, comp});
    }
    sol.kkt_residual = r;
  }

  return sol;
}

}  // namespace epicon
