#include "epicon/consensus.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "epicon/errors.hpp"
#include "epicon/qp.hpp"

namespace epicon {

namespace {

constexpr double kInnerKktTol = 1e-6;

Eigen::VectorXd linspace(double a, double b, int n) {
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) {
    g(i) = a + (b - a) * static_cast<double>(i) / (n - 1);
  }
  return g;
}

// diag(G, G) * v for stacked coefficient vectors.
Eigen::VectorXd gy_apply(const BlockGram& gram, const Eigen::VectorXd& v) {
  const Eigen::Index k = gram.G.rows();
  Eigen::VectorXd out(2 * k);
  out.head(k) = gram.G * v.head(k);
  out.tail(k) = gram.G * v.tail(k);
  return out;
}

double eps_for(double q_eff, double eps_irls) {
  return q_eff == 2.0 ? 0.0 : eps_irls;
}

// IRLS weight coefficients a_j = (q / 2J) (D_j^2 + eps)^(q/2 - 1); the
// weighted QP objective sum_j a_j D_j^2 then has the same gradient as the
// smoothed power objective at the expansion point, so its multipliers are the
// multipliers of the smoothed problem without further rescaling.
Eigen::VectorXd irls_weights(const CoefVector& c,
                             const std::vector<CoefVector>& cjs,
                             const BlockGram& gram, double q_eff, double eps) {
  const int J = static_cast<int>(cjs.size());
  Eigen::VectorXd a(J);
  for (int j = 0; j < J; ++j) {
    const double d2 = distance_squared(c, cjs[j], gram);
    a(j) = (q_eff / (2.0 * J)) * std::pow(d2 + eps, 0.5 * q_eff - 1.0);
  }
  return a;
}

CoefVector weighted_mean(const std::vector<CoefVector>& cjs,
                         const Eigen::VectorXd& a) {
  const int K = cjs[0].K();
  CoefVector m;
  m.cE = Eigen::VectorXd::Zero(K);
  m.cI = Eigen::VectorXd::Zero(K);
  const double s = a.sum();
  for (std::size_t j = 0; j < cjs.size(); ++j) {
    m.cE += (a(static_cast<Eigen::Index>(j)) / s) * cjs[j].cE;
    m.cI += (a(static_cast<Eigen::Index>(j)) / s) * cjs[j].cI;
  }
  return m;
}

}  // namespace

void ProblemSpec::validate() const {
  if (!(q > 0.0)) throw ContractViolation("ProblemSpec: q must be > 0");
  if (!(rho > 0.0)) throw ContractViolation("ProblemSpec: rho must be > 0");
  if (K < degree + 1) throw ContractViolation("ProblemSpec: K must be >= degree+1");
  if (M < 0) throw ContractViolation("ProblemSpec: M must be >= 0 (0 = auto)");
  if (!(sigma_bounds.lo > 0.0 && sigma_bounds.lo < sigma_bounds.hi)) {
    throw ContractViolation("ProblemSpec: need 0 < sigma_min < sigma_max");
  }
  if (!(gamma_bounds.lo > 0.0 && gamma_bounds.lo < gamma_bounds.hi)) {
    throw ContractViolation("ProblemSpec: need 0 < gamma_min < gamma_max");
  }
  if (delta_max < 0.0) throw ContractViolation("ProblemSpec: delta_max must be >= 0");
  if (!(eps_q > 0.0)) throw ContractViolation("ProblemSpec: eps_q must be > 0");
  if (eps_irls < 0.0) throw ContractViolation("ProblemSpec: eps_irls must be >= 0");
  if (!(N > 0.0) || !(T > 0.0)) throw ContractViolation("ProblemSpec: N, T must be > 0");
  if (!(tol_outer > 0.0) || max_outer < 1) {
    throw ContractViolation("ProblemSpec: invalid outer loop controls");
  }
}

double ProblemSpec::effective_q() const {
  return std::abs(q - 1.0) < 1e-12 ? 1.0 + eps_q : q;
}

int ProblemSpec::effective_M() const { return M > 0 ? M : K - 1; }

Eigen::VectorXd ProblemSpec::constraint_grid() const {
  return linspace(0.0, T, effective_M() + 1);
}

ConstraintSet constraint_matrices(const DesignMatrices& design, double sigma,
                                  double gamma, double N) {
  const Eigen::Index m = design.grid.size();
  const Eigen::Index K = design.B.cols();
  ConstraintSet cs;
  cs.grid_size = static_cast<int>(m);

  cs.A_eq.resize(m, 2 * K);
  cs.A_eq.leftCols(K) = -sigma * design.B;
  cs.A_eq.rightCols(K) = design.Bp + gamma * design.B;
  cs.b_eq = Eigen::VectorXd::Zero(m);

  cs.A_in = Eigen::MatrixXd::Zero(3 * m, 2 * K);
  cs.b_in = Eigen::VectorXd::Zero(3 * m);
  cs.A_in.block(0, 0, m, K) = -design.B;
  cs.A_in.block(m, K, m, K) = -design.B;
  cs.A_in.block(2 * m, 0, m, K) = design.B;
  cs.A_in.block(2 * m, K, m, K) = design.B + gamma * design.Phi;
  cs.b_in.tail(m).setConstant(N);
  return cs;
}

ConstraintSet init_constraints(const DesignMatrices& design, double N) {
  const Eigen::Index m = design.grid.size();
  const Eigen::Index K = design.B.cols();
  ConstraintSet cs;
  cs.grid_size = static_cast<int>(m);
  cs.A_eq.resize(0, 2 * K);
  cs.b_eq.resize(0);
  cs.A_in = Eigen::MatrixXd::Zero(3 * m, 2 * K);
  cs.b_in = Eigen::VectorXd::Zero(3 * m);
  cs.A_in.block(0, 0, m, K) = -design.B;
  cs.A_in.block(m, K, m, K) = -design.B;
  cs.A_in.block(2 * m, 0, m, K) = design.B;
  cs.A_in.block(2 * m, K, m, K) = design.B;
  cs.b_in.tail(m).setConstant(N);
  return cs;
}

InnerSolver::InnerSolver(const ConstraintSet& constraints, const BlockGram& gram)
    : cons_(&constraints), gram_(&gram) {
  const Eigen::Index n = constraints.A_in.cols();
  if (n != 2 * gram.K()) {
    throw ContractViolation("InnerSolver: constraint width does not match Gram");
  }

  if (constraints.A_eq.rows() > 0) {
    has_eq_ = true;
    qr_at_.compute(constraints.A_eq.transpose());
    qr_at_.setThreshold(1e-9);
    const Eigen::Index rank = qr_at_.rank();
    const Eigen::MatrixXd Q = qr_at_.householderQ();
    Z_ = Q.rightCols(n - rank);
  } else {
    Z_ = Eigen::MatrixXd::Identity(n, n);
  }

  const Eigen::Index k = gram.K();
  Eigen::MatrixXd GYZ(n, Z_.cols());
  GYZ.topRows(k) = gram.G * Z_.topRows(k);
  GYZ.bottomRows(k) = gram.G * Z_.bottomRows(k);
  ZtGY_ = GYZ.transpose();
  Gred_ = Z_.transpose() * GYZ;
  Gred_ = 0.5 * (Gred_ + Gred_.transpose()).eval();

  Gz_ = constraints.A_in * Z_;
  row_scale_.resize(Gz_.rows());
  for (Eigen::Index i = 0; i < Gz_.rows(); ++i) {
    row_scale_(i) = 1.0 / std::max(1.0, Gz_.row(i).lpNorm<Eigen::Infinity>());
  }
  Gz_ = row_scale_.asDiagonal() * Gz_;
  hz_ = row_scale_.asDiagonal() * constraints.b_in;
}

InnerSolver::WeightedResult InnerSolver::solve_weighted(const CoefVector& c_w,
                                                        double weight_sum) const {
  WeightedResult res;
  const Eigen::Index nz = Z_.cols();
  const Eigen::VectorXd cw = c_w.stacked();

  if (nz == 0) {
    // b_eq = 0 and a trivial null space: the origin is the only feasible point.
    res.c = CoefVector::from_stacked(Eigen::VectorXd::Zero(2 * gram_->K()));
    res.z = Eigen::VectorXd::Zero(cons_->A_in.rows());
    res.converged = true;
  } else if (Gz_.rows() == 0) {
    Eigen::MatrixXd P = Gred_;
    P.diagonal().array() += 1e-13 * (1.0 + Gred_.trace());
    res.c = CoefVector::from_stacked(Z_ * P.llt().solve(ZtGY_ * cw));
    res.z = Eigen::VectorXd::Zero(0);
    res.converged = true;
  } else {
    Eigen::MatrixXd P = 2.0 * weight_sum * Gred_;
    Eigen::VectorXd q = -2.0 * weight_sum * (ZtGY_ * cw);
    const double obj_scale =
        std::max({1.0, P.cwiseAbs().maxCoeff(), q.lpNorm<Eigen::Infinity>()});
    P /= obj_scale;
    q /= obj_scale;

    QpOptions opts;
    opts.tol = 1e-9;
    opts.max_iter = 100;
    const IpmResult ipm = solve_qp_inequality(P, q, Gz_, hz_, opts);

    res.c = CoefVector::from_stacked(Z_ * ipm.x);
    res.z = obj_scale * row_scale_.asDiagonal() * ipm.z;
    res.ipm_iterations = ipm.iterations;
    res.converged = ipm.converged;
  }

  if (has_eq_) {
    // Stationarity: A_eq^T y = -(grad_obj + A_in^T z). Any solution gives the
    // same envelope products; the QR basic solution is returned.
    Eigen::VectorXd rhs =
        -2.0 * weight_sum * gy_apply(*gram_, res.c.stacked() - cw) -
        cons_->A_in.transpose() * res.z;
    res.y = qr_at_.solve(rhs);
  } else {
    res.y.resize(0);
  }
  return res;
}

namespace {

double smoothed_objective(const CoefVector& c, const std::vector<CoefVector>& cjs,
                          const BlockGram& gram, double q_eff, double eps) {
  const double e = eps_for(q_eff, eps);
  double acc = 0.0;
  for (const auto& cj : cjs) {
    acc += std::pow(distance_squared(c, cj, gram) + e, 0.5 * q_eff);
  }
  return acc / static_cast<double>(cjs.size());
}

double raw_objective(const CoefVector& c, const std::vector<CoefVector>& cjs,
                     const BlockGram& gram, double q_eff) {
  double acc = 0.0;
  for (const auto& cj : cjs) {
    acc += std::pow(distance(c, cj, gram), q_eff);
  }
  return acc / static_cast<double>(cjs.size());
}

InnerSolution package_inner(const InnerSolver& solver,
                            const InnerSolver::WeightedResult& last,
                            const std::vector<CoefVector>& cjs,
                            const BlockGram& gram, double q_eff, double eps,
                            int irls_iters, int ipm_total, bool irls_converged) {
  const ConstraintSet& cons = solver.constraints();
  const Eigen::Index m = cons.grid_size;

  InnerSolution out;
  out.c = last.c;
  out.nu = last.y;
  out.lambda_E = last.z.segment(0, m);
  out.lambda_I = last.z.segment(m, m);
  out.lambda_pop = last.z.segment(2 * m, m);
  out.objective = smoothed_objective(last.c, cjs, gram, q_eff, eps);
  out.objective_raw = raw_objective(last.c, cjs, gram, q_eff);
  out.irls_iterations = irls_iters;
  out.ipm_iterations = ipm_total;
  out.converged = irls_converged && last.converged;

  // Scaled KKT residual of the smoothed problem at the returned pair.
  const Eigen::VectorXd a = irls_weights(last.c, cjs, gram, q_eff, eps_for(q_eff, eps));
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(2 * gram.K());
  for (std::size_t j = 0; j < cjs.size(); ++j) {
    grad += 2.0 * a(static_cast<Eigen::Index>(j)) *
            gy_apply(gram, last.c.stacked() - cjs[j].stacked());
  }
  Eigen::VectorXd stat = grad + cons.A_in.transpose() * last.z;
  if (cons.A_eq.rows() > 0) stat += cons.A_eq.transpose() * last.y;
  const double denom = std::max(
      {1.0, grad.lpNorm<Eigen::Infinity>(),
       (cons.A_in.transpose() * last.z).lpNorm<Eigen::Infinity>(),
       cons.A_eq.rows() > 0
           ? (cons.A_eq.transpose() * last.y).lpNorm<Eigen::Infinity>()
           : 0.0});
  double kkt = stat.lpNorm<Eigen::Infinity>() / denom;

  if (cons.A_eq.rows() > 0) {
    const Eigen::VectorXd x = last.c.stacked();
    const Eigen::VectorXd eq = cons.A_eq * x;
    double eq_scale = 1.0;
    const Eigen::Index K = gram.K();
    eq_scale = std::max(eq_scale, (cons.A_eq.leftCols(K) * x.head(K)).lpNorm<Eigen::Infinity>());
    eq_scale = std::max(eq_scale, (cons.A_eq.rightCols(K) * x.tail(K)).lpNorm<Eigen::Infinity>());
    kkt = std::max(kkt, eq.lpNorm<Eigen::Infinity>() / eq_scale);
  }
  if (cons.A_in.rows() > 0) {
    const Eigen::VectorXd slack = cons.b_in - cons.A_in * last.c.stacked();
    const double pviol = std::max(0.0, (-slack).maxCoeff()) /
                         (1.0 + cons.b_in.lpNorm<Eigen::Infinity>());
    const double comp = slack.cwiseProduct(last.z).cwiseAbs().maxCoeff() /
                        std::max(1.0, std::abs(out.objective));
    kkt = std::max({kkt, pviol, comp});
  }
  out.kkt_residual = kkt;
  return out;
}

// The q = 2 path must meet the KKT tolerance outright. The IRLS path stops on
// its coefficient-change criterion or the iteration cap; near a data point the
// weights are stiff and the smoothed-stationarity residual can settle above
// kInnerKktTol even though the objective has long stopped moving. Monotone
// descent is enforced separately (SolverStall), so a looser ceiling applies.
void check_inner(const InnerSolution& inner, const ConstraintSet& cons,
                 double q_eff) {
  const bool ok = q_eff == 2.0 ? inner.kkt_residual <= kInnerKktTol
                               : inner.kkt_residual <= 1e-3;
  if (!ok) {
    Eigen::Index worst = 0;
    double worst_viol = 0.0;
    if (cons.A_in.rows() > 0) {
      const Eigen::VectorXd viol = cons.A_in * inner.c.stacked() - cons.b_in;
      worst_viol = viol.maxCoeff(&worst);
    }
    throw InfeasibleProblem(
        "inner solve stalled: scaled KKT residual " +
            std::to_string(inner.kkt_residual),
        static_cast<int>(worst), std::max(0.0, worst_viol));
  }
}

InnerSolution run_irls(const std::vector<CoefVector>& cjs, const BlockGram& gram,
                       const InnerSolver& solver, double q_eff, double eps_irls,
                       const CoefVector* warm) {
  const int J = static_cast<int>(cjs.size());
  if (J < 1) throw ContractViolation("inner solve: need at least one curve");
  const double eps = eps_for(q_eff, eps_irls);

  int ipm_total = 0;
  int irls_iters = 0;
  InnerSolver::WeightedResult last;
  CoefVector c;
  // The warm start only seeds the weights; it belongs to another constraint
  // set, so its objective value is not a valid descent baseline.
  double f_prev = std::numeric_limits<double>::infinity();

  if (q_eff == 2.0 || warm == nullptr) {
    // Unweighted step: exact for q = 2, otherwise the IRLS starting point.
    Eigen::VectorXd a0 = Eigen::VectorXd::Constant(J, 1.0 / J);
    last = solver.solve_weighted(weighted_mean(cjs, a0), 1.0);
    ipm_total += last.ipm_iterations;
    irls_iters = 1;
    c = last.c;
    f_prev = smoothed_objective(c, cjs, gram, q_eff, eps);
    if (q_eff == 2.0) {
      return package_inner(solver, last, cjs, gram, q_eff, eps, irls_iters,
                           ipm_total, true);
    }
  } else {
    c = *warm;
  }

  bool converged = false;
  for (int s = 0; s < 200; ++s) {
    const Eigen::VectorXd a = irls_weights(c, cjs, gram, q_eff, eps);
    last = solver.solve_weighted(weighted_mean(cjs, a), a.sum());
    ipm_total += last.ipm_iterations;
    ++irls_iters;

    const double f_new = smoothed_objective(last.c, cjs, gram, q_eff, eps);
    if (f_new > f_prev + 1e-8 * std::max(1.0, std::abs(f_prev))) {
      throw SolverStall("inner IRLS: smoothed objective increased from " +
                        std::to_string(f_prev) + " to " + std::to_string(f_new));
    }
    const double dc = distance(last.c, c, gram);
    const double cn = distance(c, CoefVector{Eigen::VectorXd::Zero(gram.K()),
                                             Eigen::VectorXd::Zero(gram.K())},
                               gram);
    c = last.c;
    f_prev = f_new;
    if (dc <= 1e-8 * (1.0 + cn)) {
      converged = true;
      break;
    }
  }
  // Refresh the multipliers at the final weights so the reported pair is
  // self-consistent for the envelope gradients.
  {
    const Eigen::VectorXd a = irls_weights(c, cjs, gram, q_eff, eps);
    last = solver.solve_weighted(weighted_mean(cjs, a), a.sum());
    ipm_total += last.ipm_iterations;
  }
  return package_inner(solver, last, cjs, gram, q_eff, eps, irls_iters,
                       ipm_total, converged);
}

}  // namespace

InnerSolution inner_solve_q2(const std::vector<CoefVector>& cjs,
                             const BlockGram& gram, const ConstraintSet& cons) {
  InnerSolver solver(cons, gram);
  InnerSolution inner = run_irls(cjs, gram, solver, 2.0, 0.0, nullptr);
  check_inner(inner, cons, 2.0);
  return inner;
}

InnerSolution inner_solve_irls(double q, const std::vector<CoefVector>& cjs,
                               const BlockGram& gram, const ConstraintSet& cons,
                               double eps_irls, double eps_q,
                               const CoefVector* warm) {
  if (!(q > 0.0)) throw ContractViolation("inner_solve_irls: q must be > 0");
  const double q_eff = std::abs(q - 1.0) < 1e-12 ? 1.0 + eps_q : q;
  const double eps = eps_irls > 0.0 ? eps_irls : default_eps_irls(cjs, gram);
  InnerSolver solver(cons, gram);
  InnerSolution inner = run_irls(cjs, gram, solver, q_eff, eps, warm);
  check_inner(inner, cons, q_eff);
  return inner;
}

double default_eps_irls(const std::vector<CoefVector>& cjs, const BlockGram& gram) {
  std::vector<double> d2;
  for (std::size_t i = 0; i < cjs.size(); ++i) {
    for (std::size_t j = i + 1; j < cjs.size(); ++j) {
      d2.push_back(distance_squared(cjs[i], cjs[j], gram));
    }
  }
  if (!d2.empty()) {
    std::sort(d2.begin(), d2.end());
    const double med = d2[d2.size() / 2];
    if (med > 0.0) return 1e-8 * med;
  }
  double acc = 0.0;
  const CoefVector zero{Eigen::VectorXd::Zero(gram.K()),
                        Eigen::VectorXd::Zero(gram.K())};
  for (const auto& cj : cjs) acc += distance_squared(cj, zero, gram);
  return 1e-8 * std::max(1.0, acc / std::max<std::size_t>(cjs.size(), 1));
}

double gamma_upper_bound(const CoefVector& c, const DesignMatrices& design,
                         double N) {
  const Eigen::VectorXd E = design.B * c.cE;
  const Eigen::VectorXd I = design.B * c.cI;
  const Eigen::VectorXd intI = design.Phi * c.cI;
  double bound = std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < design.grid.size(); ++m) {
    if (intI(m) > 0.0) {
      bound = std::min(bound, (N - E(m) - I(m)) / intI(m));
    }
  }
  return bound;
}

ProfilePoint profile_value_and_gradient(double sigma, double gamma,
                                        const std::vector<CoefVector>& cjs,
                                        const BlockGram& gram,
                                        const DesignMatrices& design,
                                        const ProblemSpec& spec,
                                        double eps_irls,
                                        const CoefVector* warm) {
  const ConstraintSet cons = constraint_matrices(design, sigma, gamma, spec.N);
  InnerSolver solver(cons, gram);
  const double q_eff = spec.effective_q();
  InnerSolution inner = run_irls(cjs, gram, solver, q_eff, eps_irls, warm);
  check_inner(inner, cons, q_eff);

  ProfilePoint pt;
  pt.value = inner.objective;
  const Eigen::VectorXd BE = design.B * inner.c.cE;
  const Eigen::VectorXd BI = design.B * inner.c.cI;
  const Eigen::VectorXd PhiI = design.Phi * inner.c.cI;
  pt.d_sigma = -inner.nu.dot(BE);
  pt.d_gamma = inner.nu.dot(BI) + inner.lambda_pop.dot(PhiI);
  pt.inner = std::move(inner);
  return pt;
}

namespace {

struct ProfileEvaluator {
  ProfileEvaluator(const std::vector<CoefVector>& cjs_, const BlockGram& gram_,
                   const DesignMatrices& design_, const ProblemSpec& spec_,
                   double eps_irls_)
      : cjs(cjs_), gram(gram_), design(design_), spec(spec_), eps_irls(eps_irls_) {}

  const std::vector<CoefVector>& cjs;
  const BlockGram& gram;
  const DesignMatrices& design;
  const ProblemSpec& spec;
  double eps_irls;
  CoefVector warm;
  bool has_warm = false;
  std::map<std::pair<double, double>, ProfilePoint> cache;
  int evaluations = 0;

  const ProfilePoint& eval(double sigma, double gamma) {
    const auto key = std::make_pair(sigma, gamma);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const ProfilePoint pt = profile_value_and_gradient(
        sigma, gamma, cjs, gram, design, spec, eps_irls,
        has_warm ? &warm : nullptr);
    warm = pt.inner.c;
    has_warm = true;
    ++evaluations;
    return cache.emplace(key, pt).first->second;
  }
};

struct Box2 {
  double lo[2], hi[2];
  void clip(double* x) const {
    x[0] = std::min(std::max(x[0], lo[0]), hi[0]);
    x[1] = std::min(std::max(x[1], lo[1]), hi[1]);
  }
  double width(int i) const { return hi[i] - lo[i]; }
};

// Gradient components pointing out of the box at active bounds are dropped.
void projected_gradient(const double* x, const double* g, const Box2& box,
                        double* pg) {
  for (int i = 0; i < 2; ++i) {
    pg[i] = g[i];
    if (x[i] <= box.lo[i] && g[i] > 0.0) pg[i] = 0.0;
    if (x[i] >= box.hi[i] && g[i] < 0.0) pg[i] = 0.0;
  }
}

std::pair<double, double> nelder_mead(ProfileEvaluator& ev, const Box2& box,
                                      double x0, double y0) {
  struct Vertex {
    double x[2];
    double f;
  };
  auto feval = [&](double a, double b) { return ev.eval(a, b).value; };
  auto make = [&](double a, double b) {
    double p[2] = {a, b};
    box.clip(p);
    return Vertex{{p[0], p[1]}, feval(p[0], p[1])};
  };

  std::array<Vertex, 3> v = {make(x0, y0),
                             make(x0 + 0.1 * box.width(0), y0),
                             make(x0, y0 + 0.1 * box.width(1))};
  for (int iter = 0; iter < 200; ++iter) {
    std::sort(v.begin(), v.end(),
              [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
    const double spread = std::abs(v[2].f - v[0].f);
    const double diam = std::max(std::abs(v[2].x[0] - v[0].x[0]),
                                 std::abs(v[2].x[1] - v[0].x[1]));
    if (spread <= 1e-10 * std::max(1.0, std::abs(v[0].f)) &&
        diam <= 1e-6 * std::min(box.width(0), box.width(1))) {
      break;
    }
    const double cx = 0.5 * (v[0].x[0] + v[1].x[0]);
    const double cy = 0.5 * (v[0].x[1] + v[1].x[1]);
    const Vertex refl = make(cx + (cx - v[2].x[0]), cy + (cy - v[2].x[1]));
    if (refl.f < v[0].f) {
      const Vertex exp =
          make(cx + 2.0 * (cx - v[2].x[0]), cy + 2.0 * (cy - v[2].x[1]));
      v[2] = exp.f < refl.f ? exp : refl;
    } else if (refl.f < v[1].f) {
      v[2] = refl;
    } else {
      const Vertex con =
          make(cx + 0.5 * (v[2].x[0] - cx), cy + 0.5 * (v[2].x[1] - cy));
      if (con.f < v[2].f) {
        v[2] = con;
      } else {
        v[1] = make(v[0].x[0] + 0.5 * (v[1].x[0] - v[0].x[0]),
                    v[0].x[1] + 0.5 * (v[1].x[1] - v[0].x[1]));
        v[2] = make(v[0].x[0] + 0.5 * (v[2].x[0] - v[0].x[0]),
                    v[0].x[1] + 0.5 * (v[2].x[1] - v[0].x[1]));
      }
    }
  }
  std::sort(v.begin(), v.end(),
            [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
  return {v[0].x[0], v[0].x[1]};
}

}  // namespace

ProfileResult optimize_profile(const std::vector<CoefVector>& cjs,
                               const BlockGram& gram,
                               const DesignMatrices& design,
                               const ProblemSpec& spec,
                               std::pair<double, double> init,
                               double eps_irls,
                               const CoefVector* warm) {
  ProfileEvaluator ev{cjs, gram, design, spec, eps_irls};
  if (warm != nullptr) {
    ev.warm = *warm;
    ev.has_warm = true;
  }

  Box2 box{{spec.sigma_bounds.lo, spec.gamma_bounds.lo},
           {spec.sigma_bounds.hi, spec.gamma_bounds.hi}};
  double x[2] = {init.first, init.second};
  box.clip(x);

  // Feasibility-implied cap on gamma, taken at a feasible reference point.
  {
    const ProfilePoint& p0 = ev.eval(x[0], x[1]);
    const double cap = gamma_upper_bound(p0.inner.c, design, spec.N);
    if (cap < box.hi[1]) box.hi[1] = std::max(cap, box.lo[1]);
    if (box.hi[1] < box.lo[1]) {
      throw InfeasibleProblem("optimize_profile: empty gamma range", -1, 0.0);
    }
    box.clip(x);
  }

  // Envelope gradients against central differences; a large mismatch signals
  // an active-set kink, in which case the derivative-free path is used.
  bool fallback = false;
  {
    const ProfilePoint& p0 = ev.eval(x[0], x[1]);
    const double vscale = std::max(1.0, std::abs(p0.value));
    for (int i = 0; i < 2 && !fallback; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
      xp[i] += h;
      xm[i] -= h;
      if (xp[i] > box.hi[i] || xm[i] < box.lo[i]) continue;
      const double fd =
          (ev.eval(xp[0], xp[1]).value - ev.eval(xm[0], xm[1]).value) / (2.0 * h);
      const double env = i == 0 ? p0.d_sigma : p0.d_gamma;
      const double denom = std::max(std::abs(fd), std::abs(env));
      if (denom <= 1e-10 * vscale) continue;
      if (std::abs(fd - env) / denom > 1e-1) fallback = true;
    }
  }

  auto best_key = [&]() {
    auto it = std::min_element(ev.cache.begin(), ev.cache.end(),
                               [](const auto& a, const auto& b) {
                                 return a.second.value < b.second.value;
                               });
    return it->first;
  };

  if (!fallback) {
    // Projected BFGS with Armijo backtracking.
    Eigen::Matrix2d H = Eigen::Matrix2d::Identity();
    {
      const ProfilePoint& p0 = ev.eval(x[0], x[1]);
      const double gnorm = std::hypot(p0.d_sigma, p0.d_gamma);
      if (gnorm > 0.0) {
        H *= 0.1 * std::min(box.width(0), box.width(1)) / gnorm;
      }
    }
    double g[2];
    {
      const ProfilePoint& p = ev.eval(x[0], x[1]);
      g[0] = p.d_sigma;
      g[1] = p.d_gamma;
    }
    int bad_steps = 0;
    for (int iter = 0; iter < 100; ++iter) {
      const double f0 = ev.eval(x[0], x[1]).value;
      double pg[2];
      projected_gradient(x, g, box, pg);
      const double crit = std::max(std::abs(pg[0]) * box.width(0),
                                   std::abs(pg[1]) * box.width(1));
      if (crit <= 1e-6 * std::max(1.0, std::abs(f0))) break;

      Eigen::Vector2d d = -(H * Eigen::Vector2d(g[0], g[1]));
      if (d(0) * g[0] + d(1) * g[1] >= 0.0) {
        d = -Eigen::Vector2d(pg[0], pg[1]);
        const double n = d.norm();
        if (n > 0.0) d *= 0.1 * std::min(box.width(0), box.width(1)) / n;
      }

      double alpha = 1.0;
      bool accepted = false;
      double xn[2];
      for (int ls = 0; ls < 30; ++ls) {
        xn[0] = x[0] + alpha * d(0);
        xn[1] = x[1] + alpha * d(1);
        box.clip(xn);
        const double pred = g[0] * (xn[0] - x[0]) + g[1] * (xn[1] - x[1]);
        if (xn[0] == x[0] && xn[1] == x[1]) break;
        const double fn = ev.eval(xn[0], xn[1]).value;
        if (fn <= f0 + 1e-4 * pred || (pred >= 0.0 && fn < f0)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        if (++bad_steps >= 2) break;
        H = Eigen::Matrix2d::Identity() * H.trace() * 0.05;
        continue;
      }
      bad_steps = 0;

      const ProfilePoint& pn = ev.eval(xn[0], xn[1]);
      const Eigen::Vector2d s(xn[0] - x[0], xn[1] - x[1]);
      const Eigen::Vector2d yv(pn.d_sigma - g[0], pn.d_gamma - g[1]);
      const double sy = s.dot(yv);
      if (sy > 1e-12 * s.norm() * yv.norm()) {
        // BFGS update of the inverse Hessian.
        const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
        const Eigen::Matrix2d V = I - (s * yv.transpose()) / sy;
        H = V * H * V.transpose() + (s * s.transpose()) / sy;
      }
      x[0] = xn[0];
      x[1] = xn[1];
      g[0] = pn.d_sigma;
      g[1] = pn.d_gamma;
    }
  } else {
    const auto nm = nelder_mead(ev, box, x[0], x[1]);
    x[0] = nm.first;
    x[1] = nm.second;
  }

  // Return the best cached point; line searches may have probed better ones.
  const auto bk = best_key();
  ProfileResult out;
  out.sigma = bk.first;
  out.gamma = bk.second;
  out.inner = ev.cache.at(bk).inner;
  out.evaluations = ev.evaluations;
  out.used_fallback = fallback;
  return out;
}

InitSolution init_solution(const std::vector<CoefVector>& cjs,
                           const BlockGram& gram, const DesignMatrices& design,
                           const ProblemSpec& spec, double eps_irls) {
  const ConstraintSet cons = init_constraints(design, spec.N);
  InnerSolver solver(cons, gram);
  InnerSolution inner =
      run_irls(cjs, gram, solver, spec.effective_q(), eps_irls, nullptr);

  InitSolution out;
  out.c = inner.c;

  const Eigen::VectorXd u = design.B * out.c.cE;   // E values
  const Eigen::VectorXd v = design.B * out.c.cI;   // I values
  const Eigen::VectorXd w = design.Bp * out.c.cI;  // I' values
  const double suu = u.squaredNorm(), svv = v.squaredNorm(), suv = u.dot(v);
  const double suw = u.dot(w), svw = v.dot(w);
  const double det = suu * svv - suv * suv;
  if (det <= 1e-12 * std::max(1.0, suu * svv)) {
    out.sigma = spec.sigma_bounds.mid();
    out.gamma = spec.gamma_bounds.mid();
    out.ls_fallback = true;
    return out;
  }
  // Normal equations of min || w - sigma u + gamma v ||^2.
  const double sigma = (svv * suw - suv * svw) / det;
  const double gamma = (suv * suw - suu * svw) / det;
  out.sigma = spec.sigma_bounds.clip(sigma);
  out.gamma = spec.gamma_bounds.clip(gamma);
  return out;
}

namespace {

double clip_to(double v, double m) { return std::min(std::max(v, -m), m); }

// Root of mu |-> sum_j clip(raw_j - mu, +-dmax); monotone nonincreasing.
double centering_mu(const std::vector<double>& raw, double dmax) {
  double lo = *std::min_element(raw.begin(), raw.end()) - dmax - 1.0;
  double hi = *std::max_element(raw.begin(), raw.end()) + dmax + 1.0;
  auto f = [&](double mu) {
    double s = 0.0;
    for (double r : raw) s += clip_to(r - mu, dmax);
    return s;
  };
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Spreads any residual sum over the unclipped entries.
void polish_sum_zero(std::vector<double>& d, double dmax) {
  double s = 0.0;
  for (double v : d) s += v;
  if (s == 0.0) return;
  std::vector<std::size_t> free_idx;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (std::abs(d[j]) < dmax) free_idx.push_back(j);
  }
  if (free_idx.empty()) return;
  const double adj = s / static_cast<double>(free_idx.size());
  for (std::size_t j : free_idx) d[j] = clip_to(d[j] - adj, dmax);
}

}  // namespace

std::vector<double> center_shifts(const std::vector<double>& raw, double delta_max) {
  if (raw.empty()) throw ContractViolation("center_shifts: empty input");
  if (delta_max == 0.0) return std::vector<double>(raw.size(), 0.0);
  const double mu = centering_mu(raw, delta_max);
  std::vector<double> d(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) d[j] = clip_to(raw[j] - mu, delta_max);
  polish_sum_zero(d, delta_max);
  return d;
}

std::vector<double> init_shifts(const std::vector<SampledTrajectory>& trajs,
                                double delta_max) {
  if (trajs.empty()) throw ContractViolation("init_shifts: need J >= 1");
  const int J = static_cast<int>(trajs.size());
  if (delta_max == 0.0) return std::vector<double>(J, 0.0);

  std::vector<double> peak(J);
  for (int j = 0; j < J; ++j) {
    const Eigen::VectorXd& I = trajs[j].column("I");
    Eigen::Index arg = 0;
    I.maxCoeff(&arg);  // first index on ties
    peak[j] = trajs[j].grid(arg);
  }
  const double mean_peak = std::accumulate(peak.begin(), peak.end(), 0.0) / J;

  std::vector<double> raw(J), d(J);
  for (int j = 0; j < J; ++j) raw[j] = peak[j] - mean_peak;

  for (int j = 0; j < J; ++j) d[j] = clip_to(raw[j], delta_max);
  const double mean_clipped = std::accumulate(d.begin(), d.end(), 0.0) / J;
  for (int j = 0; j < J; ++j) d[j] = clip_to(d[j] - mean_clipped, delta_max);

  double s = 0.0;
  for (double v : d) s += v;
  if (std::abs(s) > 1e-8 * std::max(1.0, delta_max)) {
    return center_shifts(raw, delta_max);
  }
  polish_sum_zero(d, delta_max);
  return d;
}

namespace {

// Brent minimization on [a, b] with absolute tolerance xtol; flat valleys
// resolve toward the lower endpoint.
template <typename F>
double brent_min(F f, double a, double b, double xtol) {
  constexpr double kGold = 0.3819660112501051;
  double x = a + kGold * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  double lo = a, hi = b;

  for (int iter = 0; iter < 200; ++iter) {
    const double m = 0.5 * (lo + hi);
    const double tol = xtol;
    if (std::abs(x - m) <= 2.0 * tol - 0.5 * (hi - lo)) break;
    double p = 0.0, q = 0.0, r = 0.0;
    bool golden = true;
    if (std::abs(e) > tol) {
      r = (x - w) * (fx - fv);
      q = (x - v) * (fx - fw);
      p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double e_old = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_old) && p > q * (lo - x) &&
          p < q * (hi - x)) {
        d = p / q;
        const double u = x + d;
        if (u - lo < 2.0 * tol || hi - u < 2.0 * tol) {
          d = x < m ? tol : -tol;
        }
        golden = false;
      }
    }
    if (golden) {
      e = (x < m ? hi : lo) - x;
      d = kGold * e;
    }
    const double u = x + (std::abs(d) >= tol ? d : (d > 0.0 ? tol : -tol));
    const double fu = f(u);
    if (fu <= fx) {
      if (u < x) {
        hi = x;
      } else {
        lo = x;
      }
      v = w;
      fv = fw;
      w = x;
      fw = fx;
      x = u;
      fx = fu;
    } else {
      if (u < x) {
        lo = u;
      } else {
        hi = u;
      }
      if (fu <= fw || w == x) {
        v = w;
        fv = fw;
        w = u;
        fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u;
        fv = fu;
      }
    }
  }

  // Endpoint comparison, lower endpoint first on ties.
  const double fa = f(a), fb = f(b);
  const double tie = 1e-12 * std::max({1.0, std::abs(fx), std::abs(fa), std::abs(fb)});
  if (fa <= fx + tie && fa <= fb + tie) return a;
  if (fx <= fb + tie) return x;
  return b;
}

}  // namespace

std::vector<double> update_shifts(const CoefVector& c_hat,
                                  const std::vector<SampledTrajectory>& trajs,
                                  const std::vector<CurveFitter>& fitters,
                                  const BlockGram& gram,
                                  const ProblemSpec& spec) {
  const int J = static_cast<int>(trajs.size());
  if (J < 1) throw ContractViolation("update_shifts: need J >= 1");
  if (spec.delta_max == 0.0) return std::vector<double>(J, 0.0);

  std::vector<double> raw(J);
  for (int j = 0; j < J; ++j) {
    auto objective = [&](double delta) {
      const CoefVector cj = shifted_coefficients(trajs[j], delta, fitters[j]);
      return distance_squared(c_hat, cj, gram);
    };
    raw[j] = brent_min(objective, -spec.delta_max, spec.delta_max, 1e-3);
  }
  return center_shifts(raw, spec.delta_max);
}

std::vector<double> update_shifts(const CoefVector& c_hat,
                                  const std::vector<SampledTrajectory>& trajs,
                                  const BasisSystem& basis,
                                  const BlockGram& gram,
                                  const ProblemSpec& spec) {
  std::vector<CurveFitter> fitters;
  fitters.reserve(trajs.size());
  for (const auto& traj : trajs) fitters.emplace_back(basis, traj.grid);
  return update_shifts(c_hat, trajs, fitters, gram, spec);
}

ConsensusSolution solve(const std::vector<SampledTrajectory>& trajs,
                        const ProblemSpec& spec) {
  const auto t_start = std::chrono::steady_clock::now();
  spec.validate();
  if (trajs.empty()) throw ContractViolation("solve: need J >= 1 trajectories");
  for (const auto& traj : trajs) {
    if (!traj.has_column("E") || !traj.has_column("I")) {
      throw ContractViolation("solve: trajectories need E and I columns");
    }
    if (traj.grid(0) < -1e-9 || traj.grid(traj.grid.size() - 1) > spec.T * (1 + 1e-12)) {
      throw ContractViolation("solve: trajectory grid outside [0, T]");
    }
  }
  const int J = static_cast<int>(trajs.size());
  const double q_eff = spec.effective_q();

  const BasisSystem basis = build_basis(spec.K, spec.degree, spec.T);
  const GramH1 gram1 = gram_h1(basis, spec.rho);
  const BlockGram gram = block_gram(gram1);
  const DesignMatrices design = design_matrices(basis, spec.constraint_grid());

  std::vector<CurveFitter> fitters;
  fitters.reserve(trajs.size());
  for (const auto& traj : trajs) fitters.emplace_back(basis, traj.grid);

  std::vector<double> delta = init_shifts(trajs, spec.delta_max);
  auto refit = [&](const std::vector<double>& shifts) {
    std::vector<CoefVector> cjs(J);
    for (int j = 0; j < J; ++j) {
      cjs[static_cast<std::size_t>(j)] =
          shifted_coefficients(trajs[static_cast<std::size_t>(j)],
                               shifts[static_cast<std::size_t>(j)],
                               fitters[static_cast<std::size_t>(j)]);
    }
    return cjs;
  };
  std::vector<CoefVector> cjs = refit(delta);

  const double eps_irls =
      spec.eps_irls > 0.0 ? spec.eps_irls : default_eps_irls(cjs, gram);

  const InitSolution init = init_solution(cjs, gram, design, spec, eps_irls);
  double sigma = init.sigma;
  double gamma = init.gamma;
  CoefVector warm = init.c;

  ConsensusSolution sol;
  sol.q_effective = q_eff;
  sol.eps_irls_used = eps_irls;

  int outer = 0;
  bool converged = false;
  for (; outer < spec.max_outer; ++outer) {
    const ProfileResult prof = optimize_profile(cjs, gram, design, spec,
                                                {sigma, gamma}, eps_irls, &warm);
    warm = prof.inner.c;
    const double f_profile = prof.inner.objective;

    std::vector<double> delta_cand =
        update_shifts(prof.inner.c, trajs, fitters, gram, spec);
    std::vector<CoefVector> cjs_cand = refit(delta_cand);
    const double f_shifted =
        smoothed_objective(prof.inner.c, cjs_cand, gram, q_eff, eps_irls);

    double f_end = f_profile;
    std::vector<double> delta_new = delta;
    // Projection onto the sum-zero set is not objective-aware; keep the
    // previous shifts whenever the centred candidate would go uphill.
    if (f_shifted <= f_profile + 1e-9 * std::max(1.0, std::abs(f_profile))) {
      delta_new = delta_cand;
      cjs = std::move(cjs_cand);
      f_end = f_shifted;
    }
    sol.objective_trace.push_back(f_end);

    double rel = std::max(std::abs(prof.sigma - sigma) / std::max(std::abs(sigma), 1e-12),
                          std::abs(prof.gamma - gamma) / std::max(std::abs(gamma), 1e-12));
    for (int j = 0; j < J; ++j) {
      rel = std::max(rel, std::abs(delta_new[j] - delta[j]) /
                              std::max(1.0, std::abs(delta[j])));
    }
    sigma = prof.sigma;
    gamma = prof.gamma;
    delta = std::move(delta_new);
    if (rel < spec.tol_outer) {
      converged = true;
      ++outer;
      break;
    }
  }

  // Final inner solve so the reported pair matches the final shifts.
  const ConstraintSet cons = constraint_matrices(design, sigma, gamma, spec.N);
  InnerSolver solver(cons, gram);
  InnerSolution inner = run_irls(cjs, gram, solver, q_eff, eps_irls, &warm);
  check_inner(inner, cons, q_eff);

  sol.c_hat = inner.c;
  sol.sigma_hat = sigma;
  sol.gamma_hat = gamma;
  sol.delta_hat = delta;
  sol.converged = converged;
  sol.outer_iterations = outer;

  const Eigen::VectorXd E = design.B * inner.c.cE;
  const Eigen::VectorXd I = design.B * inner.c.cI;
  const Eigen::VectorXd Ip = design.Bp * inner.c.cI;
  const Eigen::VectorXd intI = design.Phi * inner.c.cI;
  sol.feasibility.min_E = E.minCoeff();
  sol.feasibility.min_I = I.minCoeff();
  sol.feasibility.cap_slack = (spec.N - E.array() - I.array() - gamma * intI.array()).minCoeff();
  sol.feasibility.eq_residual =
      (Ip - sigma * E + gamma * I).lpNorm<Eigen::Infinity>();
  sol.feasibility.shift_sum = std::accumulate(delta.begin(), delta.end(), 0.0);
  sol.inner = std::move(inner);

  sol.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return sol;
}

}  // namespace epicon
