#include "epicon/epi_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "epicon/errors.hpp"

namespace epicon {

int state_dimension(ModelVariant v) {
  return v == ModelVariant::SEIR ? 4 : 5;
}

std::vector<std::string> compartment_names(ModelVariant v) {
  switch (v) {
    case ModelVariant::SEIR:
      return {"S", "E", "I", "R"};
    case ModelVariant::SEIUR:
      return {"S", "E", "I", "U", "R"};
    case ModelVariant::SEIQR:
      return {"S", "E", "I", "Q", "R"};
    case ModelVariant::SEIRD:
      return {"S", "E", "I", "R", "D"};
  }
  throw ContractViolation("unknown model variant");
}

const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::SEIR:
      return "SEIR";
    case ModelVariant::SEIUR:
      return "SEIUR";
    case ModelVariant::SEIQR:
      return "SEIQR";
    case ModelVariant::SEIRD:
      return "SEIRD";
  }
  throw ContractViolation("unknown model variant");
}

ModelVariant variant_from_name(const std::string& name) {
  if (name == "SEIR") return ModelVariant::SEIR;
  if (name == "SEIUR") return ModelVariant::SEIUR;
  if (name == "SEIQR") return ModelVariant::SEIQR;
  if (name == "SEIRD") return ModelVariant::SEIRD;
  throw ContractViolation("unknown model variant: " + name);
}

void ModelParams::validate() const {
  if (!(beta > 0.0) || !(sigma > 0.0) || !(gamma > 0.0)) {
    throw ContractViolation("ModelParams: beta, sigma, gamma must be > 0");
  }
  if (!(f >= 0.0 && f <= 1.0)) {
    throw ContractViolation("ModelParams: f must lie in [0,1]");
  }
  if (variant == ModelVariant::SEIQR && (!(nu > 0.0) || !(xi > 0.0))) {
    throw ContractViolation("ModelParams: SEIQR requires nu, xi > 0");
  }
  if (!(N - E0 - I0 > 0.0)) {
    throw ContractViolation("ModelParams: N - E0 - I0 must be > 0");
  }
  if (E0 < 0.0 || I0 < 0.0 || !(E0 + I0 > 0.0)) {
    throw ContractViolation("ModelParams: need E0, I0 >= 0 and E0 + I0 > 0");
  }
  if (!(T > 0.0)) {
    throw ContractViolation("ModelParams: T must be > 0");
  }
}

Eigen::VectorXd ModelParams::initial_state() const {
  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(state_dimension(variant));
  y0(0) = N - E0 - I0;
  y0(1) = E0;
  y0(2) = I0;
  return y0;
}

Eigen::VectorXd rhs(const ModelParams& p, const Eigen::VectorXd& y, double /*t*/) {
  const int dim = state_dimension(p.variant);
  if (y.size() != dim) {
    throw ContractViolation("rhs: state dimension does not match variant");
  }
  Eigen::VectorXd dy(dim);
  const double S = y(0), E = y(1), I = y(2);
  const double infection = p.beta * S * I / p.N;

  switch (p.variant) {
    case ModelVariant::SEIR: {
      const double latency = p.sigma * E;
      const double removal = p.gamma * I;
      dy(0) = -infection;
      dy(1) = infection - latency;
      dy(2) = latency - removal;
      dy(3) = removal;
      break;
    }
    case ModelVariant::SEIUR: {
      // E splits into reported I (rate f*sigma) and unreported U ((1-f)*sigma);
      // both are removed at rate gamma.
      const double U = y(3);
      const double to_I = p.f * p.sigma * E;
      const double to_U = (1.0 - p.f) * p.sigma * E;
      const double rem_I = p.gamma * I;
      const double rem_U = p.gamma * U;
      dy(0) = -infection;
      dy(1) = infection - to_I - to_U;
      dy(2) = to_I - rem_I;
      dy(3) = to_U - rem_U;
      dy(4) = rem_I + rem_U;
      break;
    }
    case ModelVariant::SEIQR: {
      const double Q = y(3);
      const double latency = p.sigma * E;
      const double removal = p.gamma * I;
      const double quarantine = p.nu * I;
      const double release = p.xi * Q;
      dy(0) = -infection;
      dy(1) = infection - latency;
      dy(2) = latency - removal - quarantine;
      dy(3) = quarantine - release;
      dy(4) = removal + release;
      break;
    }
    case ModelVariant::SEIRD: {
      const double latency = p.sigma * E;
      const double recovery = p.f * p.gamma * I;
      const double death = (1.0 - p.f) * p.gamma * I;
      dy(0) = -infection;
      dy(1) = infection - latency;
      dy(2) = latency - recovery - death;
      dy(3) = recovery;
      dy(4) = death;
      break;
    }
  }
  return dy;
}

bool SampledTrajectory::has_column(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

const Eigen::VectorXd& SampledTrajectory::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return columns[i];
  }
  throw ContractViolation("SampledTrajectory: no column named " + name);
}

void SampledTrajectory::validate(double N) const {
  if (names.size() != columns.size()) {
    throw ContractViolation("SampledTrajectory: names/columns size mismatch");
  }
  for (const auto& col : columns) {
    if (col.size() != grid.size()) {
      throw ContractViolation("SampledTrajectory: column length != grid length");
    }
  }
  for (Eigen::Index i = 1; i < grid.size(); ++i) {
    if (!(grid(i) > grid(i - 1))) {
      throw ContractViolation("SampledTrajectory: grid must be strictly increasing");
    }
  }
  const double tol_neg = 1e-9 * N;
  for (const auto& col : columns) {
    if ((col.array() < -tol_neg).any()) {
      throw ContractViolation("SampledTrajectory: negative value beyond round-off");
    }
  }
  if (has_column("S") && has_column("E") && has_column("I") && has_column("R")) {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(grid.size());
    for (const auto& col : columns) total += col;
    if (((total.array() - N).abs() > 1e-6 * N).any()) {
      throw ContractViolation("SampledTrajectory: conservation violated");
    }
  }
}

namespace {

// Dormand-Prince 5(4) tableau (FSAL).
constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187,
                 kA53 = 64448.0 / 6561, kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33,
                 kA63 = 46732.0 / 5247, kA64 = 49.0 / 176,
                 kA65 = -5103.0 / 18656;
constexpr double kA71 = 35.0 / 384, kA73 = 500.0 / 1113, kA74 = 125.0 / 192,
                 kA75 = -2187.0 / 6784, kA76 = 11.0 / 84;
// e = b5 - b4 (error weights).
constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                 kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;
// Dense-output weights for the 4th-order continuous extension.
constexpr double kD1 = -12715105075.0 / 11282082432.0;
constexpr double kD3 = 87487479700.0 / 32700410799.0;
constexpr double kD4 = -10690763975.0 / 1880347072.0;
constexpr double kD5 = 701980252875.0 / 199316789632.0;
constexpr double kD6 = -1453857185.0 / 822651844.0;
constexpr double kD7 = 69997945.0 / 29380423.0;

struct DenseStep {
  double t0, h;
  Eigen::VectorXd r1, r2, r3, r4, r5;

  Eigen::VectorXd eval(double t) const {
    const double theta = (t - t0) / h;
    const double theta1 = 1.0 - theta;
    return r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
  }
};

double error_norm(const Eigen::VectorXd& err, const Eigen::VectorXd& y0,
                  const Eigen::VectorXd& y1, double atol, double rtol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    const double r = err(i) / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

double initial_step(const ModelParams& p, const Eigen::VectorXd& y0,
                    const Eigen::VectorXd& f0, double atol, double rtol,
                    double t_end) {
  auto scaled_norm = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& ref) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double sc = atol + rtol * std::abs(ref(i));
      acc += (v(i) / sc) * (v(i) / sc);
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
  };
  const double d0 = scaled_norm(y0, y0);
  const double d1 = scaled_norm(f0, y0);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, t_end);
  const Eigen::VectorXd y1 = y0 + h0 * f0;
  const Eigen::VectorXd f1 = rhs(p, y1, h0);
  const double d2 = scaled_norm(f1 - f0, y0) / h0;
  double h1;
  if (std::max(d1, d2) <= 1e-15) {
    h1 = std::max(1e-6, h0 * 1e-3);
  } else {
    h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
  }
  return std::min({100.0 * h0, h1, t_end});
}

}  // namespace

SampledTrajectory integrate(const ModelParams& p, const Eigen::VectorXd& grid,
                            const IntegrateOptions& opts) {
  p.validate();
  if (grid.size() < 1) throw ContractViolation("integrate: empty grid");
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (grid(i) < 0.0 || grid(i) > p.T + 1e-12 * p.T) {
      throw ContractViolation("integrate: grid point outside [0, T]");
    }
    if (i > 0 && !(grid(i) > grid(i - 1))) {
      throw ContractViolation("integrate: grid must be strictly increasing");
    }
  }

  const int dim = state_dimension(p.variant);
  const double t_end = grid(grid.size() - 1);

  std::vector<Eigen::VectorXd> out(grid.size());
  Eigen::Index next_out = 0;

  Eigen::VectorXd y = p.initial_state();
  double t = 0.0;
  if (grid(0) == 0.0) out[next_out++] = y;

  Eigen::VectorXd k1 = rhs(p, y, t);
  double h = initial_step(p, y, k1, opts.atol, opts.rtol, std::max(t_end, 1e-12));

  Eigen::VectorXd k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim), ynew(dim);

  while (t < t_end && next_out < grid.size()) {
    h = std::min(h, t_end - t);
    if (h < 1e-14 * std::max(1.0, std::abs(t))) {
      throw IntegrationError("integrate: step size underflow", t);
    }

    k2 = rhs(p, y + h * (kA21 * k1), t + h / 5.0);
    k3 = rhs(p, y + h * (kA31 * k1 + kA32 * k2), t + 3.0 * h / 10.0);
    k4 = rhs(p, y + h * (kA41 * k1 + kA42 * k2 + kA43 * k3), t + 4.0 * h / 5.0);
    k5 = rhs(p, y + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4),
             t + 8.0 * h / 9.0);
    k6 = rhs(p, y + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5),
             t + h);
    ynew = y + h * (kA71 * k1 + kA73 * k3 + kA74 * k4 + kA75 * k5 + kA76 * k6);
    k7 = rhs(p, ynew, t + h);

    const Eigen::VectorXd err =
        h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);
    const double err_norm = error_norm(err, y, ynew, opts.atol, opts.rtol);

    if (err_norm <= 1.0) {
      DenseStep dense;
      dense.t0 = t;
      dense.h = h;
      const Eigen::VectorXd ydiff = ynew - y;
      const Eigen::VectorXd bspl = h * k1 - ydiff;
      dense.r1 = y;
      dense.r2 = ydiff;
      dense.r3 = bspl;
      dense.r4 = ydiff - h * k7 - bspl;
      dense.r5 = h * (kD1 * k1 + kD3 * k3 + kD4 * k4 + kD5 * k5 + kD6 * k6 + kD7 * k7);

      const double t_next = t + h;
      while (next_out < grid.size() && grid(next_out) <= t_next + 1e-12 * std::max(1.0, t_next)) {
        out[next_out] = (grid(next_out) >= t_next) ? ynew : dense.eval(grid(next_out));
        ++next_out;
      }

      t = t_next;
      y = ynew;
      k1 = k7;  // FSAL
      const double factor =
          (err_norm == 0.0) ? 10.0
                            : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 10.0);
      h *= factor;
    } else {
      h *= std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 1.0);
    }
  }

  SampledTrajectory traj;
  traj.grid = grid;
  traj.names = compartment_names(p.variant);
  traj.columns.assign(traj.names.size(), Eigen::VectorXd(grid.size()));
  for (Eigen::Index m = 0; m < grid.size(); ++m) {
    for (int c = 0; c < dim; ++c) {
      double v = out[m](c);
      if (v < 0.0) v = 0.0;  // integrator round-off
      traj.columns[static_cast<std::size_t>(c)](m) = v;
    }
  }
  traj.validate(p.N);
  return traj;
}

TwoPieceNormalSpec TwoPieceNormalSpec::from_ci(double point, double lower,
                                               double upper, double floor) {
  TwoPieceNormalSpec spec;
  spec.point_estimate = point;
  spec.s_left = (point - lower) / 1.96;
  spec.s_right = (upper - point) / 1.96;
  spec.floor = floor;
  spec.validate();
  return spec;
}

void TwoPieceNormalSpec::validate() const {
  if (!(s_left > 0.0) || !(s_right > 0.0)) {
    throw ContractViolation("TwoPieceNormalSpec: s_left, s_right must be > 0");
  }
  if (!(floor > 0.0)) {
    throw ContractViolation("TwoPieceNormalSpec: floor must be > 0");
  }
}

double sample_two_piece_normal(const TwoPieceNormalSpec& spec, RngStream& rng) {
  spec.validate();
  const double z = rng.next_normal();
  const double value =
      spec.point_estimate + (z < 0.0 ? spec.s_left : spec.s_right) * z;
  return value < 0.0 ? spec.floor : value;
}

RateParams params_from_quantities(double D_E, double D_I, double R0) {
  if (!(D_E > 0.0) || !(D_I > 0.0) || !(R0 > 0.0)) {
    throw ContractViolation("params_from_quantities: inputs must be > 0");
  }
  RateParams r;
  r.sigma = 1.0 / D_E;
  r.gamma = 1.0 / D_I;
  r.beta = R0 * r.gamma;
  return r;
}

Ensemble simulate_ensemble(int J, const EnsembleSpec& spec,
                           const Eigen::VectorXd& grid, const RngStream& rng) {
  if (J < 1) throw ContractViolation("simulate_ensemble: J must be >= 1");
  Ensemble ens;
  ens.trajectories.reserve(static_cast<std::size_t>(J));
  ens.members.reserve(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    RngStream stream = rng.child(static_cast<std::uint64_t>(j));
    EnsembleMember m;
    m.D_E = sample_two_piece_normal(spec.D_E, stream);
    m.D_I = sample_two_piece_normal(spec.D_I, stream);
    m.R0 = sample_two_piece_normal(spec.R0, stream);
    m.rates = params_from_quantities(m.D_E, m.D_I, m.R0);

    ModelParams p;
    p.variant = spec.variant;
    p.beta = m.rates.beta;
    p.sigma = m.rates.sigma;
    p.gamma = m.rates.gamma;
    p.N = spec.N;
    p.E0 = spec.E0;
    p.I0 = spec.I0;
    p.T = spec.T;
    try {
      ens.trajectories.push_back(integrate(p, grid));
    } catch (const IntegrationError& e) {
      throw IntegrationError(
          "simulate_ensemble: trajectory " + std::to_string(j) + ": " + e.what(),
          e.t_fail);
    }
    ens.members.push_back(m);
  }
  return ens;
}

}  // namespace epicon
