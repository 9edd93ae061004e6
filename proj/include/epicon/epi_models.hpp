#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "epicon/rng.hpp"

namespace epicon {

enum class ModelVariant { SEIR, SEIUR, SEIQR, SEIRD };

/// 4 for SEIR, 5 for the extended variants.
int state_dimension(ModelVariant v);

/// Compartment names in state order, e.g. {"S","E","I","R"}.
std::vector<std::string> compartment_names(ModelVariant v);

const char* variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& name);

/// Rate parameters plus initial conditions for one SEIR-type model.
struct ModelParams {
  ModelVariant variant = ModelVariant::SEIR;
  double beta = 0.0;   // transmission rate, per day
  double sigma = 0.0;  // exposed -> infectious rate, per day
  double gamma = 0.0;  // removal rate, per day
  double f = 1.0;      // reported fraction (SEIUR) / recovered fraction (SEIRD)
  double nu = 0.0;     // infectious -> quarantined rate (SEIQR)
  double xi = 0.0;     // quarantined -> removed rate (SEIQR)
  double N = 0.0;      // total population
  double E0 = 0.0;
  double I0 = 0.0;
  double T = 0.0;      // horizon, days

  /// Throws ContractViolation on any violated invariant.
  void validate() const;

  /// (N-E0-I0, E0, I0, 0[, 0]) in the variant's state order.
  Eigen::VectorXd initial_state() const;
};

/// Right-hand side of the compartmental ODE system. Flow terms are computed
/// once and reused with opposite signs, so the components sum to zero up to
/// one rounding per compartment.
Eigen::VectorXd rhs(const ModelParams& params, const Eigen::VectorXd& state,
                    double t);

/// A trajectory evaluated on a time grid; at minimum E and I columns.
struct SampledTrajectory {
  Eigen::VectorXd grid;
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> columns;

  bool has_column(const std::string& name) const;
  const Eigen::VectorXd& column(const std::string& name) const;

  /// Checks grid monotonicity, column lengths, nonnegativity up to round-off
  /// and (when S,E,I,R are all present) conservation |sum - N| <= 1e-6 N.
  void validate(double N) const;
};

struct IntegrateOptions {
  double rtol = 1e-8;
  double atol = 1e-8;
};

/// Integrates the model with an embedded Dormand-Prince 4(5) scheme and
/// evaluates the dense output on `grid` (increasing, within [0, T]).
/// Negative round-off values are clamped to zero afterwards.
SampledTrajectory integrate(const ModelParams& params,
                            const Eigen::VectorXd& grid,
                            const IntegrateOptions& opts = {});

/// Asymmetric sampling rule matched to a reported CI: left/right standard
/// deviations around the point estimate, negative draws replaced by `floor`.
struct TwoPieceNormalSpec {
  double point_estimate = 0.0;
  double s_left = 1.0;
  double s_right = 1.0;
  double floor = 1e-4;

  static TwoPieceNormalSpec from_ci(double point, double lower, double upper,
                                    double floor = 1e-4);
  void validate() const;
};

double sample_two_piece_normal(const TwoPieceNormalSpec& spec, RngStream& rng);

struct RateParams {
  double sigma, gamma, beta;
};

/// sigma = 1/D_E, gamma = 1/D_I, beta = R0 * gamma.
RateParams params_from_quantities(double D_E, double D_I, double R0);

struct EnsembleSpec {
  TwoPieceNormalSpec D_E;
  TwoPieceNormalSpec D_I;
  TwoPieceNormalSpec R0;
  double N = 1e6;
  double E0 = 1.0;
  double I0 = 0.0;
  double T = 720.0;
  ModelVariant variant = ModelVariant::SEIR;
};

struct EnsembleMember {
  double D_E, D_I, R0;  // sampled epidemiological quantities
  RateParams rates;     // derived (sigma, gamma, beta)
};

struct Ensemble {
  std::vector<SampledTrajectory> trajectories;
  std::vector<EnsembleMember> members;
};

/// Draws J parameter sets (per-trajectory child streams of `rng`), derives
/// rates and integrates each model on `grid`. Deterministic given the seed.
Ensemble simulate_ensemble(int J, const EnsembleSpec& spec,
                           const Eigen::VectorXd& grid, const RngStream& rng);

}  // namespace epicon
