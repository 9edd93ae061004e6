#pragma once

#include <stdexcept>
#include <string>

namespace epicon {

/// Violated precondition or invalid argument.
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Step-size underflow during ODE integration; carries the failing time.
struct IntegrationError : std::runtime_error {
  IntegrationError(const std::string& msg, double t)
      : std::runtime_error(msg), t_fail(t) {}
  double t_fail;
};

/// Rank-deficient least-squares fit; carries the condition estimate.
struct IllPosedFit : std::runtime_error {
  IllPosedFit(const std::string& msg, double cond)
      : std::runtime_error(msg), condition(cond) {}
  double condition;
};

struct DegenerateBasis : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Infeasible constrained problem; carries the most violated row.
struct InfeasibleProblem : std::runtime_error {
  InfeasibleProblem(const std::string& msg, int row, double viol)
      : std::runtime_error(msg), worst_row(row), violation(viol) {}
  int worst_row = -1;
  double violation = 0.0;
};

struct SolverStall : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateEstimate : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace epicon
