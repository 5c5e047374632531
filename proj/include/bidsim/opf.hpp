#pragma once

#include <optional>

#include <Eigen/Dense>

#include "bidsim/lp.hpp"
#include "bidsim/network.hpp"

namespace bidsim {

// Primal-dual solution of the quadratic dispatch program
//   min sum_n a_n x_n^2 + c_n x_n  s.t.  j1 z - j2 x + y = 0, j3 z <= zbar_c, x >= 0.
struct DispatchSolution {
  Eigen::VectorXd x;      // per generator; unique
  Eigen::VectorXd z;      // per line; possibly one of several optimal flows
  Eigen::VectorXd nu;     // per bus (balance multipliers, nodal prices)
  Eigen::VectorXd mu;     // per line bound, stacked (upper, lower); >= 0
  Eigen::VectorXd lambda; // per generator (x >= 0 multipliers); >= 0
  double objective = 0.0;
};

// First-order optimality residuals.  With bids absent the gradient is the
// true marginal cost 2 a x + c; with bids present it is the bid vector
// (the clearing program's stationarity).
struct KktReport {
  double stationarity = 0.0;       // max |grad - j2'nu - lambda|
  double flow_stationarity = 0.0;  // max |j1'nu + j3'mu|
  double flow_balance = 0.0;       // max |j1 z - j2 x + y|
  Eigen::VectorXd flow_balance_by_bus;
  double primal_bounds = 0.0;      // worst violation of x >= 0 and |z| <= limit
  double dual_feasibility = 0.0;   // worst negativity of lambda, mu
  double comp_slack_x = 0.0;       // |x . lambda| (max componentwise)
  double comp_slack_lines = 0.0;   // max |mu_j * slack_j|
  double max_residual() const;
  bool within(double tol) const { return max_residual() <= tol; }
};

// Solves the dispatch program.  The multiplier part of the result passes
// check_kkt at 1e-8.  start_policy only varies the initial feasible vertex;
// the dispatch x is unique regardless.  Throws InfeasibleError with the
// aggregate-cut certificate when the load cannot be served, SolverError
// (with an iteration log) on numerical failure.
DispatchSolution solve_dcopf(const NetworkCase& cse, const IsoPolicy& start_policy = {});

KktReport check_kkt(const NetworkCase& cse, const DispatchSolution& sol,
                    const std::optional<Eigen::VectorXd>& bids = {});

// Marginal-cost bids 2 a_n x_n + c_n; requires every dispatch entry strictly
// positive, otherwise a PreconditionError points at nash_from_duals.
Eigen::VectorXd efficient_bid(const NetworkCase& cse, const DispatchSolution& sol);

// Equilibrium bids from nodal prices: the bus price when every generator at
// that bus is dispatched strictly positive, the generator's own linear cost
// otherwise.  Requires a solution passing check_kkt at 1e-6.
Eigen::VectorXd nash_from_duals(const NetworkCase& cse, const DispatchSolution& sol);

// Quantity maximizing a generator's payoff at a given bid: max(0, (bid - c) / (2a)).
double best_response_quantity(double bid, const Generator& gen);

// bid * dispatched - (a * dispatched^2 + c * dispatched); dispatched must be >= 0.
double payoff(double bid, double dispatched, const Generator& gen);

}  // namespace bidsim
