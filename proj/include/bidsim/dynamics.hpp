#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bidsim/lp.hpp"
#include "bidsim/network.hpp"

namespace bidsim {

// Stepsize schedule for the bid-adjustment iteration.  "beta" is the nominal
// common stepsize; the per-generator kinds draw each generator's stepsize
// around it from the stated interval ("decaying" shrinks the interval
// geometrically toward the nominal value).  "alpha" is the declared lower
// bound used by the convergence diagnostics; when unset it defaults to the
// smallest value the schedule can produce.
struct StepsizeSchedule {
  enum class Kind { constant, per_generator_random, decaying, custom };
  Kind kind = Kind::constant;
  double beta = 0.01;
  double lo = 0.0, hi = 0.0; // draw interval (initial interval for decaying)
  double rho = 0.999;        // decaying: interval endpoints approach beta as rho^(k-1)
  std::vector<double> values; // custom common sequence; last value repeats
  std::optional<double> alpha;
  std::uint64_t seed = 0;    // substream master for the random kinds

  bool per_generator() const {
    return kind == Kind::per_generator_random || kind == Kind::decaying;
  }
  double nominal(int k) const;
  double min_possible() const;
  double max_possible() const;
  double alpha_effective() const { return alpha ? *alpha : min_possible(); }
  // Per-generator stepsizes for iteration k; consumes the stream only for
  // the random kinds.
  Eigen::VectorXd draw(int k, int n_gens, SubStream& stream) const;
  // PreconditionError unless 0 < beta_k and, when conforming_required,
  // beta_k < 2 a_n for every generator and iteration.
  void validate(const NetworkCase& cse, bool conforming_required) const;
};

struct StoppingCriterion {
  double epsilon = 1e-4; // halt when the bid profile moves less than this; may be +inf
  int max_iters = 10000;
};

struct TraceRecord {
  int k = 0;
  Eigen::VectorXd b;     // bids in effect at iteration k
  Eigen::VectorXd x_opt; // market-clearing dispatch at those bids
  Eigen::VectorXd q;     // closed-form best responses at those bids
  double beta = 0.0;     // nominal stepsize applied going into k+1
  Eigen::VectorXd beta_by_gen; // empty for common-stepsize runs
  double dist_to_bstar = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd d;        // realized disturbance (robustness runs only)
  Eigen::VectorXd payoffs;  // per-generator payoff (robustness runs only)
};

struct MarketTrace {
  std::vector<TraceRecord> records;
  std::optional<int> entry_index; // first k with dist < r
  std::optional<Eigen::VectorXd> b_star, x_star; // diagnostics reference
  double r = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
  // Set when a strategy consumed more information than the shared history
  // its tier entitles it to (reported, never silent).
  bool info_excess = false;

  bool reference_available() const { return b_star.has_value() && x_star.has_value(); }
  bool has_robustness_columns() const {
    return !records.empty() && records.front().d.size() > 0;
  }
};

// Reference pair used by distance diagnostics: equilibrium bids and the
// unique efficient dispatch.
struct RunReference {
  Eigen::VectorXd b_star;
  Eigen::VectorXd x_star;
};

struct ConvergenceParams {
  double r = 0.0;
  double a_max = 0.0, a_min = 0.0;
  double ybar = 0.0;
  double b_of_r = 0.0;
  static ConvergenceParams from_case(const NetworkCase& cse, double r);
};

// One conforming update: componentwise max(0, b + beta .* (x_opt - q)).
Eigen::VectorXd bid_update(const Eigen::VectorXd& b, const Eigen::VectorXd& x_opt,
                           const Eigen::VectorXd& q, const Eigen::VectorXd& beta);

// Largest stepsize for which the distance-to-equilibrium contraction is
// certified at radius r: (2 a_max)^-1 / (1/(2 a_min^2) + 16 ybar^2 / r^2).
double compute_B(const NetworkCase& cse, double r);

// Radius of the invariant neighborhood entered at radius r:
// (1 + B(r)/(2 a_max))^(1/2) * r.  The exponent is configurable because the
// printed form is believed conservative; 0.5 is the default and the value
// every shipped experiment uses.
double ultimate_bound(const NetworkCase& cse, double r, double exponent = 0.5);
double ultimate_bound_value(double b_of_r, double a_max, double r, double exponent = 0.5);

// Distance guarantee when the update halts with a step shorter than epsilon
// under constant stepsize alpha: epsilon / (1 - (1 - alpha/(2 a_max))^(1/2)).
double stopping_guarantee(double epsilon, double alpha, double a_max);

// Conforming bid-adjustment run.  Preconditions: initial bids at or above
// linear costs, schedule valid for conforming updates.  Halts when the bid
// profile moves less than stop.epsilon (so epsilon = +inf halts after one
// iteration) or at stop.max_iters.  The reference pair only feeds the
// distance column and entry index; the dynamics never read it.
MarketTrace run_baa(const NetworkCase& cse, const Eigen::VectorXd& b1,
                    const StepsizeSchedule& schedule, const StoppingCriterion& stop,
                    const IsoPolicy& policy = {},
                    const std::optional<RunReference>& ref = {},
                    double r = std::numeric_limits<double>::quiet_NaN());

// Writes the trace in the fixed CSV schema
//   k,b_1..b_N,xopt_1..xopt_N,q_1..q_N,beta,dist_to_bstar
// (robustness runs append d_1..d_N,payoff_1..payoff_N), 10 significant
// digits per value.
void write_trace_csv(const MarketTrace& trace, const std::string& path);

// Inequality audit for one step k -> k+1 of a conforming common-stepsize run.
struct DiagnosticsReport {
  // Update decomposition: residual of b(k+1) = b_coc + beta (x_opt - x*),
  // where b_coc blends b(k) toward b* at rate beta/(2a_n); exact wherever
  // the projection did not clip.
  double coc_residual = 0.0;
  bool projection_active = false;
  double term1_slack = 0.0; // <b(k+1)-b(k), b*-b(k)> - beta/(2 a_max) dist^2
  double term2_slack = 0.0; // step-length bound minus |b(k+1)-b(k)|^2
  double face_slack = 0.0;  // <x_opt - x*, b* - b(k)>
  bool contraction_applicable = false; // dist >= r and beta <= B(dist)
  double contraction_ratio = 0.0;      // dist(k+1) / dist(k)
  double contraction_bound = 0.0;      // sqrt(1 - beta/(2 a_max))
};
DiagnosticsReport iteration_diagnostics(const NetworkCase& cse, const TraceRecord& rec_k,
                                        const TraceRecord& rec_k1,
                                        const Eigen::VectorXd& b_star,
                                        const Eigen::VectorXd& x_star,
                                        const ConvergenceParams& params);

}  // namespace bidsim
