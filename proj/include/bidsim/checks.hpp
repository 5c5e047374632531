#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bidsim/dynamics.hpp"
#include "bidsim/robustness.hpp"

namespace bidsim {

// One named inequality or identity audited across a trace.  "guaranteed"
// records whether the check's hypotheses held for the instances it examined;
// only guaranteed checks gate the process exit code — the rest are
// informational (the quantity is still interesting where the theory is
// silent, but a violation there contradicts nothing).
struct CheckTally {
  long checked = 0;
  long violations = 0;
  int first_violation_k = -1;
  // Most adverse margin seen: for inequalities the smallest slack (negative
  // means violated); for identities, tolerance minus the largest residual.
  double worst_slack = std::numeric_limits<double>::infinity();
  bool guaranteed = true;
};

struct TraceCheckReport {
  std::map<std::string, CheckTally> checks;
  long guaranteed_violations() const;
  long total_violations() const;
};

struct CheckOptions {
  double slack_tol = 1e-7;   // inequality tolerance
  double identity_tol = 1e-9;
  std::vector<int> conformers;       // generator indices following the update; empty = all
  bool additive_disturbance = false; // the trace d column is an additive update term
  std::optional<double> theta;       // enables the disturbance step/envelope checks
  std::optional<double> d_max;       // envelope bound; defaults to the largest ||d(k)|| seen
};

// Audits every applicable inequality over the trace:
//   best_response_quantity  recorded q vs the closed form
//   bid_cost_floor          conformer bids stay at or above linear cost
//   update_decomposition    per-component blend-toward-equilibrium identity
//   step_inner_bound        lower bound on <step, b* - b(k)>
//   step_length_bound       upper bound on |step|^2
//   distance_contraction    squared-distance contraction while outside r
//   rate_envelope           geometric decay until first entry
//   ultimate_containment    distance stays within the invariant radius after entry
//   optimal_face            <x_opt - x*, b* - b(k)> >= 0
//   perturbed_step          per-step factor under proportional disturbances
//   iss_envelope            distance under the disturbance envelope
// Checks whose prerequisites are absent (no reference, wrong mode) are
// simply not tallied.
TraceCheckReport check_trace(const NetworkCase& cse, const MarketTrace& trace,
                             const StepsizeSchedule& schedule, const CheckOptions& options);

}  // namespace bidsim
