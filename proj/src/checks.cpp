#include "bidsim/checks.hpp"

#include <algorithm>
#include <cmath>

#include "bidsim/opf.hpp"

namespace bidsim {

long TraceCheckReport::guaranteed_violations() const {
  long total = 0;
  for (const auto& [name, tally] : checks)
    if (tally.guaranteed) total += tally.violations;
  return total;
}

long TraceCheckReport::total_violations() const {
  long total = 0;
  for (const auto& [name, tally] : checks) total += tally.violations;
  return total;
}

namespace {

struct Auditor {
  TraceCheckReport& report;

  void ineq(const std::string& name, int k, double slack, double tol, bool guaranteed) {
    CheckTally& t = report.checks[name];
    t.checked += 1;
    t.guaranteed = guaranteed;
    t.worst_slack = std::min(t.worst_slack, slack);
    if (slack < -tol) {
      t.violations += 1;
      if (t.first_violation_k < 0) t.first_violation_k = k;
    }
  }

  void identity(const std::string& name, int k, double residual, double tol, bool guaranteed) {
    ineq(name, k, tol - residual, 0.0, guaranteed);
  }
};

double beta_of(const TraceRecord& rec, int n) {
  return rec.beta_by_gen.size() > 0 ? rec.beta_by_gen[n] : rec.beta;
}

}  // namespace

TraceCheckReport check_trace(const NetworkCase& cse, const MarketTrace& trace,
                             const StepsizeSchedule& schedule, const CheckOptions& options) {
  TraceCheckReport report;
  Auditor audit{report};
  const auto& recs = trace.records;
  if (recs.empty()) return report;

  const int ng = cse.n_generators();
  const Eigen::VectorXd a = cse.cost_a();
  const Eigen::VectorXd c = cse.cost_c();
  const double a_max = a.maxCoeff();
  const double a_min = a.minCoeff();
  const double ybar = total_load(cse);
  const double tol = options.slack_tol;

  std::vector<bool> conforms(ng, true);
  if (!options.conformers.empty()) {
    conforms.assign(ng, false);
    for (int n : options.conformers) conforms[static_cast<std::size_t>(n)] = true;
  }
  const bool all_conform =
      std::all_of(conforms.begin(), conforms.end(), [](bool v) { return v; });
  const bool common_beta = !schedule.per_generator();
  const bool additive = options.additive_disturbance;
  const bool has_ref = trace.reference_available();
  const double r = trace.r;
  const bool has_r = !std::isnan(r) && r > 0.0;
  const double alpha = schedule.alpha_effective();

  const Eigen::VectorXd* b_star = has_ref ? &*trace.b_star : nullptr;
  const Eigen::VectorXd* x_star = has_ref ? &*trace.x_star : nullptr;

  // Nominal-stepsize band for the disturbance envelope hypotheses.
  double nominal_min = std::numeric_limits<double>::infinity();
  double nominal_max = 0.0;
  for (const auto& rec : recs) {
    nominal_min = std::min(nominal_min, rec.beta);
    nominal_max = std::max(nominal_max, rec.beta);
  }

  for (const auto& rec : recs) {
    for (int n = 0; n < ng; ++n) {
      double qform = best_response_quantity(rec.b[n], cse.generators[n]);
      audit.identity("best_response_quantity", rec.k, std::abs(rec.q[n] - qform), 1e-9, true);
      if (conforms[static_cast<std::size_t>(n)])
        audit.ineq("bid_cost_floor", rec.k, rec.b[n] - c[n], 1e-9, !additive);
    }
    if (has_ref)
      audit.ineq("optimal_face", rec.k, (rec.x_opt - *x_star).dot(*b_star - rec.b), tol, true);
  }

  // Step checks need consecutive records.
  bool rate_applicable = true;
  double dist1 = has_ref ? recs.front().dist_to_bstar : 0.0;
  const double contraction_base = 1.0 - alpha / (2.0 * a_max);

  std::optional<PerturbedBounds> env;
  double env_alpha = common_beta ? alpha : nominal_min;
  bool env_guaranteed = false;
  if (options.theta && has_ref && has_r && recs.front().d.size() > 0) {
    double d_max = 0.0;
    if (options.d_max) {
      d_max = *options.d_max;
    } else {
      for (const auto& rec : recs) d_max = std::max(d_max, rec.d.norm());
    }
    try {
      env = perturbed_bounds(cse, r, env_alpha, *options.theta, d_max);
      double b_of_r = compute_B(cse, r);
      env_guaranteed = nominal_max <= b_of_r + 1e-15 && !std::isnan(dist1);
    } catch (const PreconditionError&) {
      // theta outside the admissible range: envelope not evaluable
    }
  }

  for (std::size_t i = 0; i + 1 < recs.size(); ++i) {
    const TraceRecord& rk = recs[i];
    const TraceRecord& rk1 = recs[i + 1];
    const double beta = rk.beta;
    const double dist = rk.dist_to_bstar;
    const double dist_next = rk1.dist_to_bstar;

    if (has_ref && !additive) {
      for (int n = 0; n < ng; ++n) {
        if (!conforms[static_cast<std::size_t>(n)]) continue;
        double bn = beta_of(rk, n);
        double pre = rk.b[n] + bn * (rk.x_opt[n] - rk.q[n]);
        if (pre < 0.0) continue; // projection clipped; identity does not apply
        double w = bn / (2.0 * a[n]);
        double predicted =
            (1.0 - w) * rk.b[n] + w * (*b_star)[n] + bn * (rk.x_opt[n] - (*x_star)[n]);
        audit.identity("update_decomposition", rk.k, std::abs(rk1.b[n] - predicted),
                       options.identity_tol, true);
      }
    }

    if (has_ref && !additive && all_conform && common_beta) {
      Eigen::VectorXd step = rk1.b - rk.b;
      double dist2 = dist * dist;
      audit.ineq("step_inner_bound", rk.k,
                 step.dot(*b_star - rk.b) - beta / (2.0 * a_max) * dist2, tol, true);
      audit.ineq("step_length_bound", rk.k,
                 beta * beta / (2.0 * a_min * a_min) * dist2 +
                     8.0 * beta * beta * ybar * ybar - step.squaredNorm(),
                 tol, true);
    }

    bool step_applicable = false;
    if (has_ref && has_r && !additive && all_conform && common_beta && dist >= r && dist > 0.0)
      step_applicable = beta <= compute_B(cse, dist) + 1e-15;
    if (step_applicable) {
      audit.ineq("distance_contraction", rk.k,
                 (1.0 - beta / (2.0 * a_max)) * dist * dist - dist_next * dist_next, tol, true);
    }

    // Geometric decay from the start while every step so far was applicable.
    if (has_ref && has_r && !additive && all_conform && common_beta) {
      rate_applicable = rate_applicable && step_applicable;
      if (rate_applicable) {
        double envelope =
            std::pow(contraction_base, static_cast<double>(rk1.k - 1) / 2.0) * dist1;
        audit.ineq("rate_envelope", rk1.k, envelope - dist_next, tol, true);
      }
    }

    // Per-step disturbance factor; tallied only where its hypotheses hold
    // (proportional disturbance magnitude, bids at or above cost, stepsize
    // inside the certified band), since outside them the factor claims
    // nothing.
    if (options.theta && additive && has_ref && has_r && rk.d.size() > 0 && dist >= r &&
        dist > 0.0) {
      double theta = *options.theta;
      bool hyp = rk.d.norm() <= theta * dist * (1.0 + 1e-12) &&
                 (rk.b.array() >= c.array() - 1e-9).all() &&
                 beta <= compute_B(cse, r) + 1e-15 && beta >= alpha - 1e-15;
      if (hyp) {
        double factor = 1.0 - alpha / (2.0 * a_max) + 2.0 * theta + 4.0 * theta * theta;
        audit.ineq("perturbed_step", rk.k, factor * dist * dist - dist_next * dist_next, tol,
                   true);
      }
    }
  }

  if (env && has_ref) {
    for (const auto& rec : recs) {
      double envelope =
          std::pow(env->rate_factor, static_cast<double>(rec.k - 1) / 2.0) * dist1 + env->g;
      audit.ineq("iss_envelope", rec.k, envelope - rec.dist_to_bstar, tol, env_guaranteed);
    }
  }

  if (has_ref && has_r && !additive && all_conform && common_beta && trace.entry_index) {
    bool contained_guaranteed = schedule.max_possible() <= compute_B(cse, r) + 1e-15;
    double bound = ultimate_bound(cse, r);
    for (const auto& rec : recs) {
      if (rec.k < *trace.entry_index) continue;
      audit.ineq("ultimate_containment", rec.k, bound - rec.dist_to_bstar, tol,
                 contained_guaranteed);
    }
  }

  return report;
}

}  // namespace bidsim
