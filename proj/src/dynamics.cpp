#include "bidsim/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bidsim/opf.hpp"

namespace bidsim {

double StepsizeSchedule::nominal(int k) const {
  if (kind == Kind::custom) {
    if (values.empty()) throw PreconditionError("custom stepsize schedule has no values");
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(k - 1), values.size() - 1);
    return values[i];
  }
  return beta;
}

double StepsizeSchedule::min_possible() const {
  switch (kind) {
    case Kind::constant: return beta;
    case Kind::custom: {
      if (values.empty()) throw PreconditionError("custom stepsize schedule has no values");
      double m = values.front();
      for (double v : values) m = std::min(m, v);
      return m;
    }
    case Kind::per_generator_random: return lo;
    case Kind::decaying: return std::min(lo, beta);
  }
  return beta;
}

double StepsizeSchedule::max_possible() const {
  switch (kind) {
    case Kind::constant: return beta;
    case Kind::custom: {
      if (values.empty()) throw PreconditionError("custom stepsize schedule has no values");
      double m = values.front();
      for (double v : values) m = std::max(m, v);
      return m;
    }
    case Kind::per_generator_random: return hi;
    case Kind::decaying: return std::max(hi, beta);
  }
  return beta;
}

Eigen::VectorXd StepsizeSchedule::draw(int k, int n_gens, SubStream& stream) const {
  Eigen::VectorXd out(n_gens);
  switch (kind) {
    case Kind::constant:
    case Kind::custom:
      out.setConstant(nominal(k));
      break;
    case Kind::per_generator_random:
      for (int n = 0; n < n_gens; ++n) out[n] = stream.uniform(lo, hi);
      break;
    case Kind::decaying: {
      double shrink = std::pow(rho, k - 1);
      double lo_k = beta + (lo - beta) * shrink;
      double hi_k = beta + (hi - beta) * shrink;
      for (int n = 0; n < n_gens; ++n) out[n] = stream.uniform(lo_k, hi_k);
      break;
    }
  }
  return out;
}

void StepsizeSchedule::validate(const NetworkCase& cse, bool conforming_required) const {
  if (!(min_possible() > 0.0))
    throw PreconditionError("stepsize schedule can produce a non-positive stepsize");
  if (per_generator() && !(hi >= lo))
    throw PreconditionError("stepsize interval is empty (hi < lo)");
  if (alpha && !(*alpha > 0.0 && *alpha <= min_possible() + 1e-15))
    throw PreconditionError("declared stepsize lower bound alpha exceeds the schedule minimum");
  if (conforming_required) {
    double two_a_min = 2.0 * cse.cost_a().minCoeff();
    if (!(max_possible() < two_a_min))
      throw PreconditionError(
          "conforming updates need every stepsize below 2 a_n (schedule max " +
          fmt_sig10(max_possible()) + " vs bound " + fmt_sig10(two_a_min) + ")");
  }
}

ConvergenceParams ConvergenceParams::from_case(const NetworkCase& cse, double r) {
  ConvergenceParams p;
  p.r = r;
  p.a_max = cse.cost_a().maxCoeff();
  p.a_min = cse.cost_a().minCoeff();
  p.ybar = total_load(cse);
  p.b_of_r = compute_B(cse, r);
  return p;
}

Eigen::VectorXd bid_update(const Eigen::VectorXd& b, const Eigen::VectorXd& x_opt,
                           const Eigen::VectorXd& q, const Eigen::VectorXd& beta) {
  if (b.size() != x_opt.size() || b.size() != q.size() || b.size() != beta.size())
    throw DimensionError("bid_update arguments must share one length");
  return (b.array() + beta.array() * (x_opt.array() - q.array())).max(0.0).matrix();
}

double compute_B(const NetworkCase& cse, double r) {
  if (!(r > 0.0)) throw PreconditionError("radius r must be positive");
  double a_max = cse.cost_a().maxCoeff();
  double a_min = cse.cost_a().minCoeff();
  double ybar = total_load(cse);
  return (1.0 / (2.0 * a_max)) / (1.0 / (2.0 * a_min * a_min) + 16.0 * ybar * ybar / (r * r));
}

double ultimate_bound_value(double b_of_r, double a_max, double r, double exponent) {
  if (!(r > 0.0)) throw PreconditionError("radius r must be positive");
  if (!(a_max > 0.0)) throw PreconditionError("a_max must be positive");
  if (b_of_r < 0.0) throw PreconditionError("B(r) must be nonnegative");
  return std::pow(1.0 + b_of_r / (2.0 * a_max), exponent) * r;
}

double ultimate_bound(const NetworkCase& cse, double r, double exponent) {
  return ultimate_bound_value(compute_B(cse, r), cse.cost_a().maxCoeff(), r, exponent);
}

double stopping_guarantee(double epsilon, double alpha, double a_max) {
  if (!(epsilon > 0.0)) throw PreconditionError("epsilon must be positive");
  if (!(a_max > 0.0) || !(alpha > 0.0) || !(alpha < 2.0 * a_max))
    throw PreconditionError("stopping_guarantee needs 0 < alpha < 2 a_max");
  return epsilon / (1.0 - std::sqrt(1.0 - alpha / (2.0 * a_max)));
}

MarketTrace run_baa(const NetworkCase& cse, const Eigen::VectorXd& b1,
                    const StepsizeSchedule& schedule, const StoppingCriterion& stop,
                    const IsoPolicy& policy, const std::optional<RunReference>& ref,
                    double r) {
  const int ng = cse.n_generators();
  if (b1.size() != ng) throw DimensionError("initial bid profile does not match the case");
  Eigen::VectorXd c = cse.cost_c();
  for (int n = 0; n < ng; ++n)
    if (b1[n] < c[n] - 1e-12)
      throw PreconditionError("initial bid below linear cost for generator " +
                              std::to_string(cse.generators[n].id));
  schedule.validate(cse, /*conforming_required=*/true);
  if (!(stop.max_iters >= 1)) throw PreconditionError("max_iters must be at least 1");
  if (std::isnan(stop.epsilon) || stop.epsilon < 0.0)
    throw PreconditionError("epsilon must be positive (or +inf)");

  MarketTrace trace;
  trace.r = r;
  if (ref) {
    trace.b_star = ref->b_star;
    trace.x_star = ref->x_star;
  }

  SubStream beta_stream(schedule.seed, "stepsizes");
  Eigen::VectorXd b = b1;
  for (int k = 1; k <= stop.max_iters; ++k) {
    LpSolution lp = solve_sdcopf(cse, b, policy.at_round(static_cast<std::uint64_t>(k)));
    Eigen::VectorXd q(ng);
    for (int n = 0; n < ng; ++n) q[n] = best_response_quantity(b[n], cse.generators[n]);
    Eigen::VectorXd beta_vec = schedule.draw(k, ng, beta_stream);

    TraceRecord rec;
    rec.k = k;
    rec.b = b;
    rec.x_opt = lp.x_opt;
    rec.q = q;
    rec.beta = schedule.nominal(k);
    if (schedule.per_generator()) rec.beta_by_gen = beta_vec;
    if (ref) rec.dist_to_bstar = (b - ref->b_star).norm();
    trace.records.push_back(std::move(rec));

    Eigen::VectorXd b_next = bid_update(b, lp.x_opt, q, beta_vec);
    double step = (b_next - b).norm();
    b = b_next;
    if (step <= stop.epsilon) break;
  }

  if (ref && !std::isnan(r)) {
    for (const auto& rec : trace.records) {
      if (rec.dist_to_bstar < r) {
        trace.entry_index = rec.k;
        break;
      }
    }
  }
  return trace;
}

void write_trace_csv(const MarketTrace& trace, const std::string& path) {
  if (trace.records.empty()) throw PreconditionError("cannot write an empty trace");
  std::ofstream out(path);
  if (!out) throw PreconditionError("cannot open trace output path: " + path);
  const int ng = static_cast<int>(trace.records.front().b.size());
  const bool robust = trace.has_robustness_columns();

  out << "k";
  for (int n = 1; n <= ng; ++n) out << ",b_" << n;
  for (int n = 1; n <= ng; ++n) out << ",xopt_" << n;
  for (int n = 1; n <= ng; ++n) out << ",q_" << n;
  out << ",beta,dist_to_bstar";
  if (robust) {
    for (int n = 1; n <= ng; ++n) out << ",d_" << n;
    for (int n = 1; n <= ng; ++n) out << ",payoff_" << n;
  }
  out << "\n";

  for (const auto& rec : trace.records) {
    out << rec.k;
    for (int n = 0; n < ng; ++n) out << "," << fmt_sig10(rec.b[n]);
    for (int n = 0; n < ng; ++n) out << "," << fmt_sig10(rec.x_opt[n]);
    for (int n = 0; n < ng; ++n) out << "," << fmt_sig10(rec.q[n]);
    out << "," << fmt_sig10(rec.beta) << "," << fmt_sig10(rec.dist_to_bstar);
    if (robust) {
      for (int n = 0; n < ng; ++n) out << "," << fmt_sig10(rec.d[n]);
      for (int n = 0; n < ng; ++n) out << "," << fmt_sig10(rec.payoffs[n]);
    }
    out << "\n";
  }
  if (!out.good()) throw PreconditionError("failed writing trace to " + path);
}

DiagnosticsReport iteration_diagnostics(const NetworkCase& cse, const TraceRecord& rec_k,
                                        const TraceRecord& rec_k1,
                                        const Eigen::VectorXd& b_star,
                                        const Eigen::VectorXd& x_star,
                                        const ConvergenceParams& params) {
  const int ng = cse.n_generators();
  if (rec_k.b.size() != ng || rec_k1.b.size() != ng || b_star.size() != ng ||
      x_star.size() != ng)
    throw DimensionError("diagnostics inputs do not match the case");

  const Eigen::VectorXd a = cse.cost_a();
  const double beta = rec_k.beta;
  const double dist2 = (rec_k.b - b_star).squaredNorm();
  const double dist = std::sqrt(dist2);

  DiagnosticsReport rep;
  rep.coc_residual = 0.0;
  for (int n = 0; n < ng; ++n) {
    double pre = rec_k.b[n] + beta * (rec_k.x_opt[n] - rec_k.q[n]);
    if (pre < 0.0) {
      rep.projection_active = true;
      continue;
    }
    double w = beta / (2.0 * a[n]);
    double coc = (1.0 - w) * rec_k.b[n] + w * b_star[n];
    double predicted = coc + beta * (rec_k.x_opt[n] - x_star[n]);
    rep.coc_residual = std::max(rep.coc_residual, std::abs(rec_k1.b[n] - predicted));
  }

  Eigen::VectorXd step = rec_k1.b - rec_k.b;
  rep.term1_slack = step.dot(b_star - rec_k.b) - beta / (2.0 * params.a_max) * dist2;
  rep.term2_slack = beta * beta / (2.0 * params.a_min * params.a_min) * dist2 +
                    8.0 * beta * beta * params.ybar * params.ybar - step.squaredNorm();
  rep.face_slack = (rec_k.x_opt - x_star).dot(b_star - rec_k.b);

  rep.contraction_applicable =
      dist >= params.r && dist > 0.0 && beta <= compute_B(cse, dist) + 1e-15;
  double dist1 = (rec_k1.b - b_star).norm();
  rep.contraction_ratio = dist > 0.0 ? dist1 / dist : 0.0;
  rep.contraction_bound = std::sqrt(std::max(0.0, 1.0 - beta / (2.0 * params.a_max)));
  return rep;
}

}  // namespace bidsim
