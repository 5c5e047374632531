#include "bidsim/opf.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace bidsim {

double KktReport::max_residual() const {
  double r = stationarity;
  r = std::max(r, flow_stationarity);
  r = std::max(r, flow_balance);
  r = std::max(r, primal_bounds);
  r = std::max(r, dual_feasibility);
  r = std::max(r, comp_slack_x);
  return std::max(r, comp_slack_lines);
}

namespace {

// Inequality row j of the dispatch program, over v = (x, z):
//   j < ng:             -x_j <= 0
//   ng <= j < ng+ne:     z_e <= limit_e   (e = j - ng)
//   else:               -z_e <= limit_e   (e = j - ng - ne)
struct IneqRows {
  int ng, ne;
  double coeff(int j) const { return j < ng ? -1.0 : (j < ng + ne ? 1.0 : -1.0); }
  int var(int j) const { return j < ng ? j : (j < ng + ne ? ng + j - ng : ng + j - ng - ne); }
  double bound(const NetworkCase& cse, int j) const {
    return j < ng ? 0.0 : cse.lines[(j - ng) % ne].limit;
  }
  int count() const { return ng + 2 * ne; }
  double value(const Eigen::VectorXd& v, int j) const { return coeff(j) * v[var(j)]; }
};

int stack_rank(const Eigen::MatrixXd& emat, const std::vector<int>& ws, const IneqRows& rows,
               int dims) {
  Eigen::MatrixXd stack(emat.rows() + ws.size(), dims);
  stack.topRows(emat.rows()) = emat;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(dims);
    r[rows.var(ws[i])] = rows.coeff(ws[i]);
    stack.row(emat.rows() + static_cast<int>(i)) = r;
  }
  return static_cast<int>(Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(stack).rank());
}

}  // namespace

DispatchSolution solve_dcopf(const NetworkCase& cse, const IsoPolicy& start_policy) {
  ConstraintMatrices m = build_matrices(cse);
  const int nb = cse.n_buses();
  const int ne = cse.n_lines();
  const int ng = cse.n_generators();
  const int dims = ng + ne;
  const Eigen::VectorXd a = cse.cost_a();
  const Eigen::VectorXd c = cse.cost_c();

  // Feasible vertex from the zero-bid clearing program (propagates the
  // infeasibility certificate when no dispatch serves the load).
  LpSolution start = solve_sdcopf(cse, Eigen::VectorXd::Zero(ng), start_policy);

  Eigen::MatrixXd emat(nb, dims);
  emat.leftCols(ng) = -m.j2;
  emat.rightCols(ne) = m.j1;
  const Eigen::VectorXd beq = -cse.loads();

  Eigen::VectorXd v(dims);
  v.head(ng) = start.x_opt;
  v.tail(ne) = start.z_opt;

  IneqRows rows{ng, ne};
  std::vector<int> ws;
  {
    int rank = stack_rank(emat, ws, rows, dims);
    for (int j = 0; j < rows.count(); ++j) {
      if (std::abs(rows.value(v, j) - rows.bound(cse, j)) > 1e-9) continue;
      std::vector<int> trial = ws;
      trial.push_back(j);
      int r = stack_rank(emat, trial, rows, dims);
      if (r > rank) {
        ws = std::move(trial);
        rank = r;
      }
    }
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dims, dims);
  for (int n = 0; n < ng; ++n) h(n, n) = 2.0 * a[n];
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dims);
  g.head(ng) = c;

  std::ostringstream log;
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(nb);
  Eigen::VectorXd eta_full = Eigen::VectorXd::Zero(rows.count());

  for (int iter = 0;; ++iter) {
    if (iter > 1000)
      throw SolverError("dispatch solver failed to converge in 1000 active-set iterations",
                        log.str());
    const int nw = static_cast<int>(ws.size());
    const int na = nb + nw;
    Eigen::MatrixXd amat(na, dims);
    Eigen::VectorXd brhs(na);
    amat.topRows(nb) = emat;
    brhs.head(nb) = beq;
    for (int i = 0; i < nw; ++i) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(dims);
      r[rows.var(ws[i])] = rows.coeff(ws[i]);
      amat.row(nb + i) = r;
      brhs[nb + i] = rows.bound(cse, ws[i]);
    }

    // Equality-constrained subproblem: [h a'; a 0][v; u] = [-g; brhs].
    // h is singular on the flow block, so use a rank-revealing least-squares
    // solve; the multipliers are determined because the stack stays
    // independent.
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dims + na, dims + na);
    kkt.topLeftCorner(dims, dims) = h;
    kkt.topRightCorner(dims, na) = amat.transpose();
    kkt.bottomLeftCorner(na, dims) = amat;
    Eigen::VectorXd rhs(dims + na);
    rhs.head(dims) = -g;
    rhs.tail(na) = brhs;
    Eigen::VectorXd sol =
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(kkt).solve(rhs);
    Eigen::VectorXd vhat = sol.head(dims);
    Eigen::VectorXd u = sol.tail(na);

    Eigen::VectorXd p = vhat - v;
    if (p.cwiseAbs().maxCoeff() <= 1e-10) {
      int drop = -1;
      for (int i = 0; i < nw; ++i) {
        if (u[nb + i] < -1e-10 && (drop < 0 || ws[i] < ws[drop])) drop = i;
      }
      if (drop < 0) {
        nu = u.head(nb);
        eta_full.setZero();
        for (int i = 0; i < nw; ++i) eta_full[ws[i]] = std::max(0.0, u[nb + i]);
        break;
      }
      log << "iter " << iter << ": drop constraint " << ws[drop] << "\n";
      ws.erase(ws.begin() + drop);
      continue;
    }

    double alpha = 1.0;
    int blocking = -1;
    for (int j = 0; j < rows.count(); ++j) {
      if (std::find(ws.begin(), ws.end(), j) != ws.end()) continue;
      double den = rows.coeff(j) * p[rows.var(j)];
      if (den <= 1e-11) continue;
      double room = rows.bound(cse, j) - rows.value(v, j);
      double aj = std::max(0.0, room / den);
      if (aj < alpha - 1e-12) {
        alpha = aj;
        blocking = j;
      } else if (aj < alpha + 1e-12 && blocking >= 0 && j < blocking) {
        blocking = j;
      }
    }
    v += alpha * p;
    if (blocking >= 0) {
      log << "iter " << iter << ": add constraint " << blocking << " (alpha=" << alpha << ")\n";
      ws.push_back(blocking);
    }
  }

  DispatchSolution out;
  out.x = v.head(ng).cwiseMax(0.0);
  out.z = v.tail(ne);
  out.nu = nu;
  out.mu = Eigen::VectorXd(2 * ne);
  for (int e = 0; e < ne; ++e) {
    out.mu[e] = eta_full[ng + e];
    out.mu[ne + e] = eta_full[ng + ne + e];
  }
  out.lambda = eta_full.head(ng);
  out.objective = (a.array() * out.x.array().square() + c.array() * out.x.array()).sum();

  KktReport rep = check_kkt(cse, out);
  if (!rep.within(1e-8)) {
    log << "final residual " << rep.max_residual() << "\n";
    throw SolverError("dispatch solver exit state fails first-order checks", log.str());
  }
  return out;
}

KktReport check_kkt(const NetworkCase& cse, const DispatchSolution& sol,
                    const std::optional<Eigen::VectorXd>& bids) {
  ConstraintMatrices m = build_matrices(cse);
  const int nb = cse.n_buses();
  const int ne = cse.n_lines();
  const int ng = cse.n_generators();
  if (sol.x.size() != ng || sol.z.size() != ne || sol.nu.size() != nb ||
      sol.mu.size() != 2 * ne || sol.lambda.size() != ng)
    throw DimensionError("dispatch solution shapes do not match the case");
  if (bids && bids->size() != ng)
    throw DimensionError("bid profile shape does not match the case");

  Eigen::VectorXd grad =
      bids ? *bids
           : (2.0 * cse.cost_a().array() * sol.x.array() + cse.cost_c().array()).matrix();

  KktReport rep;
  rep.stationarity =
      (grad - m.j2.transpose() * sol.nu - sol.lambda).cwiseAbs().maxCoeff();
  rep.flow_stationarity =
      ne > 0 ? (m.j1.transpose() * sol.nu + m.j3.transpose() * sol.mu).cwiseAbs().maxCoeff() : 0.0;
  rep.flow_balance_by_bus = m.j1 * sol.z - m.j2 * sol.x + cse.loads();
  rep.flow_balance = rep.flow_balance_by_bus.cwiseAbs().maxCoeff();

  double xviol = std::max(0.0, -sol.x.minCoeff());
  Eigen::VectorXd line_slack = m.zbar_c - m.j3 * sol.z;
  double zviol = ne > 0 ? std::max(0.0, -line_slack.minCoeff()) : 0.0;
  rep.primal_bounds = std::max(xviol, zviol);

  rep.dual_feasibility = std::max(0.0, -sol.lambda.minCoeff());
  if (ne > 0) rep.dual_feasibility = std::max(rep.dual_feasibility, -sol.mu.minCoeff());
  rep.dual_feasibility = std::max(0.0, rep.dual_feasibility);

  rep.comp_slack_x = (sol.x.array() * sol.lambda.array()).abs().maxCoeff();
  rep.comp_slack_lines =
      ne > 0 ? (sol.mu.array() * line_slack.array()).abs().maxCoeff() : 0.0;
  return rep;
}

Eigen::VectorXd efficient_bid(const NetworkCase& cse, const DispatchSolution& sol) {
  if (sol.x.size() != cse.n_generators())
    throw DimensionError("dispatch solution shape does not match the case");
  if (sol.x.minCoeff() <= 1e-9)
    throw PreconditionError(
        "efficient_bid requires every dispatch entry strictly positive; "
        "some are zero here, so use nash_from_duals");
  return (2.0 * cse.cost_a().array() * sol.x.array() + cse.cost_c().array()).matrix();
}

Eigen::VectorXd nash_from_duals(const NetworkCase& cse, const DispatchSolution& sol) {
  KktReport rep = check_kkt(cse, sol);
  if (!rep.within(1e-6))
    throw PreconditionError("nash_from_duals requires a solution passing first-order checks; "
                            "worst residual " +
                            fmt_sig10(rep.max_residual()));
  const int ng = cse.n_generators();
  Eigen::VectorXd b(ng);
  for (int n = 0; n < ng; ++n) {
    const Generator& gen = cse.generators[n];
    double bus_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < ng; ++k)
      if (cse.generators[k].bus == gen.bus) bus_min = std::min(bus_min, sol.x[k]);
    b[n] = bus_min > 1e-9 ? sol.nu[cse.bus_index(gen.bus)] : gen.c;
  }
  return b;
}

double best_response_quantity(double bid, const Generator& gen) {
  return std::max(0.0, (bid - gen.c) / (2.0 * gen.a));
}

double payoff(double bid, double dispatched, const Generator& gen) {
  if (dispatched < -1e-12) throw PreconditionError("dispatched quantity must be nonnegative");
  double q = std::max(0.0, dispatched);
  return bid * q - (gen.a * q * q + gen.c * q);
}

}  // namespace bidsim
