#include "bidsim/lp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace bidsim {

StandardFormLp build_standard_form(const NetworkCase& cse, const Eigen::VectorXd& bids) {
  ConstraintMatrices m = build_matrices(cse);
  const int nb = cse.n_buses();
  const int ne = cse.n_lines();
  const int ng = cse.n_generators();
  if (bids.size() != ng)
    throw DimensionError("bid profile has " + std::to_string(bids.size()) + " entries, case has " +
                         std::to_string(ng) + " generators");
  for (int n = 0; n < ng; ++n)
    if (!(bids[n] >= 0.0) || !std::isfinite(bids[n]))
      throw PreconditionError("bid profile must be nonnegative and finite (entry " +
                              std::to_string(n) + ")");

  Eigen::VectorXd limits(ne);
  for (int e = 0; e < ne; ++e) limits[e] = cse.lines[e].limit;

  StandardFormLp lp;
  lp.n_gen = ng;
  lp.n_flow = ne;
  const int ncols = ng + 2 * ne;
  lp.a = Eigen::MatrixXd::Zero(nb + ne, ncols);
  lp.a.block(0, 0, nb, ng) = -m.j2;
  if (ne > 0) {
    lp.a.block(0, ng, nb, ne) = m.j1;
    lp.a.block(nb, ng, ne, ne) = Eigen::MatrixXd::Identity(ne, ne);
    lp.a.block(nb, ng + ne, ne, ne) = Eigen::MatrixXd::Identity(ne, ne);
  }
  lp.rhs = Eigen::VectorXd(nb + ne);
  lp.rhs.head(nb) = m.j1 * limits - cse.loads();
  lp.rhs.tail(ne) = 2.0 * limits;
  lp.cost = Eigen::VectorXd::Zero(ncols);
  lp.cost.head(ng) = bids;
  return lp;
}

namespace {

constexpr double kRcTol = 1e-9;
constexpr double kPivTol = 1e-11;
constexpr double kFeasTol = 1e-8;

struct SimplexOutcome {
  Eigen::VectorXd u;
  std::vector<int> basis; // one column per surviving row
  double objective = 0.0;
};

// Primal tableau simplex, two phases, Bland's rule taken over an arbitrary
// priority permutation of the columns (identity = deterministic; a seeded
// shuffle yields alternative optimal vertices while preserving termination).
SimplexOutcome simplex(const StandardFormLp& lp, const std::vector<int>& order) {
  const int m0 = static_cast<int>(lp.a.rows());
  const int n = static_cast<int>(lp.a.cols());

  std::vector<double> row_sign(m0, 1.0);
  Eigen::MatrixXd t(m0 + 1, n + m0 + 1);
  t.setZero();
  for (int i = 0; i < m0; ++i) {
    double s = lp.rhs[i] < 0.0 ? -1.0 : 1.0;
    row_sign[i] = s;
    t.block(i, 0, 1, n) = s * lp.a.row(i);
    t(i, n + i) = 1.0;
    t(i, n + m0) = s * lp.rhs[i];
  }

  std::vector<int> priority(n + m0);
  for (int p = 0; p < n; ++p) priority[order[p]] = p;
  for (int j = n; j < n + m0; ++j) priority[j] = j;

  std::vector<int> basis(m0);
  std::iota(basis.begin(), basis.end(), n);
  int m = m0;
  const int rhs_col = n + m0;

  auto pivot = [&](int row, int col) {
    t.row(row).head(rhs_col + 1) /= t(row, col);
    for (int i = 0; i <= m; ++i) {
      if (i == row) continue;
      double f = t(i, col);
      if (f != 0.0) t.row(i).head(rhs_col + 1) -= f * t.row(row).head(rhs_col + 1);
    }
    basis[row] = col;
  };

  auto iterate = [&](bool phase_one) {
    for (long iter = 0;; ++iter) {
      if (iter > 50000)
        throw SolverError("simplex failed to terminate", "pivot count exceeded 50000");
      int ent = -1;
      for (int p = 0; p < n; ++p) {
        int j = order[p];
        if (t(m, j) < -kRcTol) { ent = j; break; }
      }
      if (ent < 0) return;
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        if (t(i, ent) <= kPivTol) continue;
        double ratio = t(i, rhs_col) / t(i, ent);
        if (ratio < best_ratio - 1e-12 ||
            (ratio < best_ratio + 1e-12 && (leave < 0 || priority[basis[i]] < priority[basis[leave]])))
          { best_ratio = ratio; leave = i; }
      }
      if (leave < 0) {
        if (phase_one) throw SolverError("phase-one program reported unbounded descent");
        throw SolverError("clearing program reported unbounded descent; feasible set should be bounded");
      }
      pivot(leave, ent);
    }
  };

  // Phase one: minimize the artificial total.
  for (int j = 0; j < n; ++j) t(m, j) = -t.block(0, j, m, 1).sum();
  t(m, rhs_col) = -t.col(rhs_col).head(m).sum();
  iterate(true);

  double infeas = -t(m, rhs_col);
  if (infeas > 1e-7) {
    std::vector<double> weights(m0);
    for (int i = 0; i < m0; ++i) weights[i] = row_sign[i] * (1.0 - t(m, n + i));
    throw InfeasibleError("aggregate flow/load cut violated", std::move(weights), infeas);
  }

  // Drive artificials out of the basis; rows that cannot pivot are redundant.
  for (int i = m - 1; i >= 0; --i) {
    if (basis[i] < n) continue;
    int col = -1;
    for (int p = 0; p < n; ++p)
      if (std::abs(t(i, order[p])) > 1e-7) { col = order[p]; break; }
    if (col >= 0) {
      pivot(i, col);
    } else {
      // Remove row i: shift rows and basis entries up.
      for (int r = i; r < m; ++r) t.row(r) = t.row(r + 1);
      basis.erase(basis.begin() + i);
      --m;
      basis.resize(m);
    }
  }

  // Phase two over the true cost.
  for (int j = 0; j < n; ++j) {
    double rc = lp.cost[j];
    for (int i = 0; i < m; ++i) rc -= lp.cost[basis[i]] * t(i, j);
    t(m, j) = rc;
  }
  double obj = 0.0;
  for (int i = 0; i < m; ++i) obj += lp.cost[basis[i]] * t(i, rhs_col);
  t(m, rhs_col) = -obj;
  iterate(false);

  SimplexOutcome out;
  out.u = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < m; ++i) {
    double v = t(i, rhs_col);
    if (v < 0.0 && v > -kRcTol) v = 0.0;
    out.u[basis[i]] = v;
  }
  out.basis.assign(basis.begin(), basis.begin() + m);
  out.objective = lp.cost.dot(out.u);

  // Exit-state audit: primal feasibility of the recovered point and
  // nonnegative reduced costs over every original column.
  double scale = std::max(1.0, lp.rhs.cwiseAbs().maxCoeff());
  if (((lp.a * out.u - lp.rhs).cwiseAbs().maxCoeff()) > kFeasTol * scale)
    throw SolverError("simplex exit point violates constraints beyond tolerance");
  if (out.u.minCoeff() < -kRcTol)
    throw SolverError("simplex exit point has a negative variable");
  for (int j = 0; j < n; ++j)
    if (t(m, j) < -1e-7)
      throw SolverError("simplex exited with a negative reduced cost");
  return out;
}

std::vector<int> pivot_order(int n, const IsoPolicy& policy) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (policy.kind == IsoPolicy::Kind::randomized) {
    SubStream stream(policy.seed, "iso_pivot", policy.round);
    stream.shuffle(order);
  }
  return order;
}

LpSolution unpack(const NetworkCase& cse, const StandardFormLp& lp, const Eigen::VectorXd& u,
                  std::vector<int> basis, bool vertex) {
  LpSolution sol;
  sol.x_opt = u.head(lp.n_gen);
  sol.z_opt = Eigen::VectorXd(lp.n_flow);
  for (int e = 0; e < lp.n_flow; ++e) sol.z_opt[e] = u[lp.n_gen + e] - cse.lines[e].limit;
  sol.basis = std::move(basis);
  sol.objective = lp.cost.dot(u);
  sol.is_vertex = vertex;
  return sol;
}

}  // namespace

LpSolution solve_sdcopf(const NetworkCase& cse, const Eigen::VectorXd& bids,
                        const IsoPolicy& policy) {
  StandardFormLp lp = build_standard_form(cse, bids);
  try {
    SimplexOutcome out = simplex(lp, pivot_order(static_cast<int>(lp.a.cols()), policy));
    return unpack(cse, lp, out.u, out.basis, true);
  } catch (const InfeasibleError& e) {
    const int nb = cse.n_buses();
    std::ostringstream msg;
    msg << "clearing program infeasible: " << e.what() << " by " << fmt_sig10(e.gap)
        << " (cut weights:";
    for (std::size_t i = 0; i < e.row_weights.size(); ++i) {
      if (std::abs(e.row_weights[i]) < 1e-7) continue;
      if (static_cast<int>(i) < nb)
        msg << " bus " << cse.buses[i].id;
      else
        msg << " line (" << cse.lines[i - nb].from << "," << cse.lines[i - nb].to << ")";
      msg << ": " << fmt_sig10(e.row_weights[i]);
    }
    msg << ")";
    throw InfeasibleError(msg.str(), e.row_weights, e.gap);
  }
}

std::vector<LpSolution> enumerate_vertices(const NetworkCase& cse, const Eigen::VectorXd& bids,
                                           int max_dims) {
  StandardFormLp lp = build_standard_form(cse, bids);
  const int n = static_cast<int>(lp.a.cols());
  if (n > max_dims)
    throw DimensionError("vertex enumeration refused: standard form has " + std::to_string(n) +
                         " variables, guard is " + std::to_string(max_dims));

  // Independent rows via column-pivoted QR of a'.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(lp.a.transpose());
  const int r = static_cast<int>(qr.rank());
  std::vector<int> rows(qr.colsPermutation().indices().data(),
                        qr.colsPermutation().indices().data() + r);
  std::sort(rows.begin(), rows.end());
  Eigen::MatrixXd ak(r, n);
  Eigen::VectorXd bk(r);
  for (int i = 0; i < r; ++i) {
    ak.row(i) = lp.a.row(rows[i]);
    bk[i] = lp.rhs[rows[i]];
  }

  double scale = std::max(1.0, lp.rhs.cwiseAbs().maxCoeff());
  std::set<std::vector<std::int64_t>> seen;
  std::vector<LpSolution> out;

  std::vector<int> combo(r);
  std::iota(combo.begin(), combo.end(), 0);
  for (;;) {
    Eigen::MatrixXd basis_mat(r, r);
    for (int j = 0; j < r; ++j) basis_mat.col(j) = ak.col(combo[j]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(basis_mat);
    if (lu.isInvertible()) {
      Eigen::VectorXd ub = lu.solve(bk);
      if (ub.minCoeff() >= -1e-9) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
        for (int j = 0; j < r; ++j) u[combo[j]] = std::max(0.0, ub[j]);
        if ((lp.a * u - lp.rhs).cwiseAbs().maxCoeff() <= kFeasTol * scale) {
          std::vector<std::int64_t> key(n);
          for (int j = 0; j < n; ++j) key[j] = std::llround(u[j] * 1e9);
          if (seen.insert(key).second) out.push_back(unpack(cse, lp, u, combo, true));
        }
      }
    }
    // next combination of r indices out of n
    int k = r - 1;
    while (k >= 0 && combo[k] == n - r + k) --k;
    if (k < 0) break;
    ++combo[k];
    for (int j = k + 1; j < r; ++j) combo[j] = combo[j - 1] + 1;
  }
  return out;
}

int active_constraint_rank(const NetworkCase& cse, const LpSolution& sol, double tol) {
  ConstraintMatrices m = build_matrices(cse);
  const int nb = cse.n_buses();
  const int ne = cse.n_lines();
  const int ng = cse.n_generators();
  const int dims = ng + ne;

  std::vector<Eigen::RowVectorXd> active;
  for (int i = 0; i < nb; ++i) {
    Eigen::RowVectorXd row(dims);
    row.head(ng) = -m.j2.row(i);
    row.tail(ne) = m.j1.row(i);
    active.push_back(row);
  }
  for (int g = 0; g < ng; ++g) {
    if (std::abs(sol.x_opt[g]) <= tol) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dims);
      row[g] = 1.0;
      active.push_back(row);
    }
  }
  for (int e = 0; e < ne; ++e) {
    if (std::abs(sol.z_opt[e] - cse.lines[e].limit) <= tol ||
        std::abs(sol.z_opt[e] + cse.lines[e].limit) <= tol) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dims);
      row[ng + e] = 1.0;
      active.push_back(row);
    }
  }
  Eigen::MatrixXd stack(active.size(), dims);
  for (std::size_t i = 0; i < active.size(); ++i) stack.row(static_cast<int>(i)) = active[i];
  return static_cast<int>(Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(stack).rank());
}

}  // namespace bidsim
