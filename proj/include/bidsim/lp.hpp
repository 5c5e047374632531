#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "bidsim/network.hpp"

namespace bidsim {

// Tie-breaking policy for the market-clearing LP.  The optimum can sit on a
// face with many vertices; "deterministic" always returns the same one, while
// "randomized" resolves pivot ties under a seeded permutation so repeated
// rounds may land on different optimal vertices (still reproducible from the
// seed and round number).
struct IsoPolicy {
  enum class Kind { deterministic, randomized };
  Kind kind = Kind::deterministic;
  std::uint64_t seed = 0;
  std::uint64_t round = 0;

  static IsoPolicy deterministic() { return {}; }
  static IsoPolicy randomized(std::uint64_t seed, std::uint64_t round = 0) {
    return {Kind::randomized, seed, round};
  }
  IsoPolicy at_round(std::uint64_t k) const {
    IsoPolicy p = *this;
    p.round = k;
    return p;
  }
};

// Bid-clearing program in standard equality form over u = (x, w, s) >= 0,
// where w = z + limits and s = 2*limits - w:
//   [-j2  j1  0][x w s]' = j1*limits - y        (bus balance)
//   [ 0   I   I][x w s]' = 2*limits             (flow box)
// Exposed so tests and the vertex enumerator share one assembly.
struct StandardFormLp {
  Eigen::MatrixXd a;
  Eigen::VectorXd rhs;
  Eigen::VectorXd cost;
  int n_gen = 0;  // leading x block
  int n_flow = 0; // w block; the trailing block is slack s
};

StandardFormLp build_standard_form(const NetworkCase& cse, const Eigen::VectorXd& bids);

struct LpSolution {
  Eigen::VectorXd x_opt; // per generator
  Eigen::VectorXd z_opt; // per line
  std::vector<int> basis; // basic columns of the standard form
  double objective = 0.0;
  bool is_vertex = false;
};

// Clears the market at the given bids: minimizes bids'x subject to flow
// balance and line limits.  Always lands on a vertex.  Throws
// InfeasibleError with an aggregate-cut certificate when the load cannot be
// served; SolverError on numerical failure (the program is never unbounded:
// costs are nonnegative over a bounded feasible set).
LpSolution solve_sdcopf(const NetworkCase& cse, const Eigen::VectorXd& bids,
                        const IsoPolicy& policy = {});

// All basic feasible points of the clearing program, deduplicated.  Refuses
// cases with more than max_dims standard-form variables (the enumeration is
// combinatorial).
std::vector<LpSolution> enumerate_vertices(const NetworkCase& cse, const Eigen::VectorXd& bids,
                                           int max_dims = 12);

// Rank of the active constraint set at (x_opt, z_opt) in the original
// (x, z) coordinates; equals n_gen + n_lines exactly when the point is a
// vertex of the feasible polytope.
int active_constraint_rank(const NetworkCase& cse, const LpSolution& sol, double tol = 1e-7);

}  // namespace bidsim
