#include <doctest.h>

#include <algorithm>
#include <set>

#include "bidsim/lp.hpp"
#include "bidsim/opf.hpp"
#include "case_factory.hpp"

using namespace bidsim;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("lp");

TEST_CASE("cheaper bid takes the whole single-bus load") {
  NetworkCase cse = testcases::single_bus(3.0, {{0.1, 1.0}, {0.1, 1.0}});
  LpSolution sol = solve_sdcopf(cse, vec({1.0, 2.0}));
  CHECK(sol.x_opt[0] == doctest::Approx(3.0));
  CHECK(sol.x_opt[1] == doctest::Approx(0.0));
  CHECK(sol.objective == doctest::Approx(3.0));
  CHECK(sol.is_vertex);
}

TEST_CASE("a lone generator yields exactly one vertex carrying the load") {
  NetworkCase cse = testcases::single_bus(2.5, {{0.1, 1.0}});
  auto verts = enumerate_vertices(cse, vec({1.0}));
  REQUIRE(verts.size() == 1);
  CHECK(verts[0].x_opt[0] == doctest::Approx(2.5));
}

TEST_CASE("tied bids expose both extreme allocations as optimal vertices") {
  NetworkCase cse = testcases::single_bus(2.0, {{0.1, 1.0}, {0.1, 1.0}});
  auto verts = enumerate_vertices(cse, vec({1.5, 1.5}));
  bool saw_first = false, saw_second = false;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : verts) best = std::min(best, v.objective);
  for (const auto& v : verts) {
    if (std::abs(v.objective - best) > 1e-9) continue;
    if (std::abs(v.x_opt[0] - 2.0) < 1e-9 && std::abs(v.x_opt[1]) < 1e-9) saw_first = true;
    if (std::abs(v.x_opt[1] - 2.0) < 1e-9 && std::abs(v.x_opt[0]) < 1e-9) saw_second = true;
  }
  CHECK(saw_first);
  CHECK(saw_second);
}

TEST_CASE("a binding line limit floors the remote bus's local dispatch") {
  // Load 2 at bus 2, line limit 1.2: every vertex dispatches >= 0.8 at bus 2.
  NetworkCase cse =
      testcases::two_bus(0.0, 2.0, 1.2, {{0.1, 0.5}, {0.1, 0.6}}, {{0.1, 2.0}, {0.1, 3.0}});
  auto verts = enumerate_vertices(cse, vec({0.5, 0.6, 2.0, 3.0}));
  REQUIRE_FALSE(verts.empty());
  for (const auto& v : verts) CHECK(v.x_opt[2] + v.x_opt[3] >= 2.0 - 1.2 - 1e-9);
}

TEST_CASE("clearing at the equilibrium bids reproduces the equilibrium payment") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(cse);
  Eigen::VectorXd b_star = efficient_bid(cse, ds);
  LpSolution sol = solve_sdcopf(cse, b_star);
  CHECK(sol.objective == doctest::Approx(b_star.dot(ds.x)).epsilon(1e-9));
  CHECK(sol.objective == doctest::Approx(13.2312881).epsilon(1e-6));
}

TEST_CASE("solver objective equals the vertex-enumeration minimum on random cases") {
  SubStream stream(7171, "lp_oracle");
  testcases::RandomCaseOptions opt;
  opt.max_buses = 3;
  opt.max_standard_dims = 12;
  for (int trial = 0; trial < 20; ++trial) {
    NetworkCase cse = testcases::random_market_case(stream, opt);
    Eigen::VectorXd bids(cse.n_generators());
    for (int n = 0; n < bids.size(); ++n) bids[n] = stream.uniform(0.0, 5.0);

    LpSolution sol = solve_sdcopf(cse, bids);
    auto verts = enumerate_vertices(cse, bids);
    REQUIRE_FALSE(verts.empty());
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : verts) best = std::min(best, v.objective);
    CHECK(sol.objective == doctest::Approx(best).epsilon(1e-9));
    CHECK(active_constraint_rank(cse, sol) == cse.n_generators() + cse.n_lines());
  }
}

TEST_CASE("optimal allocations move against bid changes (optimal-face inequality)") {
  SubStream stream(8181, "lp_face");
  testcases::RandomCaseOptions opt;
  opt.max_buses = 4;
  for (int trial = 0; trial < 15; ++trial) {
    NetworkCase cse = testcases::random_market_case(stream, opt);
    Eigen::VectorXd b1(cse.n_generators()), b2(cse.n_generators());
    for (int n = 0; n < b1.size(); ++n) {
      b1[n] = stream.uniform(0.0, 5.0);
      b2[n] = stream.uniform(0.0, 5.0);
    }
    Eigen::VectorXd x1 = solve_sdcopf(cse, b1).x_opt;
    Eigen::VectorXd x2 = solve_sdcopf(cse, b2).x_opt;
    CHECK((x1 - x2).dot(b2 - b1) >= -1e-9);
  }
}

TEST_CASE("any clearing stays within twice the total load of the efficient dispatch") {
  SubStream stream(9191, "lp_radius");
  for (int trial = 0; trial < 15; ++trial) {
    NetworkCase cse = testcases::random_market_case(stream);
    DispatchSolution ds = solve_dcopf(cse);
    Eigen::VectorXd bids(cse.n_generators());
    for (int n = 0; n < bids.size(); ++n) bids[n] = stream.uniform(0.0, 8.0);
    Eigen::VectorXd x_opt = solve_sdcopf(cse, bids).x_opt;
    CHECK((x_opt - ds.x).norm() <= 2.0 * total_load(cse) + 1e-9);
  }
}

TEST_CASE("deterministic policy returns bitwise-identical solutions") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  Eigen::VectorXd bids = vec({3.0, 3.1, 1.4, 1.2, 1.1, 1.5});
  LpSolution s1 = solve_sdcopf(cse, bids);
  LpSolution s2 = solve_sdcopf(cse, bids);
  CHECK(s1.x_opt == s2.x_opt);
  CHECK(s1.z_opt == s2.z_opt);
  CHECK(s1.basis == s2.basis);
}

TEST_CASE("randomized tie-breaking explores distinct optimal vertices") {
  // Two equal-bid generators at one bus: the optimal face has two vertices.
  NetworkCase cse = testcases::single_bus(2.0, {{0.1, 1.0}, {0.1, 1.0}});
  Eigen::VectorXd bids = vec({1.5, 1.5});
  std::set<long long> seen;
  double obj0 = solve_sdcopf(cse, bids).objective;
  for (std::uint64_t round = 0; round < 24; ++round) {
    LpSolution sol = solve_sdcopf(cse, bids, IsoPolicy::randomized(5, round));
    CHECK(sol.objective == doctest::Approx(obj0).epsilon(1e-12));
    seen.insert(llround(sol.x_opt[0] * 1e9));
  }
  CHECK(seen.size() >= 2);
}

TEST_CASE("infeasible loads produce a violated aggregate-cut certificate") {
  // 5 units of demand behind a 1-unit line with no local generation.
  NetworkCase cse = testcases::two_bus(0.0, 5.0, 1.0, {{0.1, 1.0}, {0.1, 1.0}}, {});
  try {
    solve_sdcopf(cse, vec({1.0, 2.0}));
    FAIL("expected infeasibility");
  } catch (const InfeasibleError& e) {
    CHECK(e.gap >= 4.0 - 1e-6); // bus 2 is short by load - limit = 4
    CHECK_FALSE(e.row_weights.empty());
    CHECK(std::string(e.what()).find("cut") != std::string::npos);
  }
}

TEST_CASE("a network without lines clears locally") {
  NetworkCase cse = testcases::single_bus(1.0, {{0.2, 2.0}, {0.3, 1.0}});
  LpSolution sol = solve_sdcopf(cse, vec({2.0, 1.0}));
  CHECK(sol.x_opt[1] == doctest::Approx(1.0));
  CHECK(sol.z_opt.size() == 0);
}

TEST_CASE("argument validation rejects malformed bids and oversized enumerations") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  CHECK_THROWS_AS(solve_sdcopf(cse, vec({1.0, 2.0})), DimensionError);
  CHECK_THROWS_AS(solve_sdcopf(cse, vec({-1.0, 1, 1, 1, 1, 1})), PreconditionError);
  // 6 generators + 2*9 flow variables = 24 standard-form dims > 12.
  CHECK_THROWS_AS(enumerate_vertices(cse, vec({1, 1, 1, 1, 1, 1})), DimensionError);
}

TEST_SUITE_END();
