#include <doctest.h>

#include "bidsim/opf.hpp"
#include "case_factory.hpp"

using namespace bidsim;

namespace {

// Exact efficient dispatch of the 9-bus preset, from the per-bus equal
// marginal-cost split: bus totals (1.5, 2.5, 3.0).
const double kX1 = 58.5 / 41.0;
const double kX3 = 10.0 / 37.0;
const double kX5 = 150.0 / 79.0;

Eigen::VectorXd preset_x_star() {
  Eigen::VectorXd x(6);
  x << kX1, 1.5 - kX1, kX3, 2.5 - kX3, kX5, 3.0 - kX5;
  return x;
}

}  // namespace

TEST_SUITE_BEGIN("opf");

TEST_CASE("preset dispatch matches the closed-form split to 1e-8") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(cse);
  Eigen::VectorXd expect = preset_x_star();
  REQUIRE(ds.x.size() == 6);
  for (int n = 0; n < 6; ++n) CHECK(ds.x[n] == doctest::Approx(expect[n]).epsilon(1e-8));

  // Published 4-decimal values at their printing precision.
  const double printed[6] = {1.4268, 0.0732, 0.2703, 2.2297, 1.8987, 1.1013};
  for (int n = 0; n < 6; ++n) CHECK(std::abs(ds.x[n] - printed[n]) < 1e-3);

  CHECK(check_kkt(cse, ds).within(1e-8));
}

TEST_CASE("marginal-cost bids reproduce the published equilibrium") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(cse);
  Eigen::VectorXd b_star = efficient_bid(cse, ds);
  const double printed[6] = {3.8139, 3.8139, 1.2459, 1.2459, 1.4652, 1.4652};
  for (int n = 0; n < 6; ++n) CHECK(std::abs(b_star[n] - printed[n]) < 1e-3);

  // Same-bus pairs bid identically (shared nodal price).
  CHECK(b_star[0] == doctest::Approx(b_star[1]).epsilon(1e-9));
  CHECK(b_star[2] == doctest::Approx(b_star[3]).epsilon(1e-9));
  CHECK(b_star[4] == doctest::Approx(b_star[5]).epsilon(1e-9));

  Eigen::VectorXd nash = nash_from_duals(cse, ds);
  for (int n = 0; n < 6; ++n) CHECK(nash[n] == doctest::Approx(b_star[n]).epsilon(1e-6));
}

TEST_CASE("hand-checked formula values for single components") {
  CHECK(2 * 0.085 * 0.2703 + 1.2 == doctest::Approx(1.2459).epsilon(1e-4));
  CHECK(2 * 0.11 * 1.4268 + 3.5 == doctest::Approx(3.8139).epsilon(1e-4));

  NetworkCase cse = testcases::single_bus(1.0, {{1.0, 0.0}, {1.0, 0.0}});
  DispatchSolution ds = solve_dcopf(cse);
  CHECK(ds.x[0] == doctest::Approx(0.5));
  CHECK(ds.x[1] == doctest::Approx(0.5));
  Eigen::VectorXd b = efficient_bid(cse, ds);
  CHECK(b[0] == doctest::Approx(1.0));
  CHECK(b[1] == doctest::Approx(1.0));
}

TEST_CASE("a nudged dispatch shows up as a flow-balance residual at its bus") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(cse);
  ds.x[2] += 0.1; // generator 3 sits at bus 2
  KktReport rep = check_kkt(cse, ds);
  CHECK(rep.flow_balance == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(std::abs(rep.flow_balance_by_bus[1]) == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("the equilibrium bid profile satisfies the clearing KKT system") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(cse);
  Eigen::VectorXd b_star = efficient_bid(cse, ds);
  ConstraintMatrices m = build_matrices(cse);

  DispatchSolution clearing = ds;
  clearing.lambda = b_star - m.j2.transpose() * ds.nu;
  for (int n = 0; n < clearing.lambda.size(); ++n) CHECK(clearing.lambda[n] >= -1e-9);
  KktReport rep = check_kkt(cse, clearing, b_star);
  CHECK(rep.within(1e-8));
}

TEST_CASE("two-bus dispatch agrees with a brute-force grid search") {
  NetworkCase cse = testcases::two_bus(0.4, 1.2, 0.9, {{0.3, 1.0}, {0.5, 0.4}}, {{0.6, 0.8}});
  DispatchSolution ds = solve_dcopf(cse);
  CHECK(check_kkt(cse, ds).within(1e-8));

  double best = std::numeric_limits<double>::infinity();
  const double step = 1e-3, total = 1.6;
  // Enumerate x1, x2, z on the grid; x3 = total - x1 - x2 by power balance.
  for (double x1 = 0.0; x1 <= total + 1e-12; x1 += step)
    for (double x2 = 0.0; x2 <= total - x1 + 1e-12; x2 += step) {
      double x3 = total - x1 - x2;
      double z = x1 + x2 - 0.4; // bus-1 balance forces the line flow
      if (std::abs(z) > 0.9 + 1e-12) continue;
      double obj = 0.3 * x1 * x1 + 1.0 * x1 + 0.5 * x2 * x2 + 0.4 * x2 + 0.6 * x3 * x3 + 0.8 * x3;
      best = std::min(best, obj);
    }
  CHECK(ds.objective == doctest::Approx(best).epsilon(1e-4));
}

TEST_CASE("mixed-activity fixture matches the hand KKT solution") {
  NetworkCase cse = testcases::mixed_activity_two_bus();
  DispatchSolution ds = solve_dcopf(cse);
  CHECK(ds.x[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(ds.x[1] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(ds.x[2] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(ds.x[3] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(ds.nu[0] == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(ds.nu[1] == doctest::Approx(4.0).epsilon(1e-8));

  // Generator 4 idles, so its bus falls back to linear costs.
  Eigen::VectorXd nash = nash_from_duals(cse, ds);
  CHECK(nash[0] == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(nash[1] == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(nash[2] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(nash[3] == doctest::Approx(5.0).epsilon(1e-8));

  CHECK_THROWS_AS(efficient_bid(cse, ds), PreconditionError);
  try {
    efficient_bid(cse, ds);
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("nash_from_duals") != std::string::npos);
  }
}

TEST_CASE("profit-maximizing quantity follows the clipped linear rule") {
  Generator g1{1, 1, 0.11, 3.5};
  CHECK(best_response_quantity(3.8139, g1) == doctest::Approx(1.4268).epsilon(1e-3));
  CHECK(best_response_quantity(3.5, g1) == 0.0);
  CHECK(best_response_quantity(2.0, g1) == 0.0);
}

TEST_CASE("payoff algebra") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(cse);
  Eigen::VectorXd b_star = efficient_bid(cse, ds);
  // At marginal-cost bids the payoff reduces to a_n x_n^2.
  CHECK(payoff(b_star[0], ds.x[0], cse.generators[0]) == doctest::Approx(0.2239).epsilon(1e-3));
  CHECK(payoff(b_star[0], ds.x[0], cse.generators[0]) ==
        doctest::Approx(0.11 * ds.x[0] * ds.x[0]).epsilon(1e-12));

  Generator g{1, 1, 0.5, 2.0};
  CHECK(payoff(9.0, 0.0, g) == 0.0);
  CHECK(payoff(2.0, 1.7, g) == doctest::Approx(-0.5 * 1.7 * 1.7).epsilon(1e-12));
  CHECK_THROWS_AS(payoff(2.0, -0.1, g), PreconditionError);
}

TEST_CASE("dispatch is unique across starting vertices") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  DispatchSolution base = solve_dcopf(cse);
  for (std::uint64_t round = 0; round < 6; ++round) {
    DispatchSolution other = solve_dcopf(cse, IsoPolicy::randomized(17, round));
    CHECK((other.x - base.x).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(check_kkt(cse, other).within(1e-8));
  }
}

TEST_CASE("strong duality holds on the preset and random cases") {
  auto dual_value = [](const NetworkCase& cse, const DispatchSolution& ds) {
    ConstraintMatrices m = build_matrices(cse);
    Eigen::VectorXd y = cse.loads();
    Eigen::VectorXd j2nu = m.j2.transpose() * ds.nu;
    double val = 0.0;
    for (int n = 0; n < cse.n_generators(); ++n) {
      const Generator& g = cse.generators[n];
      double xhat = (j2nu[n] + ds.lambda[n] - g.c) / (2.0 * g.a);
      val -= g.a * xhat * xhat;
    }
    val += ds.nu.dot(y) - ds.mu.dot(m.zbar_c);
    return val;
  };

  NetworkCase preset = NetworkCase::preset("ieee9-modified");
  DispatchSolution ds = solve_dcopf(preset);
  CHECK(dual_value(preset, ds) == doctest::Approx(ds.objective).epsilon(1e-8));

  SubStream stream(3131, "duality");
  for (int trial = 0; trial < 10; ++trial) {
    NetworkCase cse = testcases::random_market_case(stream);
    DispatchSolution sol = solve_dcopf(cse);
    CHECK(dual_value(cse, sol) == doctest::Approx(sol.objective).epsilon(1e-8));
  }
}

TEST_CASE("equilibrium payoffs are nonnegative and the two bid constructions agree") {
  SubStream stream(3232, "nonneg");
  testcases::RandomCaseOptions opt;
  opt.require_interior = true;
  for (int trial = 0; trial < 10; ++trial) {
    NetworkCase cse = testcases::random_market_case(stream, opt);
    DispatchSolution ds = solve_dcopf(cse);
    Eigen::VectorXd eff = efficient_bid(cse, ds);
    Eigen::VectorXd nash = nash_from_duals(cse, ds);
    for (int n = 0; n < cse.n_generators(); ++n) {
      CHECK(payoff(eff[n], ds.x[n], cse.generators[n]) >= -1e-12);
      CHECK(eff[n] == doctest::Approx(nash[n]).epsilon(1e-6));
    }
  }
}

TEST_SUITE_END();
