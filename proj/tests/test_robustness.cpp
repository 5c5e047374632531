#include <doctest.h>

#include "bidsim/opf.hpp"
#include "bidsim/robustness.hpp"
#include "case_factory.hpp"

using namespace bidsim;

namespace {

struct PresetContext {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  RunReference ref;
  Eigen::VectorXd b1;
  PresetContext() {
    DispatchSolution ds = solve_dcopf(cse);
    ref.x_star = ds.x;
    ref.b_star = efficient_bid(cse, ds);
    b1 = cse.cost_c().array() + 1.0;
  }
};

const PresetContext& ctx() {
  static PresetContext c;
  return c;
}

void check_shared_fields_equal(const MarketTrace& a, const MarketTrace& b) {
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const TraceRecord& ra = a.records[i];
    const TraceRecord& rb = b.records[i];
    CHECK(ra.k == rb.k);
    CHECK((ra.b - rb.b).norm() == 0.0);
    CHECK((ra.x_opt - rb.x_opt).norm() == 0.0);
    CHECK((ra.q - rb.q).norm() == 0.0);
    CHECK(ra.beta == rb.beta);
  }
}

}  // namespace

TEST_SUITE_BEGIN("robustness");

TEST_CASE("zero disturbance reproduces the conforming run bit for bit") {
  const PresetContext& c = ctx();
  StepsizeSchedule sched;
  StoppingCriterion stop{1e-6, 120};

  MarketTrace plain = run_baa(c.cse, c.b1, sched, stop, IsoPolicy{}, c.ref, 1.35);

  MarketTrace none = run_perturbed(c.cse, c.b1, sched, DisturbanceModel{}, stop, IsoPolicy{},
                                   c.ref, 1.35, 42);
  check_shared_fields_equal(plain, none);
  CHECK_FALSE(plain.has_robustness_columns()); // the conforming runner has no such columns
  CHECK(none.has_robustness_columns());        // the perturbed runner always records them
  for (const TraceRecord& rec : none.records) CHECK(rec.d.norm() == 0.0);

  DisturbanceModel zeros;
  zeros.kind = DisturbanceModel::Kind::custom;
  zeros.sequence.assign(3, Eigen::VectorXd::Zero(6));
  MarketTrace custom = run_perturbed(c.cse, c.b1, sched, zeros, stop, IsoPolicy{}, c.ref, 1.35, 42);
  check_shared_fields_equal(plain, custom);
}

TEST_CASE("bounded disturbances respect their norm cap") {
  const PresetContext& c = ctx();
  DisturbanceModel model;
  model.kind = DisturbanceModel::Kind::bounded;
  model.d_max = 0.05;
  MarketTrace t = run_perturbed(c.cse, c.b1, StepsizeSchedule{}, model,
                                StoppingCriterion{1e-9, 200}, IsoPolicy{}, c.ref, 1.35, 7);
  REQUIRE(t.records.size() == 200);
  CHECK(t.has_robustness_columns());
  double largest = 0.0;
  for (const TraceRecord& rec : t.records) {
    CHECK(rec.d.norm() <= 0.05 + 1e-15);
    largest = std::max(largest, rec.d.norm());
  }
  CHECK(largest > 0.0); // the model actually perturbs
}

TEST_CASE("state-proportional disturbances scale with the distance to equilibrium") {
  const PresetContext& c = ctx();
  DisturbanceModel model;
  model.kind = DisturbanceModel::Kind::state_proportional;
  model.theta = 0.1;
  MarketTrace t = run_perturbed(c.cse, c.b1, StepsizeSchedule{}, model,
                                StoppingCriterion{1e-9, 200}, IsoPolicy{}, c.ref, 1.35, 7);
  for (const TraceRecord& rec : t.records)
    CHECK(rec.d.norm() <= 0.1 * rec.dist_to_bstar + 1e-15);

  // The model is defined relative to the equilibrium profile.
  CHECK_THROWS_AS(run_perturbed(c.cse, c.b1, StepsizeSchedule{}, model,
                                StoppingCriterion{1e-9, 10}),
                  PreconditionError);
}

TEST_CASE("stepsize variation records the induced equivalent disturbance exactly") {
  const PresetContext& c = ctx();
  StepsizeSchedule sched;
  sched.kind = StepsizeSchedule::Kind::per_generator_random;
  sched.beta = 0.01;
  sched.lo = 0.001;
  sched.hi = 0.1;
  sched.seed = 5;
  DisturbanceModel model;
  model.kind = DisturbanceModel::Kind::stepsize_variation;
  MarketTrace t = run_perturbed(c.cse, c.b1, sched, model, StoppingCriterion{1e-9, 150},
                                IsoPolicy{}, c.ref, 1.35, 5);
  for (const TraceRecord& rec : t.records) {
    REQUIRE(rec.beta_by_gen.size() == 6);
    Eigen::VectorXd expect =
        ((rec.beta_by_gen.array() - rec.beta) * (rec.x_opt.array() - rec.q.array())).matrix();
    CHECK((rec.d - expect).norm() == 0.0);
  }

  // This model is the induced identity, so it needs per-generator stepsizes,
  // and additive models refuse them.
  CHECK_THROWS_AS(run_perturbed(c.cse, c.b1, StepsizeSchedule{}, model,
                                StoppingCriterion{1e-9, 10}, IsoPolicy{}, c.ref, 1.35, 5),
                  PreconditionError);
  DisturbanceModel bounded;
  bounded.kind = DisturbanceModel::Kind::bounded;
  bounded.d_max = 0.01;
  CHECK_THROWS_AS(
      run_perturbed(c.cse, c.b1, sched, bounded, StoppingCriterion{1e-9, 10}, IsoPolicy{}, c.ref,
                    1.35, 5),
      PreconditionError);
}

TEST_CASE("disturbance envelope constants") {
  const PresetContext& c = ctx();
  const double a_max = 0.1225;

  SUBCASE("additive part vanishes with d_max") {
    PerturbedBounds pb = perturbed_bounds(c.cse, 1.35, 0.01, 0.1, 0.0);
    double b_of_r = compute_B(c.cse, 1.35);
    CHECK(pb.g1 == doctest::Approx(std::sqrt(b_of_r * 1.35 * 1.35 / (2.0 * a_max) + 1.35 * 1.35))
                       .epsilon(1e-12));
    CHECK(pb.g2 == 0.0);
    CHECK(pb.g == pb.g1);
  }

  SUBCASE("hand re-evaluation at a working point") {
    PerturbedBounds pb = perturbed_bounds(c.cse, 1.35, 0.01, 0.1, 0.05);
    double b_of_r = compute_B(c.cse, 1.35);
    double g1 = std::sqrt(b_of_r * 1.35 * 1.35 / (2.0 * a_max) + (0.1 + 1.35) * (0.1 + 1.35));
    double g2 = (2.0 + 10.0) * 0.05;
    CHECK(pb.g1 == doctest::Approx(g1).epsilon(1e-12));
    CHECK(pb.g2 == doctest::Approx(g2).epsilon(1e-12));
    CHECK(pb.g == doctest::Approx(std::max(g1, g2)).epsilon(1e-12));
    CHECK(pb.rate_factor ==
          doctest::Approx(1.0 - 0.01 / (2.0 * a_max) + 0.2 + 0.04).epsilon(1e-12));
    // This point does not contract, so no finite ultimate bound is claimed.
    CHECK(pb.rate_factor > 1.0);
    CHECK(std::isinf(pb.ultimate));
  }

  SUBCASE("contraction holds exactly when the proportional terms stay small") {
    for (double alpha : {0.05, 0.1, 0.12}) {
      for (double theta : {0.01, 0.05, 0.12}) {
        double limit = (1.0 - alpha / (2.0 * a_max)) / 6.0;
        if (theta >= limit) continue;
        PerturbedBounds pb = perturbed_bounds(c.cse, 1.35, alpha, theta, 0.02);
        bool contracts = 2.0 * theta + 4.0 * theta * theta < alpha / (2.0 * a_max);
        CHECK((pb.rate_factor < 1.0) == contracts);
        CHECK(std::isfinite(pb.ultimate) == contracts);
        if (contracts) CHECK(pb.ultimate == pb.g);
      }
    }
  }

  SUBCASE("theta admissibility is enforced and explained") {
    CHECK_THROWS_AS(perturbed_bounds(c.cse, 1.35, 0.01, 0.0, 0.05), PreconditionError);
    try {
      perturbed_bounds(c.cse, 1.35, 0.01, 0.2, 0.05);
      FAIL("expected a theta range error");
    } catch (const PreconditionError& e) {
      CHECK(std::string(e.what()).find("theta out of range") != std::string::npos);
    }
    CHECK_THROWS_AS(perturbed_bounds(c.cse, 1.35, 0.3, 0.05, 0.05), PreconditionError);
    CHECK_THROWS_AS(perturbed_bounds(c.cse, 0.0, 0.01, 0.05, 0.05), PreconditionError);
    CHECK_THROWS_AS(perturbed_bounds(c.cse, 1.35, 0.01, 0.05, -0.1), PreconditionError);
  }
}

TEST_CASE("a conforming 'deviant' changes nothing") {
  const PresetContext& c = ctx();
  StoppingCriterion stop{1e-6, 100};
  MarketTrace plain = run_baa(c.cse, c.b1, StepsizeSchedule{}, stop, IsoPolicy{}, c.ref, 1.35);
  MarketTrace dev = run_deviation(c.cse, c.b1, StepsizeSchedule{}, 2, make_conforming_strategy(),
                                  stop, IsoPolicy{}, c.ref, 1.35, 9);
  check_shared_fields_equal(plain, dev);
  CHECK_FALSE(dev.info_excess);
}

TEST_CASE("overpricing deviant is priced out of the dispatch") {
  const PresetContext& c = ctx();
  MarketTrace t = run_deviation(c.cse, c.b1, StepsizeSchedule{}, 2,
                                make_constant_bid_strategy(9.0), StoppingCriterion{1e-7, 800},
                                IsoPolicy{}, c.ref, 1.35, 9);
  REQUIRE(t.records.size() == 800);
  // From the second round on the deviant holds 9.0.
  for (std::size_t i = 1; i < t.records.size(); ++i) CHECK(t.records[i].b[1] == 9.0);
  // Tail: the same-bus rival undercuts it, so the deviant's dispatch is zero
  // and with it the payoff.
  for (std::size_t i = t.records.size() - 100; i < t.records.size(); ++i) {
    CHECK(t.records[i].x_opt[1] == 0.0);
    CHECK(t.records[i].payoffs[1] == 0.0);
  }
}

TEST_CASE("bidding below cost never earns a positive payoff") {
  const PresetContext& c = ctx();
  MarketTrace t = run_deviation(c.cse, c.b1, StepsizeSchedule{}, 2,
                                make_constant_bid_strategy(1.0), StoppingCriterion{1e-7, 300},
                                IsoPolicy{}, c.ref, 1.35, 9);
  for (std::size_t i = 1; i < t.records.size(); ++i) {
    CHECK(t.records[i].b[1] == 1.0);
    CHECK(t.records[i].payoffs[1] <= 1e-12);
  }
}

TEST_CASE("an empty coalition reproduces the conforming run") {
  const PresetContext& c = ctx();
  StoppingCriterion stop{1e-6, 100};
  MarketTrace plain = run_baa(c.cse, c.b1, StepsizeSchedule{}, stop, IsoPolicy{}, c.ref, 1.35);
  MarketTrace col = run_collusion(c.cse, c.b1, StepsizeSchedule{}, {}, {}, stop, IsoPolicy{},
                                  c.ref, 1.35, 3);
  check_shared_fields_equal(plain, col);
}

TEST_CASE("a fully colluding bus is rejected unless forced, and then flagged") {
  const PresetContext& c = ctx();
  std::vector<std::shared_ptr<Strategy>> strats = {make_constant_bid_strategy(6.0),
                                                   make_constant_bid_strategy(6.5)};
  StoppingCriterion stop{1e-7, 50};
  // Generators 1 and 2 are the whole of bus 1.
  try {
    run_collusion(c.cse, c.b1, StepsizeSchedule{}, {1, 2}, strats, stop, IsoPolicy{}, c.ref, 1.35,
                  3);
    FAIL("expected the unguarded-bus precondition to fire");
  } catch (const PreconditionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("bus 1") != std::string::npos);
    CHECK(msg.find("allow_unguarded_bus") != std::string::npos);
  }

  MarketTrace forced = run_collusion(c.cse, c.b1, StepsizeSchedule{}, {1, 2}, strats, stop,
                                     IsoPolicy{}, c.ref, 1.35, 3, /*allow_unguarded_bus=*/true);
  bool flagged = false;
  for (const std::string& w : forced.warnings)
    if (w.find("(forced)") != std::string::npos) flagged = true;
  CHECK(flagged);
}

TEST_CASE("oracle-informed strategies are reported, never silently accepted") {
  const PresetContext& c = ctx();
  MarketTrace t = run_deviation(c.cse, c.b1, StepsizeSchedule{}, 2,
                                make_uniform_above_star_strategy(0.5), StoppingCriterion{1e-7, 30},
                                IsoPolicy{}, c.ref, 1.35, 9);
  CHECK(t.info_excess);
  bool mentioned = false;
  for (const std::string& w : t.warnings)
    if (w.find("oracle information") != std::string::npos &&
        w.find("generator 2") != std::string::npos)
      mentioned = true;
  CHECK(mentioned);
}

TEST_CASE("a captive-demand coalition can escalate prices without limit") {
  // Bus 2 sits behind a 0.5-capacity line but carries a 2.0 load, so at
  // least 1.5 must clear locally no matter the bids.  Both local generators
  // collude and escalate; the cheaper one keeps the whole captive quantity
  // at an ever-growing price.  This is exactly the configuration the
  // conformer-per-bus precondition exists to exclude.
  NetworkCase cse = testcases::two_bus(0.5, 2.0, 0.5, {{0.1, 0.5}, {0.1, 0.5}},
                                       {{0.2, 1.0}, {0.2, 1.0}});
  Eigen::VectorXd b1(4);
  b1 << 0.6, 0.6, 1.5, 1.4;
  std::vector<std::shared_ptr<Strategy>> strats = {make_escalating_strategy(1.1),
                                                   make_escalating_strategy(1.1)};
  MarketTrace t = run_collusion(cse, b1, StepsizeSchedule{}, {3, 4}, strats,
                                StoppingCriterion{1e-9, 60}, IsoPolicy{}, {},
                                std::numeric_limits<double>::quiet_NaN(), 3,
                                /*allow_unguarded_bus=*/true);
  REQUIRE(t.records.size() == 60);
  for (const TraceRecord& rec : t.records) {
    // Captive local production.
    CHECK(rec.x_opt[2] + rec.x_opt[3] >= 1.5 - 1e-9);
    // The cheaper colluder carries it all.
    CHECK(rec.x_opt[3] == doctest::Approx(1.5).epsilon(1e-9));
  }
  for (std::size_t i = 1; i < t.records.size(); ++i)
    CHECK(t.records[i].payoffs[3] > t.records[i - 1].payoffs[3]);
  CHECK(t.records.back().payoffs[3] > 5.0 * t.records.front().payoffs[3]);
}

TEST_CASE("payoff envelope estimate over the invariant neighborhood") {
  const PresetContext& c = ctx();
  UmaxEstimate a = estimate_umax(c.cse, c.ref.b_star, 1.35, 1, 4000, 21);
  UmaxEstimate b = estimate_umax(c.cse, c.ref.b_star, 1.35, 1, 4000, 21);
  CHECK(a.value == b.value); // deterministic in the seed
  CHECK(a.samples == 4000);
  CHECK(a.generator_id == 1);

  // The ball radius uses the conservative exponent-1 inflation by default.
  double b_of_r = compute_B(c.cse, 1.35);
  CHECK(a.radius == doctest::Approx((1.0 + b_of_r / (2.0 * 0.1225)) * 1.35).epsilon(1e-12));

  // The center profile is always sampled, so the equilibrium payoff is a
  // floor; for generator 1 that floor is a_1 x_1^2.
  DispatchSolution ds = solve_dcopf(c.cse);
  double center = payoff(c.ref.b_star[0], ds.x[0], c.cse.generators[0]);
  CHECK(a.value >= center);
  CHECK(center == doctest::Approx(0.2239).epsilon(1e-3));

  UmaxEstimate tiny = estimate_umax(c.cse, c.ref.b_star, 1.35, 1, 1, 21);
  CHECK(tiny.value >= center - 1e-12);

  CHECK_THROWS_AS(estimate_umax(c.cse, c.ref.b_star, 1.35, 1, 0, 21), PreconditionError);
  CHECK_THROWS_AS(estimate_umax(c.cse, Eigen::VectorXd::Zero(3), 1.35, 1, 10, 21),
                  DimensionError);
}

TEST_CASE("a unilateral deviant cannot beat the neighborhood payoff ceiling forever") {
  const PresetContext& c = ctx();
  UmaxEstimate cap = estimate_umax(c.cse, c.ref.b_star, 1.35, 2, 4000, 21);
  MarketTrace t = run_deviation(c.cse, c.b1, StepsizeSchedule{}, 2,
                                make_constant_bid_strategy(9.0), StoppingCriterion{1e-7, 800},
                                IsoPolicy{}, c.ref, 1.35, 9);
  // In the tail of the run the deviant's payoff dips to the ceiling or below
  // again and again (here it is pinned at zero: the rival prices it out).
  double tail_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = t.records.size() - 200; i < t.records.size(); ++i)
    tail_min = std::min(tail_min, t.records[i].payoffs[1]);
  CHECK(tail_min <= cap.value + 1e-12);
}

TEST_SUITE_END();
