#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bidsim/dynamics.hpp"

namespace bidsim {

// Additive bid-update disturbances.  "stepsize_variation" is not an additive
// draw: the update runs with each generator's own stepsize and the recorded
// disturbance is the induced identity (beta_n - beta_nominal) * (x_opt - q).
struct DisturbanceModel {
  enum class Kind { none, state_proportional, bounded, stepsize_variation, custom };
  Kind kind = Kind::none;
  double theta = 0.0; // state_proportional: ||d(k)|| <= theta * ||b(k) - b*||
  double d_max = 0.0; // bounded: ||d(k)|| <= d_max
  std::vector<Eigen::VectorXd> sequence; // custom per-iteration terms; zeros past the end

  bool additive() const {
    return kind == Kind::state_proportional || kind == Kind::bounded || kind == Kind::custom;
  }
};

// What a strategy is allowed to see.  own_history: the generator's own bids,
// dispatches, quantities, and stepsizes.  collusion: additionally the bid and
// dispatch history of the coalition.  omniscient: additionally the
// equilibrium bids and the freshly computed next-round conformer bids — more
// than any market participant observes; runs using such a strategy are
// flagged, never silently accepted.
enum class InfoTier { own_history, collusion, omniscient };

class StrategyView {
 public:
  int k() const { return k_; }            // completed iterations; history t = 1..k
  int self_index() const { return self_; } // generator declaration index
  const Generator& gen() const;

  double own_bid(int t) const;
  double own_dispatch(int t) const;
  double own_quantity(int t) const;
  double own_stepsize(int t) const;

  const std::vector<int>& group() const; // coalition member indices
  double group_bid(int member, int t) const;
  double group_dispatch(int member, int t) const;

  double oracle_equilibrium_bid(int n) const;
  // Round k+1 bid of generator n when already determined (conformers are
  // updated first); falls back to the round-k bid otherwise.
  double oracle_pending_bid(int n) const;

 private:
  friend class RunEngine;
  StrategyView() = default;
  void require(InfoTier needed) const;

  const NetworkCase* cse_ = nullptr;
  int k_ = 0;
  int self_ = -1;
  InfoTier tier_ = InfoTier::own_history;
  const std::vector<Eigen::VectorXd>* bids_ = nullptr;     // per iteration, full profiles
  const std::vector<Eigen::VectorXd>* dispatch_ = nullptr;
  const std::vector<Eigen::VectorXd>* quantities_ = nullptr;
  const std::vector<Eigen::VectorXd>* stepsizes_ = nullptr;
  std::vector<int> group_;
  const Eigen::VectorXd* b_star_ = nullptr;
  const Eigen::VectorXd* pending_ = nullptr;
  const std::vector<bool>* pending_known_ = nullptr;
};

struct Strategy {
  virtual ~Strategy() = default;
  virtual double next_bid(const StrategyView& view, SubStream& stream) = 0;
  virtual InfoTier tier() const { return InfoTier::own_history; }
  virtual std::string name() const = 0;
};

std::shared_ptr<Strategy> make_conforming_strategy();
std::shared_ptr<Strategy> make_constant_bid_strategy(double value);
// Bid factor * (partner's freshly updated bid) while that stays at or above
// own equilibrium bid, else draw uniformly within width above it.
std::shared_ptr<Strategy> make_undercut_strategy(int partner_gen_id, double factor = 0.99,
                                                 double width = 1.0);
std::shared_ptr<Strategy> make_uniform_above_star_strategy(double width = 1.0);
// Fixed bid sequence applied from the second round on (the first round plays
// the configured initial bid); the last entry repeats.
std::shared_ptr<Strategy> make_sequence_strategy(std::vector<double> bids);
// Multiplies own previous bid by a factor each round.
std::shared_ptr<Strategy> make_escalating_strategy(double factor);

// Perturbed run: conforming updates plus the disturbance model.  With the
// model "none" (or an all-zero custom sequence) the records match run_baa
// bit for bit under the same seed and policy.
MarketTrace run_perturbed(const NetworkCase& cse, const Eigen::VectorXd& b1,
                          const StepsizeSchedule& schedule, const DisturbanceModel& model,
                          const StoppingCriterion& stop, const IsoPolicy& policy = {},
                          const std::optional<RunReference>& ref = {},
                          double r = std::numeric_limits<double>::quiet_NaN(),
                          std::uint64_t seed = 0);

struct PerturbedBounds {
  double g1 = 0.0;
  double g2 = 0.0;
  double g = 0.0;          // max(g1, g2)
  double rate_factor = 0.0; // 1 - alpha/(2 a_max) + 2 theta + 4 theta^2
  double ultimate = 0.0;    // g when the rate factor contracts, +inf otherwise
};

// Disturbance-robustness envelope constants at radius r, stepsize lower
// bound alpha, proportional level theta, and additive bound d_max.  theta
// must lie in (0, (1 - alpha/(2 a_max))/6); a range error says so.  Note the
// rate factor contracts only when 2 theta + 4 theta^2 < alpha/(2 a_max),
// which admissibility alone does not imply.
PerturbedBounds perturbed_bounds(const NetworkCase& cse, double r, double alpha, double theta,
                                 double d_max);

// Single strategic deviant among conformers.
MarketTrace run_deviation(const NetworkCase& cse, const Eigen::VectorXd& b1,
                          const StepsizeSchedule& schedule, int deviant_gen_id,
                          std::shared_ptr<Strategy> strategy, const StoppingCriterion& stop,
                          const IsoPolicy& policy = {},
                          const std::optional<RunReference>& ref = {},
                          double r = std::numeric_limits<double>::quiet_NaN(),
                          std::uint64_t seed = 0);

// Coalition of strategists sharing their histories.  Preconditions: at least
// one conformer remains at every generating bus (override with
// allow_unguarded_bus, which records a warning: an unguarded bus loses every
// containment property).  An empty coalition reproduces run_baa exactly.
MarketTrace run_collusion(const NetworkCase& cse, const Eigen::VectorXd& b1,
                          const StepsizeSchedule& schedule, const std::vector<int>& member_gen_ids,
                          const std::vector<std::shared_ptr<Strategy>>& strategies,
                          const StoppingCriterion& stop, const IsoPolicy& policy = {},
                          const std::optional<RunReference>& ref = {},
                          double r = std::numeric_limits<double>::quiet_NaN(),
                          std::uint64_t seed = 0, bool allow_unguarded_bus = false);

struct UmaxEstimate {
  int generator_id = 0;
  double value = 0.0;
  long samples = 0;
  double radius = 0.0; // of the bid ball around the equilibrium profile
  std::uint64_t seed = 0;
};

// Monte-Carlo upper envelope of one generator's payoff over bid profiles in
// the ball around b_star of radius (1 + B(r)/(2 a_max))^exponent * r and the
// ISO's optimal vertices there.  The default exponent 1 gives a ball that
// contains the invariant neighborhood (whose radius uses exponent 1/2), so
// the estimate stays an upper envelope; the knob exists because the wider
// printed radius is believed conservative.  Samples draw a uniform direction
// and a uniform radius; the center profile is always included, evaluated
// both at the efficient dispatch and at clearing vertices.
UmaxEstimate estimate_umax(const NetworkCase& cse, const Eigen::VectorXd& b_star, double r,
                           int gen_id, long samples, std::uint64_t seed, double exponent = 1.0);

}  // namespace bidsim
