#include "bidsim/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "bidsim/opf.hpp"

namespace bidsim {

const Generator& StrategyView::gen() const { return cse_->generators[self_]; }

void StrategyView::require(InfoTier needed) const {
  if (static_cast<int>(tier_) < static_cast<int>(needed))
    throw PreconditionError("strategy requested information beyond its declared tier");
}

namespace {
double at(const std::vector<Eigen::VectorXd>* hist, int t, int n, int k) {
  if (t < 1 || t > k) throw PreconditionError("strategy requested an out-of-range iteration");
  return (*hist)[static_cast<std::size_t>(t - 1)][n];
}
}  // namespace

double StrategyView::own_bid(int t) const { return at(bids_, t, self_, k_); }
double StrategyView::own_dispatch(int t) const { return at(dispatch_, t, self_, k_); }
double StrategyView::own_quantity(int t) const { return at(quantities_, t, self_, k_); }
double StrategyView::own_stepsize(int t) const { return at(stepsizes_, t, self_, k_); }

const std::vector<int>& StrategyView::group() const {
  require(InfoTier::collusion);
  return group_;
}

double StrategyView::group_bid(int member, int t) const {
  require(InfoTier::collusion);
  if (std::find(group_.begin(), group_.end(), member) == group_.end())
    throw PreconditionError("strategy requested history of a generator outside its coalition");
  return at(bids_, t, member, k_);
}

double StrategyView::group_dispatch(int member, int t) const {
  require(InfoTier::collusion);
  if (std::find(group_.begin(), group_.end(), member) == group_.end())
    throw PreconditionError("strategy requested history of a generator outside its coalition");
  return at(dispatch_, t, member, k_);
}

double StrategyView::oracle_equilibrium_bid(int n) const {
  require(InfoTier::omniscient);
  if (!b_star_) throw PreconditionError("oracle information requires a run reference");
  return (*b_star_)[n];
}

double StrategyView::oracle_pending_bid(int n) const {
  require(InfoTier::omniscient);
  return (*pending_known_)[static_cast<std::size_t>(n)] ? (*pending_)[n]
                                                        : (*bids_)[k_ - 1][n];
}

namespace {

struct ConformingStrategy final : Strategy {
  double next_bid(const StrategyView& v, SubStream&) override {
    int k = v.k();
    return std::max(0.0, v.own_bid(k) + v.own_stepsize(k) * (v.own_dispatch(k) - v.own_quantity(k)));
  }
  std::string name() const override { return "conforming"; }
};

struct ConstantBidStrategy final : Strategy {
  explicit ConstantBidStrategy(double value) : value_(value) {}
  double next_bid(const StrategyView&, SubStream&) override { return value_; }
  std::string name() const override { return "constant"; }
  double value_;
};

struct UndercutStrategy final : Strategy {
  UndercutStrategy(int partner_id, double factor, double width)
      : partner_id_(partner_id), factor_(factor), width_(width) {}
  double next_bid(const StrategyView& v, SubStream& stream) override {
    int partner = partner_index_;
    double target = factor_ * v.oracle_pending_bid(partner);
    double floor = v.oracle_equilibrium_bid(v.self_index());
    if (target >= floor) return target;
    return stream.uniform(floor, floor + width_);
  }
  InfoTier tier() const override { return InfoTier::omniscient; }
  std::string name() const override { return "undercut"; }
  int partner_id_;
  double factor_, width_;
  int partner_index_ = -1; // resolved by the engine
};

struct UniformAboveStarStrategy final : Strategy {
  explicit UniformAboveStarStrategy(double width) : width_(width) {}
  double next_bid(const StrategyView& v, SubStream& stream) override {
    double floor = v.oracle_equilibrium_bid(v.self_index());
    return stream.uniform(floor, floor + width_);
  }
  InfoTier tier() const override { return InfoTier::omniscient; }
  std::string name() const override { return "uniform_above_star"; }
  double width_;
};

struct SequenceStrategy final : Strategy {
  explicit SequenceStrategy(std::vector<double> bids) : bids_(std::move(bids)) {
    if (bids_.empty()) throw PreconditionError("bid sequence strategy needs at least one value");
  }
  double next_bid(const StrategyView& v, SubStream&) override {
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(v.k() - 1), bids_.size() - 1);
    return bids_[i];
  }
  std::string name() const override { return "sequence"; }
  std::vector<double> bids_;
};

struct EscalatingStrategy final : Strategy {
  explicit EscalatingStrategy(double factor) : factor_(factor) {}
  double next_bid(const StrategyView& v, SubStream&) override {
    return factor_ * v.own_bid(v.k());
  }
  std::string name() const override { return "escalating"; }
  double factor_;
};

Eigen::VectorXd unit_direction(SubStream& stream, int n) {
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = stream.normal();
  double nrm = d.norm();
  if (nrm < 1e-12) {
    d.setZero();
    d[0] = 1.0;
    return d;
  }
  return d / nrm;
}

}  // namespace

std::shared_ptr<Strategy> make_conforming_strategy() { return std::make_shared<ConformingStrategy>(); }
std::shared_ptr<Strategy> make_constant_bid_strategy(double value) {
  return std::make_shared<ConstantBidStrategy>(value);
}
std::shared_ptr<Strategy> make_undercut_strategy(int partner_gen_id, double factor, double width) {
  return std::make_shared<UndercutStrategy>(partner_gen_id, factor, width);
}
std::shared_ptr<Strategy> make_uniform_above_star_strategy(double width) {
  return std::make_shared<UniformAboveStarStrategy>(width);
}
std::shared_ptr<Strategy> make_sequence_strategy(std::vector<double> bids) {
  return std::make_shared<SequenceStrategy>(std::move(bids));
}
std::shared_ptr<Strategy> make_escalating_strategy(double factor) {
  return std::make_shared<EscalatingStrategy>(factor);
}

class RunEngine {
 public:
  RunEngine(const NetworkCase& cse, const Eigen::VectorXd& b1, const StepsizeSchedule& schedule,
            const DisturbanceModel& model, const StoppingCriterion& stop, const IsoPolicy& policy,
            const std::optional<RunReference>& ref, double r, std::uint64_t seed)
      : cse_(cse), b1_(b1), schedule_(schedule), model_(model), stop_(stop), policy_(policy),
        ref_(ref), r_(r), seed_(seed) {}

  void add_strategist(int gen_index, std::shared_ptr<Strategy> strategy) {
    strategists_[gen_index] = std::move(strategy);
  }
  void set_group(std::vector<int> group) { group_ = std::move(group); }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  MarketTrace run() {
    const int ng = cse_.n_generators();
    validate();

    MarketTrace trace;
    trace.r = r_;
    trace.warnings = warnings_;
    if (ref_) {
      trace.b_star = ref_->b_star;
      trace.x_star = ref_->x_star;
    }
    for (const auto& [n, s] : strategists_) {
      if (s->tier() == InfoTier::omniscient) {
        trace.info_excess = true;
        trace.warnings.push_back("strategy '" + s->name() + "' for generator " +
                                 std::to_string(cse_.generators[n].id) +
                                 " uses oracle information beyond any participant's view");
      }
    }

    SubStream beta_stream(schedule_.seed, "stepsizes");
    SubStream dist_stream(seed_, "disturbances");
    std::map<int, SubStream> strat_streams;
    for (const auto& [n, s] : strategists_)
      strat_streams.emplace(n, SubStream(seed_, "strategies", static_cast<std::uint64_t>(n)));

    Eigen::VectorXd b = b1_;
    for (int k = 1; k <= stop_.max_iters; ++k) {
      LpSolution lp = solve_sdcopf(cse_, b, policy_.at_round(static_cast<std::uint64_t>(k)));
      Eigen::VectorXd q(ng);
      for (int n = 0; n < ng; ++n) q[n] = best_response_quantity(b[n], cse_.generators[n]);
      Eigen::VectorXd beta_vec = schedule_.draw(k, ng, beta_stream);
      double beta_nom = schedule_.nominal(k);

      Eigen::VectorXd d = draw_disturbance(k, b, lp.x_opt, q, beta_vec, beta_nom, dist_stream);

      TraceRecord rec;
      rec.k = k;
      rec.b = b;
      rec.x_opt = lp.x_opt;
      rec.q = q;
      rec.beta = beta_nom;
      if (schedule_.per_generator()) rec.beta_by_gen = beta_vec;
      if (ref_) rec.dist_to_bstar = (b - ref_->b_star).norm();
      rec.d = d;
      rec.payoffs = Eigen::VectorXd(ng);
      for (int n = 0; n < ng; ++n)
        rec.payoffs[n] = payoff(b[n], lp.x_opt[n], cse_.generators[n]);
      trace.records.push_back(rec);

      bids_hist_.push_back(b);
      dispatch_hist_.push_back(lp.x_opt);
      q_hist_.push_back(q);
      beta_hist_.push_back(model_.additive() ? Eigen::VectorXd::Constant(ng, beta_nom)
                                             : beta_vec);

      // Conforming updates first; strategists see them as pending bids.
      Eigen::VectorXd b_next(ng);
      std::vector<bool> pending_known(ng, false);
      for (int n = 0; n < ng; ++n) {
        if (strategists_.count(n)) continue;
        double pre = model_.additive() ? b[n] + beta_nom * (lp.x_opt[n] - q[n]) + d[n]
                                       : b[n] + beta_vec[n] * (lp.x_opt[n] - q[n]);
        b_next[n] = std::max(0.0, pre);
        pending_known[static_cast<std::size_t>(n)] = true;
      }
      for (const auto& [n, strategy] : strategists_) {
        StrategyView view;
        view.cse_ = &cse_;
        view.k_ = k;
        view.self_ = n;
        view.tier_ = strategy->tier();
        view.bids_ = &bids_hist_;
        view.dispatch_ = &dispatch_hist_;
        view.quantities_ = &q_hist_;
        view.stepsizes_ = &beta_hist_;
        view.group_ = group_;
        view.b_star_ = ref_ ? &ref_->b_star : nullptr;
        view.pending_ = &b_next;
        view.pending_known_ = &pending_known;
        double bid = strategy->next_bid(view, strat_streams.at(n));
        if (!std::isfinite(bid))
          throw PreconditionError("strategy '" + strategy->name() + "' produced a non-finite bid");
        b_next[n] = std::max(0.0, bid);
      }

      double step = (b_next - b).norm();
      b = b_next;
      if (step <= stop_.epsilon) break;
    }

    if (ref_ && !std::isnan(r_)) {
      for (const auto& rec : trace.records) {
        if (rec.dist_to_bstar < r_) {
          trace.entry_index = rec.k;
          break;
        }
      }
    }
    return trace;
  }

 private:
  void validate() {
    const int ng = cse_.n_generators();
    if (b1_.size() != ng) throw DimensionError("initial bid profile does not match the case");
    Eigen::VectorXd c = cse_.cost_c();
    for (int n = 0; n < ng; ++n)
      if (b1_[n] < c[n] - 1e-12)
        throw PreconditionError("initial bid below linear cost for generator " +
                                std::to_string(cse_.generators[n].id));
    schedule_.validate(cse_, /*conforming_required=*/true);
    if (model_.additive() && schedule_.per_generator())
      throw PreconditionError(
          "additive disturbances need a common stepsize; fold per-generator stepsizes into a "
          "stepsize_variation disturbance instead");
    if (model_.kind == DisturbanceModel::Kind::stepsize_variation && !schedule_.per_generator())
      throw PreconditionError("stepsize_variation disturbance needs a per-generator schedule");
    if (model_.kind == DisturbanceModel::Kind::state_proportional) {
      if (!ref_) throw PreconditionError("state-proportional disturbance needs a run reference");
      if (!(model_.theta > 0.0)) throw PreconditionError("state-proportional theta must be positive");
    }
    if (model_.kind == DisturbanceModel::Kind::bounded && model_.d_max < 0.0)
      throw PreconditionError("bounded disturbance needs d_max >= 0");
    if (model_.kind == DisturbanceModel::Kind::custom)
      for (const auto& entry : model_.sequence)
        if (entry.size() != ng)
          throw DimensionError("custom disturbance entries must match the generator count");
    for (const auto& [n, s] : strategists_) {
      if (n < 0 || n >= ng) throw PreconditionError("strategist index out of range");
      if (!s) throw PreconditionError("null strategy");
    }
  }

  Eigen::VectorXd draw_disturbance(int k, const Eigen::VectorXd& b, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& q, const Eigen::VectorXd& beta_vec,
                                   double beta_nom, SubStream& stream) {
    const int ng = cse_.n_generators();
    switch (model_.kind) {
      case DisturbanceModel::Kind::none:
        return Eigen::VectorXd::Zero(ng);
      case DisturbanceModel::Kind::bounded: {
        Eigen::VectorXd dir = unit_direction(stream, ng);
        return dir * (model_.d_max * stream.uniform01());
      }
      case DisturbanceModel::Kind::state_proportional: {
        double dist = (b - ref_->b_star).norm();
        Eigen::VectorXd dir = unit_direction(stream, ng);
        return dir * (model_.theta * dist * stream.uniform01());
      }
      case DisturbanceModel::Kind::stepsize_variation:
        return ((beta_vec.array() - beta_nom) * (x.array() - q.array())).matrix();
      case DisturbanceModel::Kind::custom: {
        std::size_t i = static_cast<std::size_t>(k - 1);
        if (i < model_.sequence.size()) return model_.sequence[i];
        return Eigen::VectorXd::Zero(ng);
      }
    }
    return Eigen::VectorXd::Zero(ng);
  }

  const NetworkCase& cse_;
  Eigen::VectorXd b1_;
  StepsizeSchedule schedule_;
  DisturbanceModel model_;
  StoppingCriterion stop_;
  IsoPolicy policy_;
  std::optional<RunReference> ref_;
  double r_;
  std::uint64_t seed_;
  std::map<int, std::shared_ptr<Strategy>> strategists_;
  std::vector<int> group_;
  std::vector<std::string> warnings_;

  std::vector<Eigen::VectorXd> bids_hist_, dispatch_hist_, q_hist_, beta_hist_;
};

MarketTrace run_perturbed(const NetworkCase& cse, const Eigen::VectorXd& b1,
                          const StepsizeSchedule& schedule, const DisturbanceModel& model,
                          const StoppingCriterion& stop, const IsoPolicy& policy,
                          const std::optional<RunReference>& ref, double r, std::uint64_t seed) {
  RunEngine engine(cse, b1, schedule, model, stop, policy, ref, r, seed);
  return engine.run();
}

PerturbedBounds perturbed_bounds(const NetworkCase& cse, double r, double alpha, double theta,
                                 double d_max) {
  double a_max = cse.cost_a().maxCoeff();
  if (!(r > 0.0)) throw PreconditionError("radius r must be positive");
  if (!(alpha > 0.0) || !(alpha < 2.0 * a_max))
    throw PreconditionError("alpha must lie in (0, 2 a_max)");
  if (d_max < 0.0) throw PreconditionError("d_max must be nonnegative");
  double s = 1.0 - alpha / (2.0 * a_max);
  if (!(theta > 0.0) || !(theta < s / 6.0))
    throw PreconditionError("theta out of range: needs 0 < theta < (1 - alpha/(2 a_max))/6 = " +
                            fmt_sig10(s / 6.0));
  PerturbedBounds out;
  out.rate_factor = s + 2.0 * theta + 4.0 * theta * theta;
  double b_of_r = compute_B(cse, r);
  out.g1 = std::sqrt(b_of_r * r * r / (2.0 * a_max) + (2.0 * d_max + r) * (2.0 * d_max + r));
  out.g2 = (2.0 + 1.0 / theta) * d_max;
  out.g = std::max(out.g1, out.g2);
  out.ultimate = out.rate_factor < 1.0 ? out.g : std::numeric_limits<double>::infinity();
  return out;
}

MarketTrace run_deviation(const NetworkCase& cse, const Eigen::VectorXd& b1,
                          const StepsizeSchedule& schedule, int deviant_gen_id,
                          std::shared_ptr<Strategy> strategy, const StoppingCriterion& stop,
                          const IsoPolicy& policy, const std::optional<RunReference>& ref, double r,
                          std::uint64_t seed) {
  int n = cse.generator_index(deviant_gen_id);
  RunEngine engine(cse, b1, schedule, DisturbanceModel{}, stop, policy, ref, r, seed);
  engine.add_strategist(n, std::move(strategy));
  engine.set_group({n});
  return engine.run();
}

MarketTrace run_collusion(const NetworkCase& cse, const Eigen::VectorXd& b1,
                          const StepsizeSchedule& schedule, const std::vector<int>& member_gen_ids,
                          const std::vector<std::shared_ptr<Strategy>>& strategies,
                          const StoppingCriterion& stop, const IsoPolicy& policy,
                          const std::optional<RunReference>& ref, double r, std::uint64_t seed,
                          bool allow_unguarded_bus) {
  if (strategies.size() != member_gen_ids.size())
    throw PreconditionError("one strategy per coalition member is required");

  RunEngine engine(cse, b1, schedule, DisturbanceModel{}, stop, policy, ref, r, seed);
  std::vector<int> group;
  std::set<int> member_set;
  for (std::size_t i = 0; i < member_gen_ids.size(); ++i) {
    int n = cse.generator_index(member_gen_ids[i]);
    if (!member_set.insert(n).second)
      throw PreconditionError("generator " + std::to_string(member_gen_ids[i]) +
                              " listed twice in the coalition");
    group.push_back(n);
    // Resolve undercut partners to declaration indices.
    if (auto* uc = dynamic_cast<UndercutStrategy*>(strategies[i].get()))
      uc->partner_index_ = cse.generator_index(uc->partner_id_);
    engine.add_strategist(n, strategies[i]);
  }
  std::sort(group.begin(), group.end());
  engine.set_group(group);

  for (const auto& bus : cse.buses) {
    int total = 0, conforming = 0;
    for (int n = 0; n < cse.n_generators(); ++n) {
      if (cse.generators[n].bus != bus.id) continue;
      ++total;
      if (!member_set.count(n)) ++conforming;
    }
    if (total > 0 && conforming == 0) {
      std::string msg = "bus " + std::to_string(bus.id) +
                        " has every generator in the coalition; containment needs a conformer";
      if (!allow_unguarded_bus) throw PreconditionError(msg + " (set allow_unguarded_bus to force)");
      engine.add_warning(msg + " (forced)");
    }
  }
  return engine.run();
}

UmaxEstimate estimate_umax(const NetworkCase& cse, const Eigen::VectorXd& b_star, double r,
                           int gen_id, long samples, std::uint64_t seed, double exponent) {
  const int ng = cse.n_generators();
  if (b_star.size() != ng) throw DimensionError("equilibrium bid profile does not match the case");
  if (r < 0.0) throw PreconditionError("radius r must be nonnegative");
  if (samples < 1) throw PreconditionError("at least one sample is required");
  int n = cse.generator_index(gen_id);
  const Generator& gen = cse.generators[n];

  double radius =
      r > 0.0 ? ultimate_bound_value(compute_B(cse, r), cse.cost_a().maxCoeff(), r, exponent) : 0.0;
  const bool small = ng + 2 * cse.n_lines() <= 12;

  DispatchSolution ideal = solve_dcopf(cse);
  SubStream stream(seed, "umax");
  double best = -std::numeric_limits<double>::infinity();

  for (long s = 0; s < samples; ++s) {
    Eigen::VectorXd bids;
    if (s == 0) {
      bids = b_star;
    } else {
      Eigen::VectorXd dir = unit_direction(stream, ng);
      bids = (b_star + dir * (radius * stream.uniform01())).cwiseMax(0.0);
    }
    if (small) {
      auto verts = enumerate_vertices(cse, bids);
      double obj_min = std::numeric_limits<double>::infinity();
      for (const auto& v : verts) obj_min = std::min(obj_min, v.objective);
      for (const auto& v : verts)
        if (v.objective <= obj_min + 1e-9)
          best = std::max(best, payoff(bids[n], v.x_opt[n], gen));
    } else {
      best = std::max(best, payoff(bids[n], solve_sdcopf(cse, bids).x_opt[n], gen));
      for (std::uint64_t rround = 0; rround < 2; ++rround) {
        IsoPolicy pol = IsoPolicy::randomized(stream.next_u64(), rround);
        best = std::max(best, payoff(bids[n], solve_sdcopf(cse, bids, pol).x_opt[n], gen));
      }
    }
    if (s == 0) best = std::max(best, payoff(b_star[n], ideal.x[n], gen));
  }

  UmaxEstimate est;
  est.generator_id = gen_id;
  est.value = best;
  est.samples = samples;
  est.radius = radius;
  est.seed = seed;
  return est;
}

}  // namespace bidsim
