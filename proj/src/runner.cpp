#include "bidsim/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bidsim {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw SchemaError(where + ": unknown key '" + it.key() + "'");
}

const json& need(const json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
  return j.at(key);
}

double as_number(const json& j, const std::string& where) {
  if (!j.is_number()) throw SchemaError(where + ": expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw SchemaError(where + ": expected an integer");
  return j.get<int>();
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw SchemaError(where + ": expected a string");
  return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw SchemaError(where + ": expected a boolean");
  return j.get<bool>();
}

Eigen::VectorXd as_vector(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<int>(i)] = as_number(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

StepsizeSchedule schedule_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"kind", "beta", "lo", "hi", "rho", "values", "alpha"});
  StepsizeSchedule s;
  std::string kind = as_string(need(j, where, "kind"), where + ".kind");
  if (kind == "constant") {
    s.kind = StepsizeSchedule::Kind::constant;
    s.beta = as_number(need(j, where, "beta"), where + ".beta");
  } else if (kind == "per_generator_random") {
    s.kind = StepsizeSchedule::Kind::per_generator_random;
    s.lo = as_number(need(j, where, "lo"), where + ".lo");
    s.hi = as_number(need(j, where, "hi"), where + ".hi");
    s.beta = j.contains("beta") ? as_number(j.at("beta"), where + ".beta") : 0.5 * (s.lo + s.hi);
  } else if (kind == "decaying") {
    s.kind = StepsizeSchedule::Kind::decaying;
    s.lo = as_number(need(j, where, "lo"), where + ".lo");
    s.hi = as_number(need(j, where, "hi"), where + ".hi");
    s.beta = as_number(need(j, where, "beta"), where + ".beta");
    if (j.contains("rho")) s.rho = as_number(j.at("rho"), where + ".rho");
  } else if (kind == "custom") {
    s.kind = StepsizeSchedule::Kind::custom;
    const json& vals = need(j, where, "values");
    if (!vals.is_array() || vals.empty())
      throw SchemaError(where + ".values: expected a non-empty array");
    for (std::size_t i = 0; i < vals.size(); ++i)
      s.values.push_back(as_number(vals[i], where + ".values[" + std::to_string(i) + "]"));
    s.beta = s.values.front();
  } else {
    throw SchemaError(where + ".kind: unknown schedule kind '" + kind + "'");
  }
  if (j.contains("alpha")) s.alpha = as_number(j.at("alpha"), where + ".alpha");
  return s;
}

json schedule_to_json(const StepsizeSchedule& s) {
  json j;
  switch (s.kind) {
    case StepsizeSchedule::Kind::constant:
      j["kind"] = "constant";
      j["beta"] = s.beta;
      break;
    case StepsizeSchedule::Kind::per_generator_random:
      j["kind"] = "per_generator_random";
      j["lo"] = s.lo;
      j["hi"] = s.hi;
      j["beta"] = s.beta;
      break;
    case StepsizeSchedule::Kind::decaying:
      j["kind"] = "decaying";
      j["lo"] = s.lo;
      j["hi"] = s.hi;
      j["beta"] = s.beta;
      j["rho"] = s.rho;
      break;
    case StepsizeSchedule::Kind::custom:
      j["kind"] = "custom";
      j["values"] = s.values;
      break;
  }
  if (s.alpha) j["alpha"] = *s.alpha;
  return j;
}

DisturbanceModel disturbance_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"kind", "theta", "d_max", "values"});
  DisturbanceModel m;
  std::string kind = as_string(need(j, where, "kind"), where + ".kind");
  if (kind == "state_proportional") {
    m.kind = DisturbanceModel::Kind::state_proportional;
    m.theta = as_number(need(j, where, "theta"), where + ".theta");
  } else if (kind == "bounded") {
    m.kind = DisturbanceModel::Kind::bounded;
    m.d_max = as_number(need(j, where, "d_max"), where + ".d_max");
  } else if (kind == "stepsize_variation") {
    m.kind = DisturbanceModel::Kind::stepsize_variation;
  } else if (kind == "custom") {
    m.kind = DisturbanceModel::Kind::custom;
    const json& vals = need(j, where, "values");
    if (!vals.is_array()) throw SchemaError(where + ".values: expected an array of arrays");
    for (std::size_t i = 0; i < vals.size(); ++i)
      m.sequence.push_back(as_vector(vals[i], where + ".values[" + std::to_string(i) + "]"));
  } else if (kind == "none") {
    m.kind = DisturbanceModel::Kind::none;
  } else {
    throw SchemaError(where + ".kind: unknown disturbance kind '" + kind + "'");
  }
  return m;
}

json disturbance_to_json(const DisturbanceModel& m) {
  json j;
  switch (m.kind) {
    case DisturbanceModel::Kind::none:
      j["kind"] = "none";
      break;
    case DisturbanceModel::Kind::state_proportional:
      j["kind"] = "state_proportional";
      j["theta"] = m.theta;
      break;
    case DisturbanceModel::Kind::bounded:
      j["kind"] = "bounded";
      j["d_max"] = m.d_max;
      break;
    case DisturbanceModel::Kind::stepsize_variation:
      j["kind"] = "stepsize_variation";
      break;
    case DisturbanceModel::Kind::custom: {
      j["kind"] = "custom";
      j["values"] = json::array();
      for (const auto& v : m.sequence) j["values"].push_back(vec_to_json(v));
      break;
    }
  }
  return j;
}

}  // namespace

StrategySpec StrategySpec::from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"kind", "value", "partner", "factor", "width", "bids"});
  StrategySpec s;
  s.kind = as_string(need(j, where, "kind"), where + ".kind");
  if (s.kind == "conforming") {
  } else if (s.kind == "constant") {
    s.value = as_number(need(j, where, "value"), where + ".value");
  } else if (s.kind == "undercut") {
    if (j.contains("partner")) s.partner = as_int(j.at("partner"), where + ".partner");
    if (j.contains("factor")) s.factor = as_number(j.at("factor"), where + ".factor");
    if (j.contains("width")) s.width = as_number(j.at("width"), where + ".width");
  } else if (s.kind == "uniform_above_star") {
    if (j.contains("width")) s.width = as_number(j.at("width"), where + ".width");
  } else if (s.kind == "sequence") {
    const json& vals = need(j, where, "bids");
    if (!vals.is_array() || vals.empty())
      throw SchemaError(where + ".bids: expected a non-empty array");
    for (std::size_t i = 0; i < vals.size(); ++i)
      s.bids.push_back(as_number(vals[i], where + ".bids[" + std::to_string(i) + "]"));
  } else if (s.kind == "escalating") {
    s.factor = as_number(need(j, where, "factor"), where + ".factor");
  } else {
    throw SchemaError(where + ".kind: unknown strategy kind '" + s.kind + "'");
  }
  return s;
}

json StrategySpec::to_json() const {
  json j;
  j["kind"] = kind;
  if (kind == "constant") j["value"] = value;
  if (kind == "undercut") {
    j["partner"] = partner;
    j["factor"] = factor;
    j["width"] = width;
  }
  if (kind == "uniform_above_star") j["width"] = width;
  if (kind == "sequence") j["bids"] = bids;
  if (kind == "escalating") j["factor"] = factor;
  return j;
}

std::shared_ptr<Strategy> StrategySpec::instantiate(const NetworkCase& cse, int self_gen_id) const {
  if (kind == "conforming") return make_conforming_strategy();
  if (kind == "constant") return make_constant_bid_strategy(value);
  if (kind == "undercut") {
    int partner_id = partner;
    if (partner_id == 0) {
      const Generator& self = cse.generators[cse.generator_index(self_gen_id)];
      for (const auto& g : cse.generators) {
        if (g.bus == self.bus && g.id != self.id && (partner_id == 0 || g.id < partner_id))
          partner_id = g.id;
      }
      if (partner_id == 0)
        throw PreconditionError("undercut strategy for generator " + std::to_string(self_gen_id) +
                                " found no same-bus partner");
    }
    return make_undercut_strategy(partner_id, factor, width);
  }
  if (kind == "uniform_above_star") return make_uniform_above_star_strategy(width);
  if (kind == "sequence") return make_sequence_strategy(bids);
  if (kind == "escalating") return make_escalating_strategy(factor);
  throw SchemaError("unknown strategy kind '" + kind + "'");
}

ExperimentConfig::Mode ExperimentConfig::mode_from_string(const std::string& s) {
  if (s == "opf_only") return Mode::opf_only;
  if (s == "baa") return Mode::baa;
  if (s == "perturbed") return Mode::perturbed;
  if (s == "deviation") return Mode::deviation;
  if (s == "collusion") return Mode::collusion;
  throw SchemaError("mode: unknown mode '" + s + "'");
}

std::string ExperimentConfig::mode_to_string(Mode m) {
  switch (m) {
    case Mode::opf_only: return "opf_only";
    case Mode::baa: return "baa";
    case Mode::perturbed: return "perturbed";
    case Mode::deviation: return "deviation";
    case Mode::collusion: return "collusion";
  }
  return "baa";
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  require_keys(j, "config",
               {"case", "mode", "seed", "schedule", "stop", "initial_bids", "radius", "theta",
                "iso_policy", "disturbance", "deviation", "collusion", "plots"});
  ExperimentConfig cfg;

  const json& cj = need(j, "config", "case");
  if (cj.is_string()) {
    cfg.case_label = cj.get<std::string>();
    try {
      cfg.network = NetworkCase::preset(cfg.case_label);
    } catch (const StructuralError& e) {
      throw SchemaError(std::string("config.case: ") + e.what());
    }
  } else {
    cfg.case_label = "inline";
    cfg.network = NetworkCase::from_json(cj);
  }

  cfg.mode = mode_from_string(as_string(need(j, "config", "mode"), "config.mode"));

  if (j.contains("seed")) {
    const json& sj = j.at("seed");
    if (!sj.is_number_integer() || sj.get<long long>() < 0)
      throw SchemaError("config.seed: expected a nonnegative integer");
    cfg.seed = sj.get<std::uint64_t>();
  }

  const bool needs_dynamics = cfg.mode != Mode::opf_only;
  if (j.contains("schedule"))
    cfg.schedule = schedule_from_json(j.at("schedule"), "config.schedule");
  else if (needs_dynamics)
    throw SchemaError("config: missing key 'schedule' (required by mode " +
                      mode_to_string(cfg.mode) + ")");

  if (j.contains("stop")) {
    const json& st = j.at("stop");
    require_keys(st, "config.stop", {"epsilon", "max_iters"});
    if (st.contains("epsilon")) {
      if (st.at("epsilon").is_string()) {
        if (st.at("epsilon").get<std::string>() != "inf")
          throw SchemaError("config.stop.epsilon: expected a number or \"inf\"");
        cfg.stop.epsilon = std::numeric_limits<double>::infinity();
      } else {
        cfg.stop.epsilon = as_number(st.at("epsilon"), "config.stop.epsilon");
      }
    }
    if (st.contains("max_iters"))
      cfg.stop.max_iters = as_int(st.at("max_iters"), "config.stop.max_iters");
  }

  if (j.contains("initial_bids")) {
    const json& ib = j.at("initial_bids");
    if (ib.is_array()) {
      cfg.initial_bids = as_vector(ib, "config.initial_bids");
    } else {
      require_keys(ib, "config.initial_bids", {"kind", "width"});
      if (as_string(need(ib, "config.initial_bids", "kind"), "config.initial_bids.kind") !=
          "uniform_above_cost")
        throw SchemaError("config.initial_bids.kind: expected \"uniform_above_cost\"");
      if (ib.contains("width"))
        cfg.initial_bid_width = as_number(ib.at("width"), "config.initial_bids.width");
    }
  }

  if (j.contains("radius")) cfg.radius = as_number(j.at("radius"), "config.radius");
  if (j.contains("theta")) cfg.theta_check = as_number(j.at("theta"), "config.theta");

  if (j.contains("iso_policy")) {
    std::string pol = as_string(j.at("iso_policy"), "config.iso_policy");
    if (pol == "deterministic")
      cfg.iso = IsoPolicy::deterministic();
    else if (pol == "randomized")
      cfg.iso = IsoPolicy::randomized(0);
    else
      throw SchemaError("config.iso_policy: expected \"deterministic\" or \"randomized\"");
  }

  if (cfg.mode == Mode::perturbed) {
    cfg.disturbance =
        disturbance_from_json(need(j, "config", "disturbance"), "config.disturbance");
    if (cfg.disturbance.kind == DisturbanceModel::Kind::none)
      throw SchemaError("config.disturbance.kind: mode perturbed needs a disturbance");
  } else if (j.contains("disturbance")) {
    throw SchemaError("config.disturbance: only valid in mode perturbed");
  }

  if (cfg.mode == Mode::deviation) {
    const json& dj = need(j, "config", "deviation");
    require_keys(dj, "config.deviation", {"generator", "strategy"});
    cfg.deviant_gen_id = as_int(need(dj, "config.deviation", "generator"),
                                "config.deviation.generator");
    cfg.deviant_strategy =
        StrategySpec::from_json(need(dj, "config.deviation", "strategy"),
                                "config.deviation.strategy");
  } else if (j.contains("deviation")) {
    throw SchemaError("config.deviation: only valid in mode deviation");
  }

  if (cfg.mode == Mode::collusion) {
    const json& cj2 = need(j, "config", "collusion");
    require_keys(cj2, "config.collusion", {"members", "strategy", "overrides", "allow_unguarded_bus"});
    const json& mem = need(cj2, "config.collusion", "members");
    if (!mem.is_array()) throw SchemaError("config.collusion.members: expected an array");
    for (std::size_t i = 0; i < mem.size(); ++i)
      cfg.colluders.push_back(
          as_int(mem[i], "config.collusion.members[" + std::to_string(i) + "]"));
    cfg.collusion_strategy = StrategySpec::from_json(
        need(cj2, "config.collusion", "strategy"), "config.collusion.strategy");
    if (cj2.contains("overrides")) {
      const json& ov = cj2.at("overrides");
      if (!ov.is_object()) throw SchemaError("config.collusion.overrides: expected an object");
      for (auto it = ov.begin(); it != ov.end(); ++it) {
        int id = 0;
        try {
          id = std::stoi(it.key());
        } catch (...) {
          throw SchemaError("config.collusion.overrides: key '" + it.key() +
                            "' is not a generator id");
        }
        cfg.collusion_overrides[id] =
            StrategySpec::from_json(it.value(), "config.collusion.overrides." + it.key());
      }
    }
    if (cj2.contains("allow_unguarded_bus"))
      cfg.allow_unguarded_bus =
          as_bool(cj2.at("allow_unguarded_bus"), "config.collusion.allow_unguarded_bus");
  } else if (j.contains("collusion")) {
    throw SchemaError("config.collusion: only valid in mode collusion");
  }

  if (j.contains("plots")) {
    const json& pl = j.at("plots");
    if (!pl.is_array()) throw SchemaError("config.plots: expected an array of strings");
    for (std::size_t i = 0; i < pl.size(); ++i)
      cfg.plots.push_back(as_string(pl[i], "config.plots[" + std::to_string(i) + "]"));
  }
  return cfg;
}

json ExperimentConfig::to_json() const {
  json j;
  j["case"] = case_label == "inline" ? network.to_json() : json(case_label);
  j["mode"] = mode_to_string(mode);
  j["seed"] = seed;
  if (mode != Mode::opf_only) {
    j["schedule"] = schedule_to_json(schedule);
    j["stop"]["epsilon"] = std::isinf(stop.epsilon) ? json("inf") : json(stop.epsilon);
    j["stop"]["max_iters"] = stop.max_iters;
    if (initial_bids)
      j["initial_bids"] = vec_to_json(*initial_bids);
    else
      j["initial_bids"] = {{"kind", "uniform_above_cost"}, {"width", initial_bid_width}};
    j["iso_policy"] = iso.kind == IsoPolicy::Kind::randomized ? "randomized" : "deterministic";
  }
  if (radius) j["radius"] = *radius;
  if (theta_check) j["theta"] = *theta_check;
  if (mode == Mode::perturbed) j["disturbance"] = disturbance_to_json(disturbance);
  if (mode == Mode::deviation) {
    j["deviation"]["generator"] = deviant_gen_id;
    j["deviation"]["strategy"] = deviant_strategy.to_json();
  }
  if (mode == Mode::collusion) {
    j["collusion"]["members"] = colluders;
    j["collusion"]["strategy"] = collusion_strategy.to_json();
    if (!collusion_overrides.empty()) {
      json ov = json::object();
      for (const auto& [id, spec] : collusion_overrides) ov[std::to_string(id)] = spec.to_json();
      j["collusion"]["overrides"] = ov;
    }
    if (allow_unguarded_bus) j["collusion"]["allow_unguarded_bus"] = true;
  }
  if (!plots.empty()) j["plots"] = plots;
  return j;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const StructuralError*>(&e) ||
      dynamic_cast<const PreconditionError*>(&e) || dynamic_cast<const DimensionError*>(&e))
    return kExitUsage;
  return kExitInfeasible;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("config file " + path + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

namespace {

json tally_to_json(const CheckTally& t) {
  json j;
  j["checked"] = t.checked;
  j["violations"] = t.violations;
  j["first_violation_k"] = t.first_violation_k < 0 ? json(nullptr) : json(t.first_violation_k);
  j["worst_slack"] = std::isfinite(t.worst_slack) ? json(t.worst_slack) : json(nullptr);
  j["guaranteed"] = t.guaranteed;
  return j;
}

}  // namespace

json SummaryReport::to_json() const {
  json j;
  j["b_star"] = b_star ? vec_to_json(*b_star) : json(nullptr);
  j["x_star"] = x_star ? vec_to_json(*x_star) : json(nullptr);
  j["entry_iteration"] = entry_iteration ? json(*entry_iteration) : json(nullptr);
  j["terminal_distance"] =
      std::isnan(terminal_distance) ? json(nullptr) : json(terminal_distance);
  json checks = json::object();
  for (const auto& [name, tally] : violations.checks) checks[name] = tally_to_json(tally);
  j["violations"] = {{"checks", checks},
                     {"guaranteed_total", violations.guaranteed_violations()},
                     {"total", violations.total_violations()}};
  j["bounds"] = bounds.empty() ? json(json::object()) : json(bounds);
  j["warnings"] = warnings;
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult res;
  const NetworkCase& net = config.network;

  ValidationReport vrep = validate_case(net);
  if (!vrep.structurally_sound)
    throw StructuralError("case is not structurally sound: " + vrep.errors.front());
  for (const auto& w : vrep.warnings) res.summary.warnings.push_back(w);

  DispatchSolution ds = solve_dcopf(net);
  res.dispatch = ds;
  res.summary.x_star = ds.x;

  std::optional<RunReference> ref;
  if (ds.x.minCoeff() > 1e-9) {
    ref = RunReference{efficient_bid(net, ds), ds.x};
    res.summary.b_star = ref->b_star;
  } else {
    res.summary.warnings.push_back(
        "some efficient dispatch entries are zero; equilibrium-distance diagnostics disabled");
  }

  const double a_max = net.cost_a().maxCoeff();
  res.summary.bounds["a_max"] = a_max;
  res.summary.bounds["a_min"] = net.cost_a().minCoeff();
  res.summary.bounds["total_load"] = total_load(net);
  res.summary.bounds["dispatch_cost"] = ds.objective;
  if (config.radius) {
    res.summary.bounds["B_r"] = compute_B(net, *config.radius);
    res.summary.bounds["ultimate"] = ultimate_bound(net, *config.radius);
  }

  if (config.mode == ExperimentConfig::Mode::opf_only) {
    res.exit_code = kExitOk;
    return res;
  }

  StepsizeSchedule sched = config.schedule;
  sched.seed = config.seed;
  IsoPolicy iso = config.iso;
  iso.seed = config.seed;
  const double r = config.radius.value_or(std::numeric_limits<double>::quiet_NaN());

  if (std::isfinite(config.stop.epsilon) && config.stop.epsilon > 0.0) {
    try {
      res.summary.bounds["stopping_guarantee"] =
          stopping_guarantee(config.stop.epsilon, sched.alpha_effective(), a_max);
    } catch (const PreconditionError&) {
      // alpha outside (0, 2 a_max): no guarantee to report
    }
  }

  Eigen::VectorXd b1;
  if (config.initial_bids) {
    b1 = *config.initial_bids;
  } else {
    SubStream stream(config.seed, "initial_bids");
    b1 = net.cost_c();
    for (int n = 0; n < net.n_generators(); ++n)
      b1[n] += stream.uniform(0.0, config.initial_bid_width);
  }

  CheckOptions opt;
  switch (config.mode) {
    case ExperimentConfig::Mode::baa:
      res.trace = run_baa(net, b1, sched, config.stop, iso, ref, r);
      break;
    case ExperimentConfig::Mode::perturbed: {
      res.trace = run_perturbed(net, b1, sched, config.disturbance, config.stop, iso, ref, r,
                                config.seed);
      opt.additive_disturbance = config.disturbance.additive();
      if (config.disturbance.kind == DisturbanceModel::Kind::state_proportional)
        opt.theta = config.disturbance.theta;
      else if (config.theta_check)
        opt.theta = config.theta_check;
      if (config.disturbance.kind == DisturbanceModel::Kind::bounded)
        opt.d_max = config.disturbance.d_max;
      break;
    }
    case ExperimentConfig::Mode::deviation: {
      auto strat = config.deviant_strategy.instantiate(net, config.deviant_gen_id);
      res.trace = run_deviation(net, b1, sched, config.deviant_gen_id, strat, config.stop, iso,
                                ref, r, config.seed);
      for (int n = 0; n < net.n_generators(); ++n)
        if (n != net.generator_index(config.deviant_gen_id)) opt.conformers.push_back(n);
      break;
    }
    case ExperimentConfig::Mode::collusion: {
      std::vector<std::shared_ptr<Strategy>> strategies;
      std::set<int> member_idx;
      for (int id : config.colluders) {
        auto it = config.collusion_overrides.find(id);
        const StrategySpec& spec =
            it != config.collusion_overrides.end() ? it->second : config.collusion_strategy;
        strategies.push_back(spec.instantiate(net, id));
        member_idx.insert(net.generator_index(id));
      }
      res.trace = run_collusion(net, b1, sched, config.colluders, strategies, config.stop, iso,
                                ref, r, config.seed, config.allow_unguarded_bus);
      for (int n = 0; n < net.n_generators(); ++n)
        if (!member_idx.count(n)) opt.conformers.push_back(n);
      break;
    }
    case ExperimentConfig::Mode::opf_only:
      break;
  }

  for (const auto& w : res.trace.warnings) res.summary.warnings.push_back(w);

  res.summary.violations = check_trace(net, res.trace, sched, opt);

  if (!res.trace.records.empty()) {
    const TraceRecord& last = res.trace.records.back();
    res.summary.terminal_distance = last.dist_to_bstar;
    res.summary.entry_iteration = res.trace.entry_index;
  }

  if (config.mode == ExperimentConfig::Mode::perturbed && opt.theta && config.radius) {
    double d_max = 0.0;
    if (opt.d_max) {
      d_max = *opt.d_max;
    } else {
      for (const auto& rec : res.trace.records) d_max = std::max(d_max, rec.d.norm());
    }
    // Same convention as check_trace: per-generator schedules use the
    // smallest nominal stepsize actually recorded.
    double env_alpha = sched.alpha_effective();
    if (sched.per_generator()) {
      env_alpha = std::numeric_limits<double>::infinity();
      for (const auto& rec : res.trace.records) env_alpha = std::min(env_alpha, rec.beta);
    }
    try {
      PerturbedBounds pb = perturbed_bounds(net, *config.radius, env_alpha, *opt.theta, d_max);
      res.summary.bounds["G1"] = pb.g1;
      res.summary.bounds["G2"] = pb.g2;
      res.summary.bounds["G"] = pb.g;
      res.summary.bounds["rate_factor"] = pb.rate_factor;
      res.summary.bounds["d_max"] = d_max;
    } catch (const PreconditionError& e) {
      res.summary.warnings.push_back(std::string("disturbance envelope unavailable: ") + e.what());
    }
  }

  res.exit_code =
      res.summary.violations.guaranteed_violations() > 0 ? kExitViolation : kExitOk;
  return res;
}

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (!result.trace.records.empty())
    write_trace_csv(result.trace, out_dir + "/trace.csv");

  std::ofstream summary(out_dir + "/summary.json");
  if (!summary) throw PreconditionError("cannot open " + out_dir + "/summary.json");
  summary << result.summary.to_json().dump(2) << "\n";

  for (const auto& kind : config.plots)
    emit_plot_data(result.trace, config.network, kind, out_dir + "/plot_" + kind + ".csv", true);
}

namespace {

void write_svg(const std::string& path, const std::string& title,
               const std::vector<std::string>& names,
               const std::vector<std::vector<double>>& xs,
               const std::vector<std::vector<double>>& ys) {
  const double w = 860, h = 460, ml = 70, mr = 20, mt = 40, mb = 45;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (std::size_t s = 0; s < xs.size(); ++s)
    for (std::size_t i = 0; i < xs[s].size(); ++i) {
      if (!std::isfinite(ys[s][i])) continue;
      xmin = std::min(xmin, xs[s][i]);
      xmax = std::max(xmax, xs[s][i]);
      ymin = std::min(ymin, ys[s][i]);
      ymax = std::max(ymax, ys[s][i]);
    }
  if (xmin > xmax) { xmin = 0; xmax = 1; }
  if (ymin > ymax) { ymin = 0; ymax = 1; }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ofstream out(path);
  if (!out) throw PreconditionError("cannot open plot output path: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-family='sans-serif' "
      << "font-size='16'>" << title << "</text>\n"
      << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n"
      << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    double fx = xmin + (xmax - xmin) * tick / 4.0;
    double fy = ymin + (ymax - ymin) * tick / 4.0;
    out << "<text x='" << sx(fx) << "' y='" << h - mb + 18
        << "' text-anchor='middle' font-family='sans-serif' font-size='11'>" << fmt_sig10(fx)
        << "</text>\n";
    out << "<text x='" << ml - 6 << "' y='" << sy(fy) + 4
        << "' text-anchor='end' font-family='sans-serif' font-size='11'>";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", fy);
    out << buf << "</text>\n";
  }
  for (std::size_t s = 0; s < xs.size(); ++s) {
    out << "<polyline fill='none' stroke='" << palette[s % 8] << "' stroke-width='1.2' points='";
    for (std::size_t i = 0; i < xs[s].size(); ++i) {
      if (!std::isfinite(ys[s][i])) continue;
      out << sx(xs[s][i]) << "," << sy(ys[s][i]) << " ";
    }
    out << "'/>\n";
    out << "<text x='" << w - mr - 6 << "' y='" << mt + 16 * (s + 1)
        << "' text-anchor='end' font-family='sans-serif' font-size='12' fill='"
        << palette[s % 8] << "'>" << names[s] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void emit_plot_data(const MarketTrace& trace, const NetworkCase& cse, const std::string& kind,
                    const std::string& path, bool with_svg) {
  if (trace.records.empty()) throw PreconditionError("cannot plot an empty trace");
  const int ng = cse.n_generators();
  std::ofstream out(path);
  if (!out) throw PreconditionError("cannot open plot output path: " + path);

  std::vector<std::string> names;
  std::vector<std::vector<double>> xs, ys;

  if (kind == "bids_vs_k") {
    out << "k";
    for (int n = 1; n <= ng; ++n) out << ",b_" << n;
    out << "\n";
    names.resize(ng);
    xs.resize(ng);
    ys.resize(ng);
    for (int n = 0; n < ng; ++n) names[n] = "b_" + std::to_string(n + 1);
    for (const auto& rec : trace.records) {
      out << rec.k;
      for (int n = 0; n < ng; ++n) {
        out << "," << fmt_sig10(rec.b[n]);
        xs[n].push_back(rec.k);
        ys[n].push_back(rec.b[n]);
      }
      out << "\n";
    }
  } else if (kind == "dist_vs_k") {
    if (!trace.reference_available())
      throw PreconditionError("dist_vs_k needs a run with an equilibrium reference");
    out << "k,dist_to_bstar\n";
    names = {"dist_to_bstar"};
    xs.resize(1);
    ys.resize(1);
    for (const auto& rec : trace.records) {
      out << rec.k << "," << fmt_sig10(rec.dist_to_bstar) << "\n";
      xs[0].push_back(rec.k);
      ys[0].push_back(rec.dist_to_bstar);
    }
  } else if (kind == "payoff_gap_vs_k") {
    if (!trace.reference_available() || !trace.has_robustness_columns())
      throw PreconditionError(
          "payoff_gap_vs_k needs a robustness trace with an equilibrium reference");
    Eigen::VectorXd base(ng);
    for (int n = 0; n < ng; ++n)
      base[n] = payoff((*trace.b_star)[n], (*trace.x_star)[n], cse.generators[n]);
    out << "k";
    for (int n = 1; n <= ng; ++n) out << ",gap_" << n;
    out << "\n";
    names.resize(ng);
    xs.resize(ng);
    ys.resize(ng);
    for (int n = 0; n < ng; ++n) names[n] = "gap_" + std::to_string(n + 1);
    for (const auto& rec : trace.records) {
      out << rec.k;
      for (int n = 0; n < ng; ++n) {
        double gap = rec.payoffs[n] - base[n];
        out << "," << fmt_sig10(gap);
        xs[n].push_back(rec.k);
        ys[n].push_back(gap);
      }
      out << "\n";
    }
  } else {
    throw PreconditionError("unknown plot kind '" + kind +
                            "' (known: bids_vs_k, dist_vs_k, payoff_gap_vs_k)");
  }
  out.close();
  if (with_svg) {
    std::string svg_path = path;
    if (svg_path.size() >= 4 && svg_path.compare(svg_path.size() - 4, 4, ".csv") == 0)
      svg_path.resize(svg_path.size() - 4);
    write_svg(svg_path + ".svg", kind, names, xs, ys);
  }
}

}  // namespace bidsim
