#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bidsim/checks.hpp"
#include "bidsim/dynamics.hpp"
#include "bidsim/opf.hpp"
#include "bidsim/robustness.hpp"

namespace bidsim {

// Process exit codes shared by the CLI and run_experiment.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;      // CLI/config/structural errors
inline constexpr int kExitInfeasible = 2; // infeasible program or solver failure
inline constexpr int kExitViolation = 3;  // a guaranteed invariant was violated

// Declarative strategy description used in config files.
struct StrategySpec {
  std::string kind = "conforming"; // conforming | constant | undercut |
                                   // uniform_above_star | sequence | escalating
  double value = 0.0;              // constant
  int partner = 0;                 // undercut partner generator id; 0 = same-bus partner
  double factor = 0.99;            // undercut / escalating
  double width = 1.0;              // undercut / uniform_above_star
  std::vector<double> bids;        // sequence

  // Builds a fresh instance (strategies hold per-member state such as the
  // resolved undercut partner).
  std::shared_ptr<Strategy> instantiate(const NetworkCase& cse, int self_gen_id) const;
  nlohmann::json to_json() const;
  static StrategySpec from_json(const nlohmann::json& j, const std::string& where);
};

struct ExperimentConfig {
  enum class Mode { opf_only, baa, perturbed, deviation, collusion };

  NetworkCase network;
  std::string case_label = "inline"; // preset name, or "inline" for embedded cases
  Mode mode = Mode::baa;
  std::uint64_t seed = 0;
  StepsizeSchedule schedule;
  StoppingCriterion stop;
  std::optional<Eigen::VectorXd> initial_bids; // absent: uniform in [c_n, c_n + width]
  double initial_bid_width = 10.0;
  std::optional<double> radius;      // r for entry/containment diagnostics
  std::optional<double> theta_check; // disturbance level for envelope diagnostics
  IsoPolicy iso;
  DisturbanceModel disturbance;                // perturbed mode
  int deviant_gen_id = 0;                      // deviation mode
  StrategySpec deviant_strategy;
  std::vector<int> colluders;                  // collusion mode (generator ids)
  StrategySpec collusion_strategy;             // template for every member
  std::map<int, StrategySpec> collusion_overrides; // per-member replacements
  bool allow_unguarded_bus = false;
  std::vector<std::string> plots; // emit_plot_data kinds to write alongside outputs

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static Mode mode_from_string(const std::string& s);
  static std::string mode_to_string(Mode m);
};

// Parses and validates a config file; SchemaError messages carry the key
// path of the offending entry.
ExperimentConfig load_config(const std::string& path);

// Maps thrown error types onto the process exit-code contract: schema,
// structural, precondition, and dimension errors are usage errors (1);
// infeasible programs and solver failures are 2; anything else also 2 (the
// run did not complete).
int exit_code_for(const std::exception& e);

// Fixed-shape run summary: b_star, x_star, entry_iteration,
// terminal_distance, violations, bounds.
struct SummaryReport {
  std::optional<Eigen::VectorXd> b_star, x_star;
  std::optional<int> entry_iteration;
  double terminal_distance = std::numeric_limits<double>::quiet_NaN();
  TraceCheckReport violations;
  std::map<std::string, double> bounds;
  std::vector<std::string> warnings;
  nlohmann::json to_json() const;
};

struct ExperimentResult {
  std::optional<DispatchSolution> dispatch;
  MarketTrace trace; // empty in opf_only mode
  SummaryReport summary;
  int exit_code = kExitOk; // kExitOk unless a guaranteed invariant was violated
};

ExperimentResult run_experiment(const ExperimentConfig& config);

// Writes trace.csv (when a trace exists), summary.json, and any plot data
// requested in the config into out_dir (created if missing).
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::string& out_dir);

// Plot-ready CSV for one of: bids_vs_k, dist_vs_k, payoff_gap_vs_k.  The
// payoff gap is each generator's recorded payoff minus its payoff at the
// equilibrium point, so it needs a robustness trace with a reference.  An
// empty trace is an error.  with_svg additionally renders <path>.svg.
void emit_plot_data(const MarketTrace& trace, const NetworkCase& cse, const std::string& kind,
                    const std::string& path, bool with_svg = false);

}  // namespace bidsim
