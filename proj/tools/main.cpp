// Command-line front end: clears markets, runs bid-adjustment experiments,
// and audits the resulting traces against the convergence/robustness bounds.
//
// Exit codes: 0 success, 1 usage/config/structural error, 2 infeasible
// program or solver failure, 3 a guaranteed invariant was violated.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bidsim/runner.hpp"

namespace {

using namespace bidsim;

struct CliOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iters;
  std::vector<std::string> plots;
};

void add_common_options(CLI::App* sub, CliOptions& opt) {
  sub->add_option("--config", opt.config_path, "experiment config file (JSON)")
      ->required();
  sub->add_option("--seed", opt.seed, "override the config seed");
  sub->add_option("--max-iters", opt.max_iters, "override the iteration cap");
  sub->add_option("--out", opt.out_dir, "output directory (default: out)");
  sub->add_option("--plot", opt.plots,
                  "extra plot kinds (bids_vs_k, dist_vs_k, payoff_gap_vs_k)");
}

std::string vec_str(const Eigen::VectorXd& v) {
  std::string s = "[";
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += fmt_sig10(v[i]);
  }
  return s + "]";
}

int run_validate(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt.config_path);  // schema errors throw
  ValidationReport rep = validate_case(cfg.network);
  std::printf("case: %s (%d buses, %d lines, %d generators)\n", cfg.case_label.c_str(),
              cfg.network.n_buses(), cfg.network.n_lines(), cfg.network.n_generators());
  std::printf("total load: %s\n", fmt_sig10(rep.total_load).c_str());
  for (const auto& e : rep.errors) std::printf("error: %s\n", e.c_str());
  for (const auto& w : rep.warnings) std::printf("warning: %s\n", w.c_str());
  if (!rep.structurally_sound) {
    std::printf("result: case rejected\n");
    return kExitUsage;
  }
  std::printf("result: config and case are valid (mode %s)\n",
              ExperimentConfig::mode_to_string(cfg.mode).c_str());
  return kExitOk;
}

int run_mode(const CliOptions& opt, ExperimentConfig::Mode expected,
             const std::string& subcommand) {
  ExperimentConfig cfg = load_config(opt.config_path);
  if (cfg.mode != expected)
    throw SchemaError("config mode '" + ExperimentConfig::mode_to_string(cfg.mode) +
                      "' does not match subcommand '" + subcommand + "'");
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.max_iters) cfg.stop.max_iters = *opt.max_iters;
  for (const auto& p : opt.plots)
    if (std::find(cfg.plots.begin(), cfg.plots.end(), p) == cfg.plots.end())
      cfg.plots.push_back(p);

  ExperimentResult res = run_experiment(cfg);
  write_outputs(cfg, res, opt.out_dir);

  if (res.dispatch) {
    std::printf("efficient dispatch: %s\n", vec_str(res.dispatch->x).c_str());
    std::printf("dispatch cost: %s\n", fmt_sig10(res.dispatch->objective).c_str());
  }
  if (res.summary.b_star)
    std::printf("equilibrium bids: %s\n", vec_str(*res.summary.b_star).c_str());
  if (!res.trace.records.empty()) {
    std::printf("iterations: %zu\n", res.trace.records.size());
    if (res.summary.entry_iteration)
      std::printf("entered radius at iteration %d\n", *res.summary.entry_iteration);
    if (!std::isnan(res.summary.terminal_distance))
      std::printf("terminal distance to equilibrium: %s\n",
                  fmt_sig10(res.summary.terminal_distance).c_str());
  }
  for (const auto& w : res.summary.warnings) std::printf("warning: %s\n", w.c_str());
  long guaranteed = res.summary.violations.guaranteed_violations();
  long total = res.summary.violations.total_violations();
  if (total > 0)
    std::printf("invariant audit: %ld violation(s), %ld against guaranteed bounds\n", total,
                guaranteed);
  else if (!res.summary.violations.checks.empty())
    std::printf("invariant audit: all checks passed\n");
  std::printf("outputs written to %s\n", opt.out_dir.c_str());
  return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decentralized bid-adjustment market simulator"};
  app.require_subcommand(1);
  CliOptions opt;

  CLI::App* opf = app.add_subcommand("opf", "solve the efficient-dispatch program only");
  CLI::App* baa = app.add_subcommand("baa", "run the conforming bid-adjustment dynamics");
  CLI::App* perturb = app.add_subcommand("perturb", "run the dynamics under disturbances");
  CLI::App* deviate = app.add_subcommand("deviate", "run with one strategic deviant");
  CLI::App* collude = app.add_subcommand("collude", "run with a strategic coalition");
  CLI::App* validate = app.add_subcommand("validate", "check a config and its case, then exit");
  for (CLI::App* sub : {opf, baa, perturb, deviate, collude, validate})
    add_common_options(sub, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? bidsim::kExitOk : bidsim::kExitUsage;
  }

  try {
    if (validate->parsed()) return run_validate(opt);
    if (opf->parsed()) return run_mode(opt, ExperimentConfig::Mode::opf_only, "opf");
    if (baa->parsed()) return run_mode(opt, ExperimentConfig::Mode::baa, "baa");
    if (perturb->parsed()) return run_mode(opt, ExperimentConfig::Mode::perturbed, "perturb");
    if (deviate->parsed()) return run_mode(opt, ExperimentConfig::Mode::deviation, "deviate");
    if (collude->parsed()) return run_mode(opt, ExperimentConfig::Mode::collusion, "collude");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return bidsim::exit_code_for(e);
  }
  return bidsim::kExitUsage;
}
