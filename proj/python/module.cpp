// Python bindings for the market-dynamics engine: case handling, the two
// dispatch solvers, the equilibrium constructions, the convergence bounds,
// the conforming bid-adjustment run, and the JSON experiment runner.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "bidsim/checks.hpp"
#include "bidsim/opf.hpp"
#include "bidsim/robustness.hpp"
#include "bidsim/runner.hpp"

namespace py = pybind11;
using namespace bidsim;
using nlohmann::json;

namespace {

NetworkCase parse_case(const std::string& text) {
  json j = json::parse(text);
  return NetworkCase::from_json(j);
}

py::object run_adjustment(const NetworkCase& cse, const Eigen::VectorXd& b1, double beta,
                          double epsilon, int max_iters, double radius, bool reference) {
  StepsizeSchedule sched;
  sched.beta = beta;
  std::optional<RunReference> ref;
  if (reference) {
    DispatchSolution ds = solve_dcopf(cse);
    if (ds.x.minCoeff() > 1e-9) ref = RunReference{efficient_bid(cse, ds), ds.x};
  }
  MarketTrace t = run_baa(cse, b1, sched, StoppingCriterion{epsilon, max_iters}, IsoPolicy{}, ref,
                          radius);

  const int ng = cse.n_generators();
  const int rows = static_cast<int>(t.records.size());
  Eigen::MatrixXd bids(rows, ng), x_opt(rows, ng), q(rows, ng);
  Eigen::VectorXd dist(rows);
  for (int i = 0; i < rows; ++i) {
    bids.row(i) = t.records[i].b;
    x_opt.row(i) = t.records[i].x_opt;
    q.row(i) = t.records[i].q;
    dist[i] = t.records[i].dist_to_bstar;
  }
  py::dict out;
  out["bids"] = bids;
  out["x_opt"] = x_opt;
  out["q"] = q;
  out["dist_to_bstar"] = dist;
  out["entry_iteration"] = t.entry_index ? py::cast(*t.entry_index) : py::none();
  out["b_star"] = t.b_star ? py::cast(*t.b_star) : py::none();
  out["x_star"] = t.x_star ? py::cast(*t.x_star) : py::none();
  out["warnings"] = t.warnings;
  return out;
}

std::string run_experiment_json(const std::string& config_text, const std::string& out_dir) {
  ExperimentConfig cfg = ExperimentConfig::from_json(json::parse(config_text));
  ExperimentResult res = run_experiment(cfg);
  if (!out_dir.empty()) write_outputs(cfg, res, out_dir);
  json summary = res.summary.to_json();
  summary["exit_code"] = res.exit_code;
  return summary.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "market dispatch and decentralized bid-adjustment engine";

  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<StructuralError>(m, "StructuralError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_RuntimeError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

  py::class_<NetworkCase>(m, "Case")
      .def_property_readonly("n_buses", &NetworkCase::n_buses)
      .def_property_readonly("n_lines", &NetworkCase::n_lines)
      .def_property_readonly("n_generators", &NetworkCase::n_generators)
      .def("loads", &NetworkCase::loads)
      .def("cost_a", &NetworkCase::cost_a)
      .def("cost_c", &NetworkCase::cost_c)
      .def("to_json", [](const NetworkCase& c) { return c.to_json().dump(); })
      .def("validate", [](const NetworkCase& c) {
        ValidationReport rep = validate_case(c);
        py::dict out;
        out["structurally_sound"] = rep.structurally_sound;
        out["generator_hypothesis"] = rep.generator_hypothesis;
        out["total_load"] = rep.total_load;
        out["errors"] = rep.errors;
        out["warnings"] = rep.warnings;
        return out;
      });

  m.def("preset_case", &NetworkCase::preset, py::arg("name"),
        "Named built-in network (currently 'ieee9-modified').");
  m.def("case_from_json", &parse_case, py::arg("text"),
        "Case from a JSON document with buses, lines, and generators.");

  py::class_<DispatchSolution>(m, "DispatchSolution")
      .def_readonly("x", &DispatchSolution::x)
      .def_readonly("z", &DispatchSolution::z)
      .def_readonly("nu", &DispatchSolution::nu)
      .def_readonly("mu", &DispatchSolution::mu)
      .def_readonly("lambda_", &DispatchSolution::lambda)
      .def_readonly("objective", &DispatchSolution::objective);

  py::class_<IsoPolicy>(m, "IsoPolicy")
      .def_static("deterministic", &IsoPolicy::deterministic)
      .def_static("randomized", &IsoPolicy::randomized, py::arg("seed"), py::arg("round") = 0);

  m.def("solve_dispatch", &solve_dcopf, py::arg("case"),
        py::arg("start_policy") = IsoPolicy{},
        "Quadratic-cost dispatch with full multipliers.");
  m.def("kkt_residual",
        [](const NetworkCase& c, const DispatchSolution& s) {
          return check_kkt(c, s).max_residual();
        },
        py::arg("case"), py::arg("solution"),
        "Largest first-order-optimality residual of a dispatch solution.");
  m.def("efficient_bid", &efficient_bid, py::arg("case"), py::arg("solution"),
        "Marginal-cost bids 2 a x + c at the efficient dispatch.");
  m.def("nash_from_duals", &nash_from_duals, py::arg("case"), py::arg("solution"),
        "Equilibrium bids from nodal prices.");

  m.def("clear_market",
        [](const NetworkCase& c, const Eigen::VectorXd& bids) {
          LpSolution sol = solve_sdcopf(c, bids);
          py::dict out;
          out["x_opt"] = sol.x_opt;
          out["z_opt"] = sol.z_opt;
          out["objective"] = sol.objective;
          out["is_vertex"] = sol.is_vertex;
          return out;
        },
        py::arg("case"), py::arg("bids"),
        "Bid-weighted clearing program solved to a vertex.");

  m.def("best_response_quantity",
        [](double bid, double a, double c) {
          return best_response_quantity(bid, Generator{0, 0, a, c});
        },
        py::arg("bid"), py::arg("a"), py::arg("c"),
        "Profit-maximizing quantity max(0, (bid - c) / (2 a)).");
  m.def("payoff",
        [](double bid, double dispatched, double a, double c) {
          return payoff(bid, dispatched, Generator{0, 0, a, c});
        },
        py::arg("bid"), py::arg("dispatched"), py::arg("a"), py::arg("c"),
        "bid * x - (a x^2 + c x).");

  m.def("compute_B", &compute_B, py::arg("case"), py::arg("r"),
        "Stepsize ceiling certifying contraction outside radius r.");
  m.def("ultimate_bound", &ultimate_bound, py::arg("case"), py::arg("r"),
        py::arg("exponent") = 0.5, "Invariant-neighborhood radius entered at r.");
  m.def("stopping_guarantee", &stopping_guarantee, py::arg("epsilon"), py::arg("alpha"),
        py::arg("a_max"), "Distance certificate at the stopping tolerance.");
  m.def("perturbed_bounds",
        [](const NetworkCase& c, double r, double alpha, double theta, double d_max) {
          PerturbedBounds pb = perturbed_bounds(c, r, alpha, theta, d_max);
          py::dict out;
          out["g1"] = pb.g1;
          out["g2"] = pb.g2;
          out["g"] = pb.g;
          out["rate_factor"] = pb.rate_factor;
          out["ultimate"] = pb.ultimate;
          return out;
        },
        py::arg("case"), py::arg("r"), py::arg("alpha"), py::arg("theta"), py::arg("d_max"),
        "Disturbance-robustness envelope constants.");

  m.def("run_adjustment", &run_adjustment, py::arg("case"), py::arg("initial_bids"),
        py::arg("beta") = 0.01, py::arg("epsilon") = 1e-4, py::arg("max_iters") = 10000,
        py::arg("radius") = std::numeric_limits<double>::quiet_NaN(),
        py::arg("reference") = true,
        "Conforming bid-adjustment run under a constant stepsize; returns the "
        "per-iteration history as arrays.");

  m.def("run_experiment_json", &run_experiment_json, py::arg("config_text"),
        py::arg("out_dir") = std::string(),
        "Full experiment from a JSON config document; returns the summary as "
        "JSON text and optionally writes trace/summary/plot files.");
}
