"""Market dispatch and decentralized bid-adjustment engine.

Thin convenience layer over the compiled core: case handling, the quadratic
dispatch and linear clearing solvers, equilibrium bid constructions,
convergence bounds, the conforming bid-adjustment run, and the JSON
experiment runner.
"""

import json as _json

from ._core import (
    Case,
    DispatchSolution,
    DimensionError,
    InfeasibleError,
    IsoPolicy,
    PreconditionError,
    SchemaError,
    SolverError,
    StructuralError,
    best_response_quantity,
    case_from_json,
    clear_market,
    compute_B,
    efficient_bid,
    kkt_residual,
    nash_from_duals,
    payoff,
    perturbed_bounds,
    preset_case,
    run_adjustment,
    run_experiment_json,
    solve_dispatch,
    stopping_guarantee,
    ultimate_bound,
)

__all__ = [
    "Case",
    "DispatchSolution",
    "DimensionError",
    "InfeasibleError",
    "IsoPolicy",
    "PreconditionError",
    "SchemaError",
    "SolverError",
    "StructuralError",
    "best_response_quantity",
    "case_from_dict",
    "case_from_json",
    "clear_market",
    "compute_B",
    "efficient_bid",
    "kkt_residual",
    "nash_from_duals",
    "payoff",
    "perturbed_bounds",
    "preset_case",
    "run_adjustment",
    "run_experiment",
    "run_experiment_json",
    "solve_dispatch",
    "stopping_guarantee",
    "ultimate_bound",
]

__version__ = "0.1.0"


def case_from_dict(data):
    """Build a Case from a dict with buses, lines, and generators."""
    return case_from_json(_json.dumps(data))


def run_experiment(config, out_dir=""):
    """Run a full experiment from a config dict (or JSON text).

    Returns the summary as a dict; when ``out_dir`` is given, also writes
    trace.csv, summary.json, and any requested plot files there.
    """
    text = config if isinstance(config, str) else _json.dumps(config)
    return _json.loads(run_experiment_json(text, out_dir))
