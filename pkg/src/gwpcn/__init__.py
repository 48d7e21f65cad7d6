"""Throughput optimization for generalized wireless-powered communication networks."""

from .channel import ChannelModel
from .experiments import ExperimentSpec, SweepResult, figure_preset, matched_emax, run_sweep
from .maxmin_solvers import MaxminConfig, min_energy_for_rate, solve_p1_maxmin, solve_special_maxmin
from .model import (
    Allocation,
    ChannelRealization,
    HeteroAllocation,
    HeteroInstance,
    NetworkInstance,
    SolveReport,
    UserParams,
    harvested_energy,
    report_from_allocation,
    validate,
)
from .oracle import GridSpec, certify, grid_best
from .scalar_solvers import bisect_monotone, expand_bracket_upward, solve_f_equals
from .sum_solvers import AlternatingConfig, energy_step, solve_p1, solve_p2, solve_p3, solve_p4, time_step
from .units_metrics import dbm_to_watts, jain_index, noise_power, rate

__all__ = [
    "Allocation",
    "AlternatingConfig",
    "ChannelModel",
    "ChannelRealization",
    "ExperimentSpec",
    "GridSpec",
    "HeteroAllocation",
    "HeteroInstance",
    "MaxminConfig",
    "NetworkInstance",
    "SolveReport",
    "SweepResult",
    "UserParams",
    "bisect_monotone",
    "certify",
    "dbm_to_watts",
    "energy_step",
    "expand_bracket_upward",
    "figure_preset",
    "grid_best",
    "harvested_energy",
    "jain_index",
    "matched_emax",
    "min_energy_for_rate",
    "noise_power",
    "rate",
    "report_from_allocation",
    "run_sweep",
    "solve_f_equals",
    "solve_p1",
    "solve_p1_maxmin",
    "solve_p2",
    "solve_p3",
    "solve_p4",
    "solve_special_maxmin",
    "time_step",
    "validate",
]
