"""Single-vehicle charging plan along a corridor of stations."""

from .lpformat import export_lp
from .problem import (
    ChargingPlan,
    ConfigurationError,
    Corridor,
    EvspProblem,
    InfeasibleError,
    Station,
    VehicleSpec,
    build_problem,
    dump_json,
    naive_station,
    slot_index,
)
from .solver import SolveOptions, SolveStats, solve
from .validate import ValidationReport, Violation, validate_plan

__all__ = [
    "ChargingPlan", "ConfigurationError", "Corridor", "EvspProblem", "InfeasibleError",
    "Station", "VehicleSpec", "build_problem", "dump_json", "naive_station", "slot_index",
    "SolveOptions", "SolveStats", "solve", "ValidationReport", "Violation", "validate_plan",
    "export_lp",
]
