"""Corridor coordination of connected automated vehicles.

Two-level control: per-zone entry-time scheduling for throughput, and
closed-form minimum-effort trajectories with rear-end gap constraints, plus
an event-driven corridor simulator with a car-following baseline.
"""

from .corridor import (ApproachSpec, ConflictZoneSpec, CorridorSpec,
                       GlobalParams, RelationClass, Route, RouteLeg,
                       classify_relation, feasible_time_bounds)
from .errors import (ConfigError, RouteError, ScheduleInfeasibleError,
                     TrajectorySolverError)
from .scheduler import (ScheduleLedger, build_sets_A_L, entry_time_same_lane,
                        first_vehicle_time, resolve_entry_time,
                        schedule_entry)
from .trajectory import (BoundExcursion, BvpProblem, CostateRecord, CubicArc,
                         LeaderOffsetArc, PiecewiseTrajectory, Violation,
                         check_bounds, costate_records,
                         detect_rear_end_violation, effort, evaluate,
                         leader_state, solve_constrained,
                         solve_unconstrained)
from .simulator import (Arrival, BaselineSimulator, ScenarioResult,
                        SimEvent, SimEventKind, VehicleRecord, ZoneVisit,
                        baseline_step, compute_metrics, idm_acceleration,
                        run_scenario)
from .config import (GeneratorSpec, ScenarioConfig, dumps_config,
                     generate_arrivals, load_config)
from .output import write_results
from .cli import cli_main

__version__ = "0.1.0"

__all__ = [
    "ApproachSpec", "Arrival", "BaselineSimulator", "BoundExcursion",
    "BvpProblem", "ConfigError", "ConflictZoneSpec", "CorridorSpec",
    "CostateRecord", "CubicArc", "GeneratorSpec", "GlobalParams",
    "LeaderOffsetArc", "PiecewiseTrajectory", "RelationClass", "Route",
    "RouteError", "RouteLeg", "ScenarioConfig", "ScenarioResult",
    "ScheduleInfeasibleError", "ScheduleLedger", "SimEvent", "SimEventKind",
    "TrajectorySolverError", "VehicleRecord", "Violation", "ZoneVisit",
    "baseline_step", "build_sets_A_L", "check_bounds", "classify_relation",
    "cli_main", "compute_metrics", "costate_records",
    "detect_rear_end_violation", "dumps_config", "effort",
    "entry_time_same_lane", "evaluate", "feasible_time_bounds",
    "first_vehicle_time", "generate_arrivals", "idm_acceleration",
    "leader_state", "load_config", "resolve_entry_time", "run_scenario",
    "schedule_entry", "solve_constrained", "solve_unconstrained",
    "write_results",
]
