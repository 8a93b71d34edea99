"""Result serialization: trajectory CSV plus metric and schedule JSON."""

from __future__ import annotations

import json
import math
import os

from .simulator import ScenarioResult

UNITS_NOTE = ("SI units: t [s], s_along_route [m], v [m/s], u [m/s^2],"
              " effort [m^2/s^3], headways [s], margins [m]")


def _plain(value):
    """Recursively coerce to json-serializable python types."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float) and math.isnan(value):
        return None
    if hasattr(value, "item"):  # numpy scalar
        return value.item()
    return value


def write_results(result: ScenarioResult, out_dir) -> list[str]:
    """Write trajectories.csv, metrics.json and schedule.json into out_dir.

    Rows and keys are emitted in deterministic order and floats at fixed
    precision, so identical runs produce byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def fmt(x: float) -> str:
        out = f"{x:.6f}"
        return "0.000000" if out == "-0.000000" else out

    csv_path = os.path.join(out_dir, "trajectories.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(f"# {UNITS_NOTE}\n")
        fh.write("vehicle_id,t,s_along_route,v,u,zone_phase\n")
        for rec in result.records:
            sample = result.samples[rec.id]
            for t, s, v, u, phase in zip(sample["t"], sample["s"],
                                         sample["v"], sample["u"],
                                         sample["phase"]):
                fh.write(f"{rec.id},{fmt(t)},{fmt(s)},{fmt(v)},{fmt(u)},{phase}\n")
    paths.append(csv_path)

    m = result.metrics
    per_vehicle = [
        {
            "vehicle_id": vm.vehicle_id,
            "travel_time": vm.travel_time,
            "effort": vm.effort,
            "min_rear_margin": vm.min_rear_margin,
            "stop_and_go": vm.stop_and_go,
            "min_lateral_headway": {k: v for k, v in
                                    sorted(vm.lateral_headways.items())},
        }
        for vm in m.vehicles
    ]
    metrics_doc = {
        "units": UNITS_NOTE,
        "mode": result.mode,
        "per_vehicle": per_vehicle,
        "aggregate": {
            "vehicles": len(m.vehicles),
            "mean_travel_time": m.mean_travel_time,
            "mean_effort": m.mean_effort,
            "total_effort": m.total_effort,
            "min_rear_margin": m.min_rear_margin,
            "min_lateral_headway": {k: v for k, v in
                                    sorted(m.min_lateral_headway.items())},
            "total_stop_and_go": m.total_stop_and_go,
        },
        "bound_warnings": [
            {"vehicle_id": vid, "zone": zone, "kind": exc.kind,
             "t_start": exc.t_start, "t_end": exc.t_end, "peak": exc.peak}
            for vid, zone, exc in result.bound_warnings
        ],
    }
    metrics_path = os.path.join(out_dir, "metrics.json")
    with open(metrics_path, "w", newline="\n") as fh:
        json.dump(_plain(metrics_doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(metrics_path)

    schedule_doc = {"units": UNITS_NOTE, "mode": result.mode,
                    "zones": result.schedule}
    schedule_path = os.path.join(out_dir, "schedule.json")
    with open(schedule_path, "w", newline="\n") as fh:
        json.dump(_plain(schedule_doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(schedule_path)
    return paths
