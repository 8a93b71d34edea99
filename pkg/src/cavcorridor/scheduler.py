"""Upper-level entry-time assignment.

Each conflict zone keeps a ledger of already-assigned entry times.  When a
vehicle arrives at a control zone it receives the earliest attainable entry
time that keeps

  * at least `rho` seconds behind its same-lane predecessor's entry, and
  * at least `rho` seconds away from every assigned entry of a laterally
    conflicting vehicle,

clamped to the kinematically attainable window [t_min, t_max].  Assignments
are first-come-first-served in control-zone arrival order and never change
once stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .corridor import (ApproachSpec, ConflictZoneSpec, GlobalParams,
                       feasible_time_bounds)
from .errors import ScheduleInfeasibleError

# Absolute slack when comparing assigned times against window edges; assigned
# times are exact sums of inputs, so this only absorbs float representation
# noise, never a real constraint violation.
_EDGE_EPS = 1e-9


def entry_time_same_lane(t_k_z: Optional[float], rho: float, t_min: float,
                         t_max: float) -> float:
    """Earliest same-lane-feasible entry time inside [t_min, t_max].

    `t_k_z` is the predecessor's assigned entry time on the same approach;
    pass None for a lane with no predecessor, which drops the headway term
    and leaves only the window's lower edge.  Total on valid inputs: the
    value is clipped into the window even when the headway term falls
    outside it (the caller decides whether a clipped-down result is usable).
    """
    if t_min > t_max:
        raise ValueError(f"empty feasible window: [{t_min}, {t_max}]")
    if t_k_z is None:
        return t_min
    return max(min(t_k_z + rho, t_max), t_min)


def first_vehicle_time(t0: float, v0: float, approach: ApproachSpec,
                       params: GlobalParams) -> float:
    """Desired entry time of an unconstrained vehicle: hold the entry speed.

    Cruising through the control zone at the entry speed v0 is the
    zero-effort plan, so the desired conflict-zone entry is t0 + L/v0,
    clipped into the attainable window.
    """
    if not params.v_min <= v0 <= params.v_max:
        raise ValueError(
            f"entry speed {v0} outside [{params.v_min}, {params.v_max}]")
    t_min, t_max = feasible_time_bounds(approach, t0, params)
    return max(min(t0 + approach.control_zone_length / v0, t_max), t_min)


def build_sets_A_L(candidate_t: float, conflicting_times: Sequence[float],
                   rho: float) -> tuple[list[float], list[float]]:
    """Split assigned conflicting times into the later set A and slot set L.

    A holds the assigned times at or after `candidate_t`.  L holds those
    members of A whose gap to the next member is wide enough to admit an
    entry between them, i.e. t_j + rho <= t_{j+1} - rho.  The last member
    of A has no successor, defines no gap, and is never in L.
    """
    times = list(conflicting_times)
    if any(times[i] > times[i + 1] for i in range(len(times) - 1)):
        raise ValueError("conflicting_times must be sorted ascending")
    a_set = [t for t in times if t >= candidate_t]
    l_set = [a_set[i] for i in range(len(a_set) - 1)
             if a_set[i] + rho <= a_set[i + 1] - rho]
    return a_set, l_set


def resolve_entry_time(t_candidate: float, conflicting_times: Sequence[float],
                       rho: float) -> tuple[float, int]:
    """Earliest entry time >= t_candidate clear of every conflicting window.

    Each assigned time t_c forbids entries inside the open interval
    (t_c - rho, t_c + rho).  A single ascending pass bumps the candidate to
    t_c + rho whenever it lands inside a window; because bumping only moves
    the time forward, one pass over the sorted times yields the minimal
    feasible entry.

    Returns (entry_time, case) where `case` labels which branch of the
    recursive assignment produced the value:

      1: every conflicting entry is earlier than the candidate
      2: the candidate itself fits ahead of all later entries
      3: slotted into the earliest admissible gap between later entries
      4: appended after the last conflicting entry (no gap fits)
    """
    times = sorted(conflicting_times)
    t = t_candidate
    for t_c in times:
        # separations within 1e-9 of rho count as satisfied (float slack)
        if -rho + _EDGE_EPS < t - t_c < rho - _EDGE_EPS:
            t = t_c + rho
    a_set = [t_c for t_c in times if t_c >= t_candidate]
    if not a_set:
        case = 1
    elif t <= t_candidate:
        case = 2
    elif t > max(a_set):
        case = 4
    else:
        case = 3
    return t, case


@dataclass
class LedgerEntry:
    vehicle_id: int
    approach_id: str
    entry_time: float
    case: int  # assignment branch, for diagnostics


@dataclass
class ZoneLedger:
    """Per-zone record of assignments plus the live control-zone queue."""

    zone_id: str
    entries: list[LedgerEntry] = field(default_factory=list)
    queue: list[int] = field(default_factory=list)  # FIFO vehicle ids

    def times_for(self, approach_ids) -> list[float]:
        wanted = set(approach_ids)
        return sorted(e.entry_time for e in self.entries
                      if e.approach_id in wanted)

    def last_on_approach(self, approach_id: str) -> Optional[LedgerEntry]:
        for e in reversed(self.entries):
            if e.approach_id == approach_id:
                return e
        return None

    def assigned_time(self, vehicle_id: int) -> Optional[float]:
        for e in self.entries:
            if e.vehicle_id == vehicle_id:
                return e.entry_time
        return None


class ScheduleLedger:
    """Coordinator bookkeeping for every zone of a corridor.

    Assignments are append-only: once an entry time is stored it is never
    modified, and later queries return the identical value.  Mutation is
    meant to be serialized per zone (the simulator drives it from a single
    event loop).
    """

    def __init__(self, corridor):
        self._corridor = corridor
        self._zones = {z.id: ZoneLedger(z.id) for z in corridor.zones}

    def zone(self, zone_id: str) -> ZoneLedger:
        return self._zones[zone_id]

    def enqueue(self, zone_id: str, vehicle_id: int):
        self._zones[zone_id].queue.append(vehicle_id)

    def dequeue(self, zone_id: str, vehicle_id: int):
        q = self._zones[zone_id].queue
        if vehicle_id in q:
            q.remove(vehicle_id)

    def record(self, zone_id: str, vehicle_id: int, approach_id: str,
               entry_time: float, case: int) -> LedgerEntry:
        ledger = self._zones[zone_id]
        if ledger.assigned_time(vehicle_id) is not None:
            raise ValueError(
                f"vehicle {vehicle_id} already assigned at zone {zone_id!r};"
                " assignments are immutable")
        entry = LedgerEntry(vehicle_id, approach_id, entry_time, case)
        ledger.entries.append(entry)
        return entry

    def as_dict(self) -> dict:
        """Deterministic plain-data dump in corridor zone order."""
        out = {}
        for z in self._corridor.zones:
            ledger = self._zones[z.id]
            out[z.id] = [
                {"vehicle_id": e.vehicle_id, "approach": e.approach_id,
                 "entry_time": e.entry_time, "case": e.case}
                for e in ledger.entries
            ]
        return out


def schedule_entry(zone: ConflictZoneSpec, ledger: ScheduleLedger,
                   vehicle_id: int, approach_id: str, t_candidate: float,
                   t_min: float, t_max: float, rho: float) -> float:
    """Assign and store the conflict-zone entry time for one arrival.

    `t_candidate` must already incorporate the same-lane headway and the
    attainable window (see entry_time_same_lane / first_vehicle_time).  The
    lateral pass then finds the earliest admissible time against every
    assigned conflicting entry.  Raises ScheduleInfeasibleError when the
    same-lane headway or the lateral result cannot fit below t_max; nothing
    is stored in that case, so the ledger never holds a violating time.
    """
    zl = ledger.zone(zone.id)
    pred = zl.last_on_approach(approach_id)
    if pred is not None and t_candidate < pred.entry_time + rho - _EDGE_EPS:
        raise ScheduleInfeasibleError(
            f"vehicle {vehicle_id} at zone {zone.id!r}: same-lane headway"
            f" behind vehicle {pred.vehicle_id} exceeds the latest attainable"
            f" entry {t_max:.3f}",
            vehicle_id=vehicle_id, zone_id=zone.id)

    conflicting_approaches = [
        a.id for a in zone.approaches
        if a.id != approach_id and zone.conflicts(a.id, approach_id)
    ]
    conflicting_times = zl.times_for(conflicting_approaches)
    t_star, case = resolve_entry_time(t_candidate, conflicting_times, rho)
    t_star = max(t_star, t_min)
    if t_star > t_max + _EDGE_EPS:
        raise ScheduleInfeasibleError(
            f"vehicle {vehicle_id} at zone {zone.id!r}: earliest conflict-free"
            f" entry {t_star:.3f} exceeds the latest attainable {t_max:.3f}",
            vehicle_id=vehicle_id, zone_id=zone.id)
    ledger.record(zone.id, vehicle_id, approach_id, t_star, case)
    return t_star
