"""Deterministic corridor simulation in two modes.

Optimal mode replays the coordination protocol: each control-zone arrival is
scheduled through the per-zone ledger, then committed to a minimum-effort
trajectory (gap-constrained against its same-lane predecessor).  Conflict
zones are crossed at the trajectory's terminal speed and inter-zone links at
that same speed, so the whole motion is piecewise analytic.

Baseline mode integrates an intelligent-driver car-following law with a
1.2 s desired headway plus stop/yield rules at every conflict zone:
a vehicle enters only when the zone is predicted clear of conflicting
traffic for the next `rho` seconds, first-come-first-served by arrival at
the zone boundary.

Both modes are driven purely by the scenario inputs; identical inputs give
identical results down to the last bit.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corridor import CorridorSpec, Route, feasible_time_bounds
from .errors import ConfigError, ScheduleInfeasibleError, TrajectorySolverError
from .scheduler import ScheduleLedger, entry_time_same_lane, \
    first_vehicle_time, schedule_entry
from .trajectory import (BoundExcursion, BvpProblem, PiecewiseTrajectory,
                         check_bounds, effort, leader_state,
                         solve_constrained, solve_unconstrained)

# Speed below which a vehicle counts as stopped for the stop-and-go index.
STOP_SPEED = 0.5
# Terminal speeds below this leave the conflict zone effectively blocked.
_MIN_TERMINAL_SPEED = 0.05
# Baseline behavior constants.
IDM_HEADWAY = 1.2          # desired time headway, s
IDM_COMFORT_BRAKE = 2.0    # comfortable deceleration, m/s^2
_STOP_BUFFER = 1.0         # stop this far before a closed zone boundary, m
_CLAIM_DISTANCE = 30.0     # register zone arrival order within this range, m
# Extra clearance over delta demanded before entering a later control zone,
# scaled by the closing speed (see _deferred_entry_time).
_ENTRY_CLEARANCE_FACTOR = 1.05


@dataclass(frozen=True)
class Arrival:
    t0: float
    v0: float
    route_id: str


class SimEventKind(enum.IntEnum):
    # processing order at equal times: exits free their zone before entries
    CONFLICT_EXIT = 0
    CONTROL_ENTRY = 1
    CONFLICT_ENTRY = 2


@dataclass(frozen=True, order=True)
class SimEvent:
    t: float
    kind: SimEventKind
    vehicle_id: int
    leg_index: int


@dataclass
class LegGeometry:
    zone_id: str
    approach_id: str
    s_control_entry: float
    s_conflict_entry: float
    s_conflict_exit: float
    s_leg_end: float


def route_geometry(corridor: CorridorSpec, route: Route) -> list[LegGeometry]:
    """Cumulative route coordinates, s = 0 at the first control-zone entry."""
    legs = []
    s = 0.0
    for leg in route.legs:
        zone = corridor.zone(leg.zone_id)
        approach = zone.approach(leg.approach_id)
        entry = s + approach.control_zone_length
        exit_ = entry + zone.zone_length
        end = exit_ + leg.link_after
        legs.append(LegGeometry(leg.zone_id, leg.approach_id, s, entry,
                                exit_, end))
        s = end
    return legs


@dataclass
class ZoneVisit:
    zone_id: str
    approach_id: str
    t_control_entry: float
    v_entry: float
    t_conflict_entry: float
    t_conflict_exit: float
    v_terminal: float
    trajectory: Optional[PiecewiseTrajectory]
    predecessor_id: Optional[int]
    case: int


@dataclass
class VehicleRecord:
    id: int
    route: Route
    spawn_time: float
    entry_speed: float
    mode: str
    visits: list[ZoneVisit] = field(default_factory=list)
    done_time: Optional[float] = None


@dataclass
class VehicleMetrics:
    vehicle_id: int
    travel_time: float
    effort: float
    min_rear_margin: Optional[float]   # None when the vehicle never had a leader
    stop_and_go: int
    lateral_headways: dict[str, Optional[float]]


@dataclass
class ScenarioMetrics:
    vehicles: list[VehicleMetrics]
    mean_travel_time: float
    mean_effort: float
    total_effort: float
    min_rear_margin: Optional[float]
    min_lateral_headway: dict[str, Optional[float]]
    total_stop_and_go: int


@dataclass
class ScenarioResult:
    mode: str
    corridor: CorridorSpec
    records: list[VehicleRecord]
    schedule: dict
    metrics: ScenarioMetrics
    samples: dict[int, dict]          # vehicle id -> {"t": [...], "s": ...}
    bound_warnings: list[tuple[int, str, BoundExcursion]]
    commit_order: list[tuple[int, str]]
    sample_dt: float


# ---------------------------------------------------------------------------
# shared arrival validation


def _validate_arrivals(corridor: CorridorSpec, arrivals: list[Arrival],
                       routes: dict[str, Route]) -> list[str]:
    errors = []
    params = corridor.params
    last_t = -math.inf
    for idx, arr in enumerate(arrivals):
        if arr.route_id not in routes:
            errors.append(f"arrival[{idx}]: unknown route {arr.route_id!r}")
            continue
        if arr.t0 < last_t:
            errors.append(f"arrival[{idx}]: arrivals must be sorted by time")
        last_t = max(last_t, arr.t0)
        if not params.v_min <= arr.v0 <= params.v_max:
            errors.append(
                f"arrival[{idx}]: entry speed {arr.v0} outside"
                f" [{params.v_min}, {params.v_max}]")
    return errors


# ---------------------------------------------------------------------------
# optimal mode


class _OptimalSimulator:
    def __init__(self, corridor: CorridorSpec, arrivals: list[Arrival],
                 routes: dict[str, Route]):
        self.corridor = corridor
        self.params = corridor.params
        self.routes = routes
        self.ledger = ScheduleLedger(corridor)
        self.records: list[VehicleRecord] = []
        self.geometries: dict[int, list[LegGeometry]] = {}
        self.current_speed: dict[int, float] = {}
        self.commit_order: list[tuple[int, str]] = []
        self.bound_warnings: list[tuple[int, str, BoundExcursion]] = []
        self.events: list[SimEvent] = []
        for vid, arr in enumerate(arrivals):
            route = routes[arr.route_id]
            rec = VehicleRecord(vid, route, arr.t0, arr.v0, "optimal")
            self.records.append(rec)
            self.geometries[vid] = route_geometry(corridor, route)
            self.current_speed[vid] = arr.v0
            heapq.heappush(self.events, SimEvent(
                arr.t0, SimEventKind.CONTROL_ENTRY, vid, 0))

    def run(self) -> None:
        while self.events:
            ev = heapq.heappop(self.events)
            if ev.kind == SimEventKind.CONTROL_ENTRY:
                self._control_entry(ev)
            elif ev.kind == SimEventKind.CONFLICT_ENTRY:
                self._conflict_entry(ev)
            else:
                self._conflict_exit(ev)

    # -- event handlers ----------------------------------------------------

    def _control_entry(self, ev: SimEvent) -> None:
        rec = self.records[ev.vehicle_id]
        leg = rec.route.legs[ev.leg_index]
        zone = self.corridor.zone(leg.zone_id)
        approach = zone.approach(leg.approach_id)
        params = self.params
        v0 = self.current_speed[ev.vehicle_id]
        t = ev.t

        pred_entry = self.ledger.zone(zone.id).last_on_approach(approach.id)
        pred_traj = None
        if pred_entry is not None:
            pred_traj = self._zone_trajectory(pred_entry.vehicle_id, zone.id)

        if pred_traj is not None:
            gap = leader_state(pred_traj, t)[0]
            if ev.leg_index == 0:
                if gap < params.delta - 1e-9:
                    raise ConfigError(
                        [f"arrival of vehicle {ev.vehicle_id} violates the"
                         f" initial gap: leader {pred_entry.vehicle_id} only"
                         f" {gap:.2f} m ahead (delta = {params.delta})"])
            else:
                t_ok = self._deferred_entry_time(pred_traj, t, v0)
                if t_ok > t + 1e-9:
                    heapq.heappush(self.events, SimEvent(
                        t_ok, SimEventKind.CONTROL_ENTRY, ev.vehicle_id,
                        ev.leg_index))
                    return

        self.ledger.enqueue(zone.id, ev.vehicle_id)
        t_min, t_max = feasible_time_bounds(approach, t, params)
        desired = first_vehicle_time(t, v0, approach, params)
        if pred_entry is not None:
            base = entry_time_same_lane(pred_entry.entry_time, params.rho,
                                        t_min, t_max)
            candidate = max(desired, base)
            if candidate < pred_entry.entry_time + params.rho - 1e-9:
                raise ScheduleInfeasibleError(
                    f"vehicle {ev.vehicle_id} at zone {zone.id!r}: same-lane"
                    f" headway does not fit below t_max={t_max:.3f}",
                    vehicle_id=ev.vehicle_id, zone_id=zone.id)
        else:
            candidate = desired
        t_star = schedule_entry(zone, self.ledger, ev.vehicle_id,
                                approach.id, candidate, t_min, t_max,
                                params.rho)

        problem = BvpProblem(t0=t, tf=t_star, v0=v0,
                             pf=approach.control_zone_length,
                             leader=pred_traj, delta=params.delta)
        try:
            traj = solve_constrained(problem)
        except TrajectorySolverError as err:
            raise TrajectorySolverError(
                f"vehicle {ev.vehicle_id} at zone {zone.id!r}: {err}",
                diagnostics=err.diagnostics) from err
        traj = PiecewiseTrajectory(traj.arcs, ev.vehicle_id, zone.id)
        vf = traj.terminal_state()[1]
        if vf < _MIN_TERMINAL_SPEED:
            raise TrajectorySolverError(
                f"vehicle {ev.vehicle_id} at zone {zone.id!r}: terminal speed"
                f" {vf:.3f} m/s cannot carry it through the conflict zone")
        for exc in check_bounds(traj, params):
            self.bound_warnings.append((ev.vehicle_id, zone.id, exc))

        rec.visits.append(ZoneVisit(
            zone_id=zone.id, approach_id=approach.id, t_control_entry=t,
            v_entry=v0, t_conflict_entry=t_star, t_conflict_exit=math.nan,
            v_terminal=vf, trajectory=traj,
            predecessor_id=None if pred_entry is None else pred_entry.vehicle_id,
            case=self.ledger.zone(zone.id).entries[-1].case))
        self.commit_order.append((ev.vehicle_id, zone.id))
        heapq.heappush(self.events, SimEvent(
            t_star, SimEventKind.CONFLICT_ENTRY, ev.vehicle_id, ev.leg_index))

    def _conflict_entry(self, ev: SimEvent) -> None:
        rec = self.records[ev.vehicle_id]
        visit = rec.visits[ev.leg_index]
        zone = self.corridor.zone(visit.zone_id)
        transit = zone.zone_length / visit.v_terminal
        visit.t_conflict_exit = ev.t + transit
        self.current_speed[ev.vehicle_id] = visit.v_terminal
        heapq.heappush(self.events, SimEvent(
            visit.t_conflict_exit, SimEventKind.CONFLICT_EXIT,
            ev.vehicle_id, ev.leg_index))

    def _conflict_exit(self, ev: SimEvent) -> None:
        rec = self.records[ev.vehicle_id]
        visit = rec.visits[ev.leg_index]
        self.ledger.dequeue(visit.zone_id, ev.vehicle_id)
        link = rec.route.legs[ev.leg_index].link_after
        v = self.current_speed[ev.vehicle_id]
        t_link_end = ev.t + (link / v if link > 0 else 0.0)
        if ev.leg_index + 1 < len(rec.route.legs):
            heapq.heappush(self.events, SimEvent(
                t_link_end, SimEventKind.CONTROL_ENTRY, ev.vehicle_id,
                ev.leg_index + 1))
        else:
            rec.done_time = t_link_end

    # -- helpers -----------------------------------------------------------

    def _zone_trajectory(self, vehicle_id: int,
                         zone_id: str) -> Optional[PiecewiseTrajectory]:
        for visit in self.records[vehicle_id].visits:
            if visit.zone_id == zone_id:
                return visit.trajectory
        return None

    def _deferred_entry_time(self, pred_traj: PiecewiseTrajectory, t: float,
                             v0: float) -> float:
        """Earliest control-zone entry with workable clearance to the leader.

        Constant-speed link travel ignores the coupling between zones, so a
        follower can reach the next control zone with less than delta of
        physical gap.  Entry is deferred until the committed leader is at
        least delta (plus a closing-speed allowance) ahead; the one-sided
        coupling keeps every per-zone problem well posed.
        """
        params = self.params

        def clear(at):
            pk, vk, _ = leader_state(pred_traj, at)
            need = params.delta * _ENTRY_CLEARANCE_FACTOR \
                + params.rho * max(0.0, v0 - vk)
            return pk - need

        if clear(t) >= 0:
            return t
        lo, hi = t, t + 1.0
        horizon = t + 300.0
        while clear(hi) < 0:
            lo, hi = hi, hi + 1.0
            if hi > horizon:
                raise ScheduleInfeasibleError(
                    "leader never opens enough gap for a control-zone entry")
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if clear(mid) >= 0:
                hi = mid
            else:
                lo = mid
        return hi


# ---------------------------------------------------------------------------
# baseline mode


def idm_acceleration(v: float, v_desired: float, gap: Optional[float],
                     closing_speed: float, params) -> float:
    """Intelligent-driver acceleration with the corridor's gap floor.

    gap is the bumper distance to the leader (None on an empty road);
    closing_speed is v - v_leader.  The returned value is clamped to the
    corridor control limits.
    """
    accel = params.u_max * (1.0 - (v / v_desired) ** 4)
    if gap is not None:
        s_star = params.delta + max(
            0.0, v * IDM_HEADWAY
            + v * closing_speed / (2.0 * math.sqrt(params.u_max * IDM_COMFORT_BRAKE)))
        accel = params.u_max * (1.0 - (v / v_desired) ** 4
                                - (s_star / max(gap, 0.1)) ** 2)
    return min(max(accel, params.u_min), params.u_max)


class _BaselineVehicle:
    __slots__ = ("vid", "route_id", "geom", "spawn", "v0", "s", "v", "u",
                 "leg_idx", "done_time", "t_hist", "s_hist", "v_hist",
                 "u_hist", "zone_entry_times")

    def __init__(self, vid, route_id, geom, spawn, v0):
        self.vid = vid
        self.route_id = route_id
        self.geom = geom
        self.spawn = spawn
        self.v0 = v0
        self.s = 0.0
        self.v = v0
        self.u = 0.0
        self.leg_idx = 0
        self.done_time = None
        self.t_hist = [spawn]
        self.s_hist = [0.0]
        self.v_hist = [v0]
        self.u_hist = [0.0]
        self.zone_entry_times = {}

    def current_leg(self) -> Optional[LegGeometry]:
        while self.leg_idx < len(self.geom) and \
                self.s >= self.geom[self.leg_idx].s_leg_end - 1e-9:
            self.leg_idx += 1
        if self.leg_idx >= len(self.geom):
            return None
        return self.geom[self.leg_idx]


class BaselineSimulator:
    """Fixed-step car-following simulation with zone yield rules."""

    def __init__(self, corridor: CorridorSpec, arrivals: list[Arrival],
                 routes: dict[str, Route], dt: float = 0.02):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.corridor = corridor
        self.params = corridor.params
        self.routes = routes
        self.dt = dt
        self.t = min(a.t0 for a in arrivals) if arrivals else 0.0
        self.pending = list(arrivals)
        self.pending_ids = list(range(len(arrivals)))
        self.active: list[_BaselineVehicle] = []
        self.finished: list[_BaselineVehicle] = []
        self.claims: dict[str, list[tuple[float, int]]] = \
            {z.id: [] for z in corridor.zones}
        self.inside: dict[str, set[int]] = {z.id: set() for z in corridor.zones}
        self._geom_cache = {rid: route_geometry(corridor, r)
                            for rid, r in routes.items()}
        self._conflict_ok: dict[tuple[str, str, str], bool] = {}
        for z in corridor.zones:
            for a in z.approaches:
                for b in z.approaches:
                    self._conflict_ok[(z.id, a.id, b.id)] = \
                        z.conflicts(a.id, b.id)

    # -- stepping ----------------------------------------------------------

    def step(self, dt: Optional[float] = None) -> None:
        """Advance every vehicle by one integration step."""
        dt = self.dt if dt is None else dt
        t = self.t
        self._spawn(t)
        order = sorted(self.active, key=lambda veh: (-veh.s, veh.vid))
        accels = [self._vehicle_accel(veh, t) for veh in order]
        for veh, u in zip(order, accels):
            v_new = veh.v + u * dt
            if v_new < 0.0:
                v_new = 0.0
                u = (v_new - veh.v) / dt
            veh.s += 0.5 * (veh.v + v_new) * dt
            veh.v = v_new
            veh.u = u
            self._update_zone_presence(veh, t + dt)
            veh.t_hist.append(t + dt)
            veh.s_hist.append(veh.s)
            veh.v_hist.append(veh.v)
            veh.u_hist.append(u)
        self.t = t + dt
        still = []
        for veh in self.active:
            if veh.s >= veh.geom[-1].s_leg_end - 1e-9:
                veh.done_time = self.t
                self.finished.append(veh)
            else:
                still.append(veh)
        self.active = still

    def run(self, max_time: float) -> None:
        while self.pending or self.active:
            if self.t > max_time:
                raise ScheduleInfeasibleError(
                    f"baseline scenario gridlocked: {len(self.active)}"
                    f" vehicles still active at t={self.t:.1f}")
            self.step()

    # -- internals ----------------------------------------------------------

    def _spawn(self, t: float) -> None:
        # vehicles materialize on the integration tick at/after their arrival
        while self.pending and self.pending[0].t0 <= t + 1e-12:
            arr = self.pending.pop(0)
            vid = self.pending_ids.pop(0)
            geom = self._geom_cache[arr.route_id]
            leader = self._route_leader_at(arr.route_id, 0.0)
            if leader is not None and leader.s < self.params.delta - 1e-9:
                raise ConfigError(
                    [f"arrival of vehicle {vid} violates the initial gap:"
                     f" leader {leader.vid} only {leader.s:.2f} m ahead"
                     f" (delta = {self.params.delta})"])
            self.active.append(_BaselineVehicle(vid, arr.route_id, geom,
                                                t, arr.v0))

    def _route_leader_at(self, route_id: str,
                         s: float) -> Optional[_BaselineVehicle]:
        best = None
        for veh in self.active:
            if veh.route_id == route_id and veh.s > s + 1e-12:
                if best is None or veh.s < best.s:
                    best = veh
        return best

    def _vehicle_accel(self, veh: _BaselineVehicle, t: float) -> float:
        params = self.params
        leader = self._route_leader_at(veh.route_id, veh.s)
        gap = None
        closing = 0.0
        if leader is not None:
            gap = leader.s - veh.s
            closing = veh.v - leader.v
        accel = idm_acceleration(veh.v, params.v_max, gap, closing, params)

        leg = veh.current_leg()
        if leg is not None and veh.s < leg.s_conflict_entry:
            self._maybe_claim(veh, leg, t)
            if not self._may_enter(veh, leg):
                stop_gap = (leg.s_conflict_entry - _STOP_BUFFER
                            + params.delta) - veh.s
                stop_accel = idm_acceleration(veh.v, params.v_max,
                                              stop_gap, veh.v, params)
                accel = min(accel, stop_accel)
        return accel

    def _maybe_claim(self, veh: _BaselineVehicle, leg: LegGeometry,
                     t: float) -> None:
        if leg.s_conflict_entry - veh.s <= _CLAIM_DISTANCE:
            claims = self.claims[leg.zone_id]
            if all(vid != veh.vid for _, vid in claims):
                claims.append((t, veh.vid))

    def _claim_rank(self, zone_id: str, vid: int) -> Optional[int]:
        for rank, (_, claimed) in enumerate(sorted(self.claims[zone_id])):
            if claimed == vid:
                return rank
        return None

    def _may_enter(self, veh: _BaselineVehicle, leg: LegGeometry) -> bool:
        """Zone clear of conflicting traffic for the next rho seconds, FCFS."""
        params = self.params
        my_rank = self._claim_rank(leg.zone_id, veh.vid)
        for other in self.active:
            if other.vid == veh.vid:
                continue
            other_leg = None
            for lg in other.geom:
                if lg.zone_id == leg.zone_id:
                    other_leg = lg
                    break
            if other_leg is None:
                continue
            if not self._conflict_ok[(leg.zone_id, leg.approach_id,
                                      other_leg.approach_id)]:
                continue
            if other.s >= other_leg.s_conflict_exit - 1e-9:
                continue  # already beyond the zone
            if other.vid in self.inside[leg.zone_id]:
                return False
            # predicted occupancy at current speed
            if other.v > 1e-3:
                t_in = (other_leg.s_conflict_entry - other.s) / other.v
                if t_in <= params.rho:
                    return False
            # first-come-first-served among waiting claimants
            other_rank = self._claim_rank(leg.zone_id, other.vid)
            if other_rank is not None and \
                    (my_rank is None or other_rank < my_rank):
                return False
        return True

    def _update_zone_presence(self, veh: _BaselineVehicle, t: float) -> None:
        for lg in veh.geom:
            inside = self.inside[lg.zone_id]
            if lg.s_conflict_entry - 1e-9 <= veh.s < lg.s_conflict_exit - 1e-9:
                if veh.vid not in inside:
                    inside.add(veh.vid)
                    veh.zone_entry_times[lg.zone_id] = t
            elif veh.vid in inside and veh.s >= lg.s_conflict_exit - 1e-9:
                inside.discard(veh.vid)
                self.claims[lg.zone_id] = [
                    (ts, vv) for ts, vv in self.claims[lg.zone_id]
                    if vv != veh.vid]


def baseline_step(sim: BaselineSimulator, dt: float) -> None:
    """Advance a baseline simulation by one step of size dt."""
    sim.step(dt)


# ---------------------------------------------------------------------------
# sampling and metrics


def _phase_at(geom: list[LegGeometry], s: float) -> str:
    for lg in geom:
        if s < lg.s_conflict_entry - 1e-9:
            return f"control:{lg.zone_id}"
        if s < lg.s_conflict_exit - 1e-9:
            return f"conflict:{lg.zone_id}"
        if s < lg.s_leg_end - 1e-9:
            return f"link:{lg.zone_id}"
    return "exit"


def _sample_optimal(rec: VehicleRecord, geom: list[LegGeometry],
                    sample_dt: float) -> dict:
    """Piece the per-zone trajectories and constant-speed segments together
    on the global sampling grid."""
    def make_zone(traj, offs):
        def fn(t):
            p, v, u = traj.evaluate(t)
            return (offs + p, v, u)
        return fn

    def make_const(t_ref, s_ref, v):
        def fn(t):
            return (s_ref + v * (t - t_ref), v, 0.0)
        return fn

    segs = []  # (t0, t1, fn(t) -> (s, v, u))
    for idx, (visit, lg) in enumerate(zip(rec.visits, geom)):
        segs.append((visit.t_control_entry, visit.t_conflict_entry,
                     make_zone(visit.trajectory, lg.s_control_entry)))
        segs.append((visit.t_conflict_entry, visit.t_conflict_exit,
                     make_const(visit.t_conflict_entry, lg.s_conflict_entry,
                                visit.v_terminal)))
        # link segment: may be stretched by a deferred next entry
        if idx + 1 < len(rec.visits):
            next_start = rec.visits[idx + 1].t_control_entry
        else:
            next_start = rec.done_time
        link_len = lg.s_leg_end - lg.s_conflict_exit
        dur = next_start - visit.t_conflict_exit
        if dur > 1e-12:
            v_link = link_len / dur if link_len > 0 else visit.v_terminal
            segs.append((visit.t_conflict_exit, next_start,
                         make_const(visit.t_conflict_exit, lg.s_conflict_exit,
                                    v_link)))

    t0, t_end = rec.spawn_time, rec.done_time
    k0 = math.ceil(round(t0 / sample_dt, 9))
    out = {"t": [], "s": [], "v": [], "u": [], "phase": []}
    k = k0
    while True:
        t = k * sample_dt
        if t > t_end + 1e-9:
            break
        for s0, s1, fn in segs:
            if s0 - 1e-9 <= t <= s1 + 1e-9:
                s, v, u = fn(min(max(t, s0), s1))
                out["t"].append(t)
                out["s"].append(s)
                out["v"].append(v)
                out["u"].append(u)
                out["phase"].append(_phase_at(geom, s + 1e-9))
                break
        k += 1
    return out


def _sample_baseline(veh: _BaselineVehicle, sample_dt: float,
                     dt: float) -> dict:
    stride = max(int(round(sample_dt / dt)), 1)
    out = {"t": [], "s": [], "v": [], "u": [], "phase": []}
    for i in range(0, len(veh.t_hist), stride):
        out["t"].append(veh.t_hist[i])
        out["s"].append(veh.s_hist[i])
        out["v"].append(veh.v_hist[i])
        out["u"].append(veh.u_hist[i])
        out["phase"].append(_phase_at(veh.geom, veh.s_hist[i] + 1e-9))
    return out


def _count_stops(speeds: list[float]) -> int:
    stops = 0
    below = False
    for v in speeds:
        if v < STOP_SPEED and not below:
            stops += 1
            below = True
        elif v >= STOP_SPEED:
            below = False
    return stops


def _optimal_rear_margin(rec: VehicleRecord, records: list[VehicleRecord],
                         delta: float, dt: float = 0.01) -> Optional[float]:
    """Minimum same-lane gap slack over every control-zone window,
    recomputed by sampling the committed trajectories."""
    worst = None
    for visit in rec.visits:
        if visit.predecessor_id is None:
            continue
        pred = records[visit.predecessor_id]
        pred_traj = next(v.trajectory for v in pred.visits
                         if v.zone_id == visit.zone_id)
        traj = visit.trajectory
        t = visit.t_control_entry
        while t <= visit.t_conflict_entry + 1e-12:
            pk = leader_state(pred_traj, t)[0]
            p = traj.evaluate(min(t, traj.t_end))[0]
            m = pk - p - delta
            worst = m if worst is None else min(worst, m)
            t += dt
    return worst


def _baseline_rear_margin(veh: _BaselineVehicle,
                          all_vehicles: list[_BaselineVehicle],
                          delta: float) -> Optional[float]:
    pred = None
    for other in all_vehicles:
        if other.route_id == veh.route_id and other.vid < veh.vid:
            if pred is None or other.vid > pred.vid:
                pred = other
    if pred is None:
        return None
    # histories share the step grid; align by start index
    offset = int(round((veh.t_hist[0] - pred.t_hist[0])
                       / (veh.t_hist[1] - veh.t_hist[0]))) \
        if len(veh.t_hist) > 1 else 0
    worst = None
    for i in range(len(veh.t_hist)):
        j = i + offset
        if j >= len(pred.t_hist):
            break
        m = pred.s_hist[j] - veh.s_hist[i] - delta
        worst = m if worst is None else min(worst, m)
    return worst


def compute_metrics(result: ScenarioResult) -> ScenarioMetrics:
    """Per-vehicle and aggregate metrics, recomputed from sampled motion."""
    corridor = result.corridor
    delta = corridor.params.delta
    per_vehicle = []
    lateral_by_zone: dict[str, list[float]] = {z.id: [] for z in corridor.zones}

    entry_times: dict[str, list[tuple[float, str, int]]] = \
        {z.id: [] for z in corridor.zones}
    for rec in result.records:
        for visit in rec.visits:
            entry_times[visit.zone_id].append(
                (visit.t_conflict_entry, visit.approach_id, rec.id))

    for rec in result.records:
        sample = result.samples[rec.id]
        travel = rec.done_time - rec.spawn_time
        if result.mode == "optimal":
            eff = sum(effort(v.trajectory) for v in rec.visits)
            margin = _optimal_rear_margin(rec, result.records, delta)
        else:
            ts = np.asarray(sample["_fine_t"])
            us = np.asarray(sample["_fine_u"])
            eff = 0.5 * float(np.trapezoid(us * us, ts)) if len(ts) > 1 else 0.0
            margin = sample.get("_rear_margin")
        stops = _count_stops(sample["v"])
        lat: dict[str, Optional[float]] = {}
        for visit in rec.visits:
            zone = corridor.zone(visit.zone_id)
            best = None
            for t_other, appr_other, vid_other in entry_times[visit.zone_id]:
                if vid_other == rec.id:
                    continue
                if zone.conflicts(visit.approach_id, appr_other):
                    gap = abs(visit.t_conflict_entry - t_other)
                    best = gap if best is None else min(best, gap)
            lat[visit.zone_id] = best
            if best is not None:
                lateral_by_zone[visit.zone_id].append(best)
        per_vehicle.append(VehicleMetrics(
            vehicle_id=rec.id, travel_time=travel, effort=eff,
            min_rear_margin=margin, stop_and_go=stops, lateral_headways=lat))

    margins = [m.min_rear_margin for m in per_vehicle
               if m.min_rear_margin is not None]
    return ScenarioMetrics(
        vehicles=per_vehicle,
        mean_travel_time=float(np.mean([m.travel_time for m in per_vehicle]))
        if per_vehicle else 0.0,
        mean_effort=float(np.mean([m.effort for m in per_vehicle]))
        if per_vehicle else 0.0,
        total_effort=float(sum(m.effort for m in per_vehicle)),
        min_rear_margin=min(margins) if margins else None,
        min_lateral_headway={z: (min(v) if v else None)
                             for z, v in lateral_by_zone.items()},
        total_stop_and_go=sum(m.stop_and_go for m in per_vehicle),
    )


# ---------------------------------------------------------------------------
# entry point


def run_scenario(corridor: CorridorSpec, arrivals: list[Arrival],
                 routes: dict[str, Route], mode: str = "optimal",
                 sample_dt: float = 0.1,
                 baseline_dt: float = 0.02) -> ScenarioResult:
    """Simulate one scenario and return trajectories, schedule and metrics.

    `arrivals` must be sorted by spawn time and satisfy the initial-gap and
    speed-window conditions; offending arrivals raise ConfigError.  Scheduler
    or solver dead ends raise with the vehicle and zone identified.
    """
    if mode not in ("optimal", "baseline"):
        raise ValueError(f"unknown mode {mode!r}")
    route_errors = []
    for route in routes.values():
        route_errors.extend(corridor.validate_route(route))
    route_errors.extend(_validate_arrivals(corridor, arrivals, routes))
    if route_errors:
        raise ConfigError(route_errors)

    if mode == "optimal":
        sim = _OptimalSimulator(corridor, arrivals, routes)
        sim.run()
        samples = {rec.id: _sample_optimal(rec, sim.geometries[rec.id],
                                           sample_dt)
                   for rec in sim.records}
        result = ScenarioResult(
            mode=mode, corridor=corridor, records=sim.records,
            schedule=sim.ledger.as_dict(), metrics=None, samples=samples,
            bound_warnings=sim.bound_warnings,
            commit_order=sim.commit_order, sample_dt=sample_dt)
        result.metrics = compute_metrics(result)
        return result

    bsim = BaselineSimulator(corridor, arrivals, routes, dt=baseline_dt)
    horizon = (arrivals[-1].t0 if arrivals else 0.0) + 1800.0
    bsim.run(horizon)
    everyone = sorted(bsim.finished, key=lambda veh: veh.vid)
    records = []
    samples = {}
    for veh in everyone:
        rec = VehicleRecord(veh.vid, routes[veh.route_id], veh.spawn,
                            veh.v0, "baseline", done_time=veh.done_time)
        for lg in veh.geom:
            t_in = veh.zone_entry_times.get(lg.zone_id)
            if t_in is None:
                continue
            rec.visits.append(ZoneVisit(
                zone_id=lg.zone_id, approach_id=lg.approach_id,
                t_control_entry=math.nan, v_entry=math.nan,
                t_conflict_entry=t_in, t_conflict_exit=math.nan,
                v_terminal=math.nan, trajectory=None, predecessor_id=None,
                case=0))
        records.append(rec)
        sample = _sample_baseline(veh, sample_dt, baseline_dt)
        sample["_fine_t"] = veh.t_hist
        sample["_fine_u"] = veh.u_hist
        sample["_rear_margin"] = _baseline_rear_margin(
            veh, everyone, corridor.params.delta)
        samples[veh.vid] = sample
    result = ScenarioResult(
        mode=mode, corridor=corridor, records=records, schedule={},
        metrics=None, samples=samples, bound_warnings=[], commit_order=[],
        sample_dt=sample_dt)
    result.metrics = compute_metrics(result)
    return result
