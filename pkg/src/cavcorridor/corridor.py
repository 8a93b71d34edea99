"""Static corridor description and pairwise route classification.

A corridor is an ordered chain of conflict zones (merge, roundabout,
intersection, ...).  Each zone has one or more entry approaches, and an
explicit set of approach pairs whose paths cross inside the zone.  Upstream
of every zone lies a control zone of known length per approach; all
coordination happens inside control zones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError, RouteError


class RelationClass(enum.Enum):
    """How two vehicles headed for the same conflict zone can interact."""

    SAME_LANE = "same_lane"            # rear-end coupling only
    LATERAL_CONFLICT = "lateral"       # crossing paths inside the zone
    NO_CONFLICT = "independent"        # disjoint paths through the zone


@dataclass(frozen=True)
class GlobalParams:
    """Corridor-wide headways, gaps and kinematic limits (SI units).

    rho:    time headway separating conflict-zone entries, s
    delta:  minimum bumper-to-bumper gap on a lane, m
    v_min, v_max: speed limits, m/s
    u_min, u_max: control (acceleration) limits, m/s^2
    horizon_cap: optional cap on the latest attainable entry delay, s;
        required when v_min == 0, otherwise unused.
    """

    rho: float
    delta: float
    v_min: float
    v_max: float
    u_min: float
    u_max: float
    horizon_cap: Optional[float] = None

    def __post_init__(self):
        problems = []
        if not self.rho > 0:
            problems.append("rho must be > 0")
        if not self.delta > 0:
            problems.append("delta must be > 0")
        if not 0 <= self.v_min < self.v_max:
            problems.append("need 0 <= v_min < v_max")
        if not self.u_min < 0 < self.u_max:
            problems.append("need u_min < 0 < u_max")
        if self.horizon_cap is not None and not self.horizon_cap > 0:
            problems.append("horizon_cap must be > 0 when given")
        if problems:
            raise ValueError("invalid GlobalParams: " + "; ".join(problems))


@dataclass(frozen=True)
class ApproachSpec:
    """One entry lane of a conflict zone.

    control_zone_length is the distance from the control-zone entry to the
    conflict-zone entry along this approach, in meters.
    """

    id: str
    control_zone_length: float

    def __post_init__(self):
        if not self.control_zone_length > 0:
            raise ValueError(f"approach {self.id!r}: control_zone_length must be > 0")


@dataclass(frozen=True)
class ConflictZoneSpec:
    """A zone where paths from different approaches may cross.

    conflict_pairs holds unordered approach-id pairs (stored as frozensets)
    whose paths laterally cross inside the zone.  An approach never
    conflicts with itself: same-approach interactions are rear-end, not
    lateral.
    """

    id: str
    approaches: tuple[ApproachSpec, ...]
    conflict_pairs: frozenset[frozenset[str]]
    zone_length: float

    def __post_init__(self):
        if not self.zone_length > 0:
            raise ValueError(f"zone {self.id!r}: zone_length must be > 0")
        ids = [a.id for a in self.approaches]
        if len(set(ids)) != len(ids):
            raise ValueError(f"zone {self.id!r}: duplicate approach ids")
        known = set(ids)
        for pair in self.conflict_pairs:
            if len(pair) != 2:
                raise ValueError(
                    f"zone {self.id!r}: conflict pair {sorted(pair)} must name two"
                    " distinct approaches (self-conflicts are rear-end, not lateral)")
            if not pair <= known:
                raise ValueError(
                    f"zone {self.id!r}: conflict pair {sorted(pair)} references"
                    " unknown approaches")

    def approach(self, approach_id: str) -> ApproachSpec:
        for a in self.approaches:
            if a.id == approach_id:
                return a
        raise KeyError(f"zone {self.id!r} has no approach {approach_id!r}")

    def conflicts(self, approach_a: str, approach_b: str) -> bool:
        return frozenset((approach_a, approach_b)) in self.conflict_pairs


@dataclass(frozen=True)
class RouteLeg:
    """One zone traversal: enter `zone_id` via `approach_id`, then travel
    `link_after` meters of plain road toward the next zone (or corridor
    exit, for the final leg)."""

    zone_id: str
    approach_id: str
    link_after: float = 0.0

    def __post_init__(self):
        if self.link_after < 0:
            raise ValueError("link_after must be >= 0")


@dataclass(frozen=True)
class Route:
    """An ordered sequence of zone traversals through the corridor."""

    id: str
    legs: tuple[RouteLeg, ...]

    def __post_init__(self):
        if not self.legs:
            raise ValueError(f"route {self.id!r} has no legs")

    def leg_for_zone(self, zone_id: str) -> Optional[RouteLeg]:
        for leg in self.legs:
            if leg.zone_id == zone_id:
                return leg
        return None

    def traverses(self, zone_id: str) -> bool:
        return self.leg_for_zone(zone_id) is not None


@dataclass(frozen=True)
class CorridorSpec:
    """Ordered conflict zones plus global parameters.

    Immutable after construction; safe for concurrent reads.
    """

    zones: tuple[ConflictZoneSpec, ...]
    params: GlobalParams

    def __post_init__(self):
        ids = [z.id for z in self.zones]
        if len(set(ids)) != len(ids):
            raise ValueError("zone ids must be unique")
        if not self.zones:
            raise ValueError("corridor needs at least one zone")

    def zone(self, zone_id: str) -> ConflictZoneSpec:
        for z in self.zones:
            if z.id == zone_id:
                return z
        raise KeyError(f"no zone {zone_id!r}")

    def zone_index(self, zone_id: str) -> int:
        for i, z in enumerate(self.zones):
            if z.id == zone_id:
                return i
        raise KeyError(f"no zone {zone_id!r}")

    def validate_route(self, route: Route) -> list[str]:
        """Return all problems of `route` against this corridor (empty if ok).

        Legs must reference existing zones/approaches and visit zones in
        corridor order.
        """
        problems = []
        last_index = -1
        for n, leg in enumerate(route.legs):
            try:
                idx = self.zone_index(leg.zone_id)
            except KeyError:
                problems.append(
                    f"route {route.id!r} leg {n}: unknown zone {leg.zone_id!r}")
                continue
            if idx <= last_index:
                problems.append(
                    f"route {route.id!r} leg {n}: zone {leg.zone_id!r} out of"
                    " corridor order")
            last_index = idx
            zone = self.zones[idx]
            try:
                zone.approach(leg.approach_id)
            except KeyError:
                problems.append(
                    f"route {route.id!r} leg {n}: zone {leg.zone_id!r} has no"
                    f" approach {leg.approach_id!r}")
        return problems


def classify_relation(zone: ConflictZoneSpec, route_i: Route,
                      route_j: Route) -> RelationClass:
    """Classify how two routed vehicles interact at `zone`.

    Same entry approach -> SAME_LANE (rear-end coupling); different
    approaches whose pair is declared conflicting -> LATERAL_CONFLICT;
    anything else -> NO_CONFLICT.  Symmetric in the two routes.
    """
    leg_i = route_i.leg_for_zone(zone.id)
    leg_j = route_j.leg_for_zone(zone.id)
    if leg_i is None:
        raise RouteError(f"route {route_i.id!r} does not traverse zone {zone.id!r}")
    if leg_j is None:
        raise RouteError(f"route {route_j.id!r} does not traverse zone {zone.id!r}")
    if leg_i.approach_id == leg_j.approach_id:
        return RelationClass.SAME_LANE
    if zone.conflicts(leg_i.approach_id, leg_j.approach_id):
        return RelationClass.LATERAL_CONFLICT
    return RelationClass.NO_CONFLICT


def feasible_time_bounds(approach: ApproachSpec, t0: float,
                         params: GlobalParams) -> tuple[float, float]:
    """Earliest and latest attainable conflict-zone entry times.

    A vehicle entering the control zone at `t0` can reach the conflict zone
    no sooner than flat-out travel at v_max and no later than crawling at
    v_min.  Acceleration transients are ignored, so the bounds are pure
    length/speed quotients.  With v_min == 0 the upper bound is open-ended
    and a configured horizon_cap must stand in for it.
    """
    length = approach.control_zone_length
    t_min = t0 + length / params.v_max
    if params.v_min > 0:
        t_max = t0 + length / params.v_min
    elif params.horizon_cap is not None:
        t_max = t0 + params.horizon_cap
    else:
        raise ConfigError(
            "params.v_min is 0 and no horizon_cap is configured; latest entry"
            " time would be unbounded")
    return (t_min, t_max)
