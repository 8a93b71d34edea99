"""Scenario configuration: TOML loading, validation and serialization.

A scenario file declares the corridor (global parameters, zones with their
approaches and conflict pairs), a named route table, explicit arrivals, and
optionally a seeded Poisson arrival generator.  Validation gathers every
problem it can find before giving up, so a bad file reports all of its
mistakes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # python < 3.11
    import tomli as _toml

from .corridor import (ApproachSpec, ConflictZoneSpec, CorridorSpec,
                       GlobalParams, Route, RouteLeg)
from .errors import ConfigError
from .simulator import Arrival

_MODES = ("optimal", "baseline")


@dataclass(frozen=True)
class GeneratorSpec:
    """Seeded Poisson arrival stream.

    Inter-arrival times are exponential with mean 1/rate; each arrival picks
    a route (by the given weights) and an entry speed uniform in
    speed_range.  Per route, arrivals are pushed apart to at least
    max(rho, 2*delta/v) so generated scenarios satisfy the initial-gap
    condition by construction.
    """

    seed: int
    rate: float
    horizon: float
    speed_range: tuple[float, float]
    routes: tuple[str, ...]
    weights: Optional[tuple[float, ...]] = None


@dataclass
class ScenarioConfig:
    corridor: CorridorSpec
    routes: dict[str, Route]
    arrivals: list[Arrival]            # explicit + generated, sorted
    explicit_arrivals: list[Arrival]   # as written in the file
    generator: Optional[GeneratorSpec]
    modes: tuple[str, ...]
    sample_dt: float


def generate_arrivals(gen: GeneratorSpec, params: GlobalParams) -> list[Arrival]:
    rng = np.random.default_rng(gen.seed)
    if gen.weights is not None:
        probs = np.asarray(gen.weights, dtype=float)
        probs = probs / probs.sum()
    else:
        probs = np.full(len(gen.routes), 1.0 / len(gen.routes))
    out: list[Arrival] = []
    last: dict[str, float] = {}
    t = 0.0
    while True:
        t += float(rng.exponential(1.0 / gen.rate))
        if t >= gen.horizon:
            break
        rid = gen.routes[int(rng.choice(len(gen.routes), p=probs))]
        v0 = float(rng.uniform(*gen.speed_range))
        floor = max(params.rho, 2.0 * params.delta / v0)
        t_eff = max(t, last.get(rid, -math.inf) + floor)
        last[rid] = t_eff
        out.append(Arrival(round(t_eff, 3), round(v0, 3), rid))
    # per-route floors can push arrivals past later draws on other routes
    out.sort(key=lambda a: a.t0)
    return out


# ---------------------------------------------------------------------------
# raw-dict validation helpers


def _want(raw, key, types, errors, path, default=None, required=True):
    if key not in raw:
        if required:
            errors.append(f"{path}.{key}: missing")
        return default
    val = raw[key]
    if types is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            errors.append(f"{path}.{key}: expected a number")
            return default
        return float(val)
    if not isinstance(val, types):
        errors.append(f"{path}.{key}: expected {getattr(types, '__name__', types)}")
        return default
    return val


def _parse_params(raw: dict, errors: list[str]) -> Optional[GlobalParams]:
    if "params" not in raw:
        errors.append("params: missing table")
        return None
    p = raw["params"]
    rho = _want(p, "rho", float, errors, "params")
    delta = _want(p, "delta", float, errors, "params")
    v_min = _want(p, "v_min", float, errors, "params")
    v_max = _want(p, "v_max", float, errors, "params")
    u_min = _want(p, "u_min", float, errors, "params")
    u_max = _want(p, "u_max", float, errors, "params")
    cap = _want(p, "horizon_cap", float, errors, "params", required=False)
    if None in (rho, delta, v_min, v_max, u_min, u_max):
        return None
    if rho <= 0:
        errors.append("params.rho: must be > 0")
    if delta <= 0:
        errors.append("params.delta: must be > 0")
    if not 0 <= v_min < v_max:
        errors.append("params.v_min/v_max: need 0 <= v_min < v_max")
    if not u_min < 0 < u_max:
        errors.append("params.u_min/u_max: need u_min < 0 < u_max")
    if v_min == 0 and cap is None:
        errors.append("params.horizon_cap: required when v_min = 0")
    if errors:
        return None
    return GlobalParams(rho=rho, delta=delta, v_min=v_min, v_max=v_max,
                        u_min=u_min, u_max=u_max, horizon_cap=cap)


def _parse_zones(raw: dict, params: Optional[GlobalParams],
                 errors: list[str]) -> list[ConflictZoneSpec]:
    zones = []
    raw_zones = raw.get("zone")
    if not isinstance(raw_zones, list) or not raw_zones:
        errors.append("zone: at least one [[zone]] table required")
        return zones
    seen = set()
    for i, z in enumerate(raw_zones):
        path = f"zone[{i}]"
        zid = _want(z, "id", str, errors, path)
        zlen = _want(z, "zone_length", float, errors, path)
        approaches = []
        raw_app = z.get("approach")
        if not isinstance(raw_app, list) or not raw_app:
            errors.append(f"{path}.approach: at least one approach required")
            raw_app = []
        ids = set()
        for j, a in enumerate(raw_app):
            apath = f"{path}.approach[{j}]"
            aid = _want(a, "id", str, errors, apath)
            alen = _want(a, "control_zone_length", float, errors, apath)
            if aid is None or alen is None:
                continue
            if alen <= 0:
                errors.append(f"{apath}.control_zone_length: must be > 0")
                continue
            if aid in ids:
                errors.append(f"{apath}.id: duplicate approach id {aid!r}")
                continue
            ids.add(aid)
            approaches.append(ApproachSpec(aid, alen))
        pairs = set()
        for k, pair in enumerate(z.get("conflict_pairs", [])):
            ppath = f"{path}.conflict_pairs[{k}]"
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(x, str) for x in pair)):
                errors.append(f"{ppath}: expected a pair of approach ids")
                continue
            if pair[0] == pair[1]:
                errors.append(f"{ppath}: an approach cannot conflict with itself")
                continue
            if not set(pair) <= ids:
                errors.append(f"{ppath}: unknown approach in {pair}")
                continue
            pairs.add(frozenset(pair))
        if zid is None or zlen is None:
            continue
        if zlen <= 0:
            errors.append(f"{path}.zone_length: must be > 0")
            continue
        if zid in seen:
            errors.append(f"{path}.id: duplicate zone id {zid!r}")
            continue
        seen.add(zid)
        if params is not None and params.delta > zlen:
            errors.append(
                f"{path}.zone_length: must be >= params.delta so a vehicle"
                " clearing the zone also clears the minimum gap")
            continue
        if approaches:
            zones.append(ConflictZoneSpec(zid, tuple(approaches),
                                          frozenset(pairs), zlen))
    return zones


def _parse_routes(raw: dict, corridor: Optional[CorridorSpec],
                  errors: list[str]) -> dict[str, Route]:
    routes: dict[str, Route] = {}
    raw_routes = raw.get("routes")
    if not isinstance(raw_routes, dict) or not raw_routes:
        errors.append("routes: at least one route required")
        return routes
    used_approaches: dict[tuple[str, str], str] = {}
    for rid, r in raw_routes.items():
        path = f"routes.{rid}"
        legs = []
        raw_legs = r.get("legs") if isinstance(r, dict) else None
        if not isinstance(raw_legs, list) or not raw_legs:
            errors.append(f"{path}.legs: at least one leg required")
            continue
        ok = True
        for j, leg in enumerate(raw_legs):
            lpath = f"{path}.legs[{j}]"
            if not isinstance(leg, dict):
                errors.append(f"{lpath}: expected a table")
                ok = False
                continue
            zid = _want(leg, "zone", str, errors, lpath)
            aid = _want(leg, "approach", str, errors, lpath)
            link = _want(leg, "link_after", float, errors, lpath,
                         default=0.0, required=False)
            if zid is None or aid is None:
                ok = False
                continue
            if link < 0:
                errors.append(f"{lpath}.link_after: must be >= 0")
                ok = False
                continue
            legs.append(RouteLeg(zid, aid, link))
        if not ok or not legs:
            continue
        route = Route(rid, tuple(legs))
        if corridor is not None:
            problems = corridor.validate_route(route)
            if problems:
                errors.extend(problems)
                continue
            for leg in legs:
                key = (leg.zone_id, leg.approach_id)
                owner = used_approaches.get(key)
                if owner is not None:
                    errors.append(
                        f"{path}: approach {leg.approach_id!r} of zone"
                        f" {leg.zone_id!r} already used by route {owner!r};"
                        " routes may not share approaches (upstream merging"
                        " is out of scope)")
                else:
                    used_approaches[key] = rid
        routes[rid] = route
    return routes


def _parse_arrivals(raw: dict, routes: dict[str, Route],
                    errors: list[str]) -> list[Arrival]:
    arrivals = []
    for i, a in enumerate(raw.get("arrival", [])):
        path = f"arrival[{i}]"
        t = _want(a, "t", float, errors, path)
        v = _want(a, "v", float, errors, path)
        rid = _want(a, "route", str, errors, path)
        if None in (t, v, rid):
            continue
        if routes and rid not in routes:
            errors.append(f"{path}.route: unknown route {rid!r}")
            continue
        arrivals.append(Arrival(t, v, rid))
    return arrivals


def _parse_generator(raw: dict, routes: dict[str, Route],
                     errors: list[str]) -> Optional[GeneratorSpec]:
    if "generator" not in raw:
        return None
    g = raw["generator"]
    path = "generator"
    seed = _want(g, "seed", int, errors, path)
    rate = _want(g, "rate", float, errors, path)
    horizon = _want(g, "horizon", float, errors, path)
    speed_range = g.get("speed_range")
    gr = g.get("routes")
    weights = g.get("weights")
    if (not isinstance(speed_range, list) or len(speed_range) != 2
            or not all(isinstance(x, (int, float)) for x in speed_range)):
        errors.append(f"{path}.speed_range: expected [lo, hi]")
        speed_range = None
    if not isinstance(gr, list) or not gr:
        errors.append(f"{path}.routes: expected a non-empty list")
        gr = None
    elif routes:
        for rid in gr:
            if rid not in routes:
                errors.append(f"{path}.routes: unknown route {rid!r}")
                gr = None
                break
    if weights is not None:
        if (not isinstance(weights, list) or gr is None
                or len(weights) != len(gr)
                or not all(isinstance(x, (int, float)) and x >= 0
                           for x in weights)):
            errors.append(f"{path}.weights: expected non-negative numbers,"
                          " one per generator route")
            weights = None
    if None in (seed, rate, horizon) or speed_range is None or gr is None:
        return None
    if rate <= 0:
        errors.append(f"{path}.rate: must be > 0")
        return None
    if not 0 < speed_range[0] <= speed_range[1]:
        errors.append(f"{path}.speed_range: need 0 < lo <= hi")
        return None
    return GeneratorSpec(seed=seed, rate=rate, horizon=horizon,
                         speed_range=(float(speed_range[0]),
                                      float(speed_range[1])),
                         routes=tuple(gr),
                         weights=None if weights is None else
                         tuple(float(w) for w in weights))


def load_config(path) -> ScenarioConfig:
    """Parse and fully validate a scenario file.

    Raises ConfigError carrying every validation message found; parse errors
    include the TOML reader's line information.
    """
    try:
        with open(path, "rb") as fh:
            raw = _toml.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"{path}: no such file"])
    except _toml.TOMLDecodeError as err:
        raise ConfigError([f"{path}: parse error: {err}"])

    errors: list[str] = []
    params = _parse_params(raw, errors)
    zones = _parse_zones(raw, params, errors)
    corridor = None
    if params is not None and zones:
        corridor = CorridorSpec(tuple(zones), params)
    routes = _parse_routes(raw, corridor, errors)
    explicit = _parse_arrivals(raw, routes, errors)
    generator = _parse_generator(raw, routes, errors)

    modes = raw.get("modes", list(_MODES))
    if (not isinstance(modes, list) or not modes
            or not all(m in _MODES for m in modes)):
        errors.append(f"modes: expected a non-empty subset of {list(_MODES)}")
        modes = list(_MODES)
    out = raw.get("output", {})
    sample_dt = _want(out, "sample_dt", float, errors, "output",
                      default=0.1, required=False)
    if sample_dt is not None and sample_dt <= 0:
        errors.append("output.sample_dt: must be > 0")

    if not explicit and generator is None:
        errors.append("arrival/generator: scenario has no vehicles")

    if errors or corridor is None:
        raise ConfigError(errors or ["corridor could not be built"])

    arrivals = list(explicit)
    if generator is not None:
        arrivals.extend(generate_arrivals(generator, params))
    arrivals.sort(key=lambda a: a.t0)
    return ScenarioConfig(corridor=corridor, routes=routes,
                          arrivals=arrivals, explicit_arrivals=explicit,
                          generator=generator, modes=tuple(modes),
                          sample_dt=sample_dt)


# ---------------------------------------------------------------------------
# serialization (round-trip support)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def dumps_config(cfg: ScenarioConfig) -> str:
    """Serialize a loaded configuration back to TOML.

    Loading the result reproduces the same scenario (generator included), so
    serialize-then-load is semantically idempotent.
    """
    p = cfg.corridor.params
    lines = ["# corridor scenario (SI units: m, s, m/s, m/s^2)",
             f"modes = {_toml_value(list(cfg.modes))}", "", "[params]"]
    for k in ("rho", "delta", "v_min", "v_max", "u_min", "u_max"):
        lines.append(f"{k} = {_toml_value(getattr(p, k))}")
    if p.horizon_cap is not None:
        lines.append(f"horizon_cap = {_toml_value(p.horizon_cap)}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"sample_dt = {_toml_value(cfg.sample_dt)}")
    for z in cfg.corridor.zones:
        lines.append("")
        lines.append("[[zone]]")
        lines.append(f"id = {_toml_value(z.id)}")
        lines.append(f"zone_length = {_toml_value(z.zone_length)}")
        pairs = sorted(sorted(pair) for pair in z.conflict_pairs)
        lines.append(f"conflict_pairs = {_toml_value(pairs)}")
        for a in z.approaches:
            lines.append("[[zone.approach]]")
            lines.append(f"id = {_toml_value(a.id)}")
            lines.append(
                f"control_zone_length = {_toml_value(a.control_zone_length)}")
    for rid in sorted(cfg.routes):
        route = cfg.routes[rid]
        legs = ", ".join(
            "{zone = %s, approach = %s, link_after = %s}" % (
                _toml_value(leg.zone_id), _toml_value(leg.approach_id),
                _toml_value(leg.link_after))
            for leg in route.legs)
        lines.append("")
        lines.append(f"[routes.{rid}]")
        lines.append(f"legs = [{legs}]")
    for arr in cfg.explicit_arrivals:
        lines.append("")
        lines.append("[[arrival]]")
        lines.append(f"t = {_toml_value(arr.t0)}")
        lines.append(f"v = {_toml_value(arr.v0)}")
        lines.append(f"route = {_toml_value(arr.route_id)}")
    g = cfg.generator
    if g is not None:
        lines.append("")
        lines.append("[generator]")
        lines.append(f"seed = {_toml_value(g.seed)}")
        lines.append(f"rate = {_toml_value(g.rate)}")
        lines.append(f"horizon = {_toml_value(g.horizon)}")
        lines.append(f"speed_range = {_toml_value(list(g.speed_range))}")
        lines.append(f"routes = {_toml_value(list(g.routes))}")
        if g.weights is not None:
            lines.append(f"weights = {_toml_value(list(g.weights))}")
    return "\n".join(lines) + "\n"
