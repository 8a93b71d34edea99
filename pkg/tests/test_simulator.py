"""Simulator: protocol behavior, baseline car following, metrics."""

import numpy as np
import pytest

from cavcorridor.corridor import (ApproachSpec, ConflictZoneSpec,
                                  CorridorSpec, GlobalParams, Route,
                                  RouteLeg)
from cavcorridor.errors import ConfigError
from cavcorridor.simulator import (Arrival, BaselineSimulator,
                                   baseline_step, compute_metrics,
                                   idm_acceleration, run_scenario)

PARAMS = GlobalParams(rho=1.2, delta=5.0, v_min=5.0, v_max=15.0,
                      u_min=-4.0, u_max=3.0)


def merge_corridor():
    zone = ConflictZoneSpec(
        "merge", (ApproachSpec("main", 200.0), ApproachSpec("ramp", 180.0)),
        frozenset({frozenset({"main", "ramp"})}), 25.0)
    corridor = CorridorSpec((zone,), PARAMS)
    routes = {
        "mainline": Route("mainline", (RouteLeg("merge", "main", 60.0),)),
        "ramp_in": Route("ramp_in", (RouteLeg("merge", "ramp", 60.0),)),
    }
    return corridor, routes


class TestOptimalProtocol:
    def test_single_vehicle_cruises(self):
        corridor, routes = merge_corridor()
        res = run_scenario(corridor, [Arrival(0.0, 10.0, "mainline")],
                           routes, mode="optimal")
        visit = res.records[0].visits[0]
        assert abs(visit.t_conflict_entry - 20.0) < 1e-9   # t0 + L/v0
        assert res.metrics.vehicles[0].effort < 1e-12
        # u == 0 throughout
        assert max(abs(u) for u in res.samples[0]["u"]) < 1e-9

    def test_spaced_same_lane_pair_unconstrained(self):
        corridor, routes = merge_corridor()
        gap_t = 2.0  # spawn gap 20 m >= rho*v + delta = 17
        res = run_scenario(corridor, [Arrival(0.0, 10.0, "mainline"),
                                      Arrival(gap_t, 10.0, "mainline")],
                           routes, mode="optimal")
        t1 = res.records[0].visits[0].t_conflict_entry
        t2 = res.records[1].visits[0].t_conflict_entry
        assert abs(t1 - 20.0) < 1e-9
        assert abs(t2 - (t1 + gap_t)) < 1e-9          # headway preserved
        assert t2 - t1 >= PARAMS.rho - 1e-9
        for rec in res.metrics.vehicles:
            assert rec.effort < 1e-12

    def test_lateral_tie_delays_second(self):
        corridor, routes = merge_corridor()
        # both desire conflict entry at t=20: 200/10 and 2 + 180/10
        res = run_scenario(corridor, [Arrival(0.0, 10.0, "mainline"),
                                      Arrival(2.0, 10.0, "ramp_in")],
                           routes, mode="optimal")
        t1 = res.records[0].visits[0].t_conflict_entry
        t2 = res.records[1].visits[0].t_conflict_entry
        assert abs(t1 - 20.0) < 1e-9
        assert abs(t2 - (20.0 + PARAMS.rho)) < 1e-9

    def test_commit_order_respects_dependencies(self):
        corridor, routes = merge_corridor()
        arrivals = [Arrival(0.0, 12.0, "mainline"),
                    Arrival(1.4, 11.0, "ramp_in"),
                    Arrival(2.9, 12.5, "mainline"),
                    Arrival(4.4, 10.5, "ramp_in")]
        res = run_scenario(corridor, arrivals, routes, mode="optimal")
        pos = {pair: i for i, pair in enumerate(res.commit_order)}
        for rec in res.records:
            for visit in rec.visits:
                if visit.predecessor_id is not None:
                    assert pos[(visit.predecessor_id, visit.zone_id)] \
                        < pos[(rec.id, visit.zone_id)]
        # conflicting vehicles with earlier assigned times committed earlier
        for zone_id, entries in res.schedule.items():
            order = [e["vehicle_id"] for e in entries]
            assert order == sorted(
                order, key=lambda v: pos[(v, zone_id)])

    def test_unsorted_arrivals_rejected(self):
        corridor, routes = merge_corridor()
        with pytest.raises(ConfigError):
            run_scenario(corridor, [Arrival(5.0, 10.0, "mainline"),
                                    Arrival(0.0, 10.0, "mainline")],
                         routes, mode="optimal")

    def test_speed_window_enforced(self):
        corridor, routes = merge_corridor()
        with pytest.raises(ConfigError):
            run_scenario(corridor, [Arrival(0.0, 25.0, "mainline")],
                         routes, mode="optimal")

    def test_initial_gap_enforced(self):
        corridor, routes = merge_corridor()
        with pytest.raises(ConfigError):
            run_scenario(corridor, [Arrival(0.0, 10.0, "mainline"),
                                    Arrival(0.2, 10.0, "mainline")],
                         routes, mode="optimal")

    def test_determinism(self):
        corridor, routes = merge_corridor()
        arrivals = [Arrival(0.0, 12.0, "mainline"),
                    Arrival(1.4, 11.0, "ramp_in"),
                    Arrival(2.9, 12.5, "mainline")]
        r1 = run_scenario(corridor, arrivals, routes, mode="optimal")
        r2 = run_scenario(corridor, arrivals, routes, mode="optimal")
        assert r1.samples == r2.samples
        assert r1.schedule == r2.schedule


class TestBaselineModel:
    def test_free_flow_accelerates_toward_limit(self):
        u = idm_acceleration(8.0, PARAMS.v_max, None, 0.0, PARAMS)
        assert u > 0
        corridor, routes = merge_corridor()
        sim = BaselineSimulator(corridor, [Arrival(0.0, 8.0, "mainline")],
                                routes, dt=0.02)
        speeds = []
        for _ in range(1500):
            baseline_step(sim, 0.02)
            if sim.active:
                speeds.append(sim.active[0].v)
        assert all(b >= a - 1e-9 for a, b in zip(speeds, speeds[1:]))
        assert speeds[-1] <= PARAMS.v_max + 1e-6

    def test_equilibrium_gap_zero_accel(self):
        v = 10.0
        eq_gap = PARAMS.delta + v * 1.2  # desired spacing at zero closing
        u = idm_acceleration(v, PARAMS.v_max, eq_gap, 0.0, PARAMS)
        # free-flow term remains; equilibrium is near, not exactly, zero
        assert abs(u) < PARAMS.u_max * (1 - (v / PARAMS.v_max) ** 4) + 1e-9

    def test_stops_before_occupied_zone(self):
        # a chain of crossing vehicles holds a long zone while the mainline
        # arrives at speed: it must brake to a stop short of the boundary
        zone = ConflictZoneSpec(
            "cross", (ApproachSpec("main", 200.0),
                      ApproachSpec("side", 180.0)),
            frozenset({frozenset({"main", "side"})}), 60.0)
        corridor = CorridorSpec((zone,), PARAMS)
        routes = {
            "mainline": Route("mainline", (RouteLeg("cross", "main", 40.0),)),
            "crossing": Route("crossing", (RouteLeg("cross", "side", 40.0),)),
        }
        arrivals = sorted(
            [Arrival(1.3 * k, 12.0, "crossing") for k in range(4)]
            + [Arrival(1.0, 15.0, "mainline")], key=lambda a: a.t0)
        sim = BaselineSimulator(corridor, arrivals, routes, dt=0.01)
        boundary = 200.0
        min_v, worst_s = 1e9, -1e9
        for _ in range(6000):
            baseline_step(sim, 0.01)
            for veh in sim.active:
                if veh.route_id == "mainline" and veh.s < boundary:
                    min_v = min(min_v, veh.v)
                    if veh.vid not in sim.inside["cross"]:
                        worst_s = max(worst_s, veh.s)
        assert min_v < 0.5              # came to a stop
        assert worst_s <= boundary      # and never crossed while blocked


class TestMetrics:
    def test_constant_speed_metrics(self):
        zone = ConflictZoneSpec(
            "z", (ApproachSpec("a", 500.0),), frozenset(), 50.0)
        corridor = CorridorSpec((zone,), PARAMS)
        routes = {"r": Route("r", (RouteLeg("z", "a", 50.0),))}
        res = run_scenario(corridor, [Arrival(0.0, 10.0, "r")], routes,
                           mode="optimal")
        m = res.metrics.vehicles[0]
        assert abs(m.travel_time - 60.0) < 1e-9   # 600 m at 10 m/s
        assert m.effort < 1e-12
        assert m.stop_and_go == 0

    def test_sampled_effort_matches_closed_form(self):
        corridor, routes = merge_corridor()
        res = run_scenario(corridor, [Arrival(0.0, 12.0, "mainline"),
                                      Arrival(1.5, 11.0, "ramp_in")],
                           routes, mode="optimal", sample_dt=0.05)
        for rec in res.records:
            closed = res.metrics.vehicles[rec.id].effort
            if closed < 1e-9:
                continue
            s = res.samples[rec.id]
            ts, us = np.array(s["t"]), np.array(s["u"])
            approx = 0.5 * float(np.trapezoid(us * us, ts))
            assert abs(approx - closed) / closed < 1e-3

    def test_margin_metric_matches_committed(self):
        corridor, routes = merge_corridor()
        res = run_scenario(corridor, [Arrival(0.0, 10.0, "mainline"),
                                      Arrival(2.0, 14.0, "mainline")],
                           routes, mode="optimal")
        m = res.metrics.vehicles[1].min_rear_margin
        assert m is not None
        assert m >= -1e-6

    def test_compute_metrics_idempotent(self):
        corridor, routes = merge_corridor()
        res = run_scenario(corridor, [Arrival(0.0, 10.0, "mainline")],
                           routes, mode="optimal")
        again = compute_metrics(res)
        assert again == res.metrics
