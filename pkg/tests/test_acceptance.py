"""Acceptance gate - one test per release criterion, tolerances pinned.

 1. Unconstrained boundary exactness: 1000 random instances, all four
    boundary residuals < 1e-9, under 1 s total.
 2. Optimality against the 100-point transcription: closed-form effort
    <= oracle + 1e-6 and node positions within 1e-2 m, 100 instances,
    under 30 s.
 3. Constrained solve: 50 random leader/follower instances that activate
    the gap constraint; margin >= -1e-6 everywhere, junction continuity of
    p/v/u within 1e-7, riding arcs copy the leader exactly, effort within
    1e-2 of the inequality-constrained transcription, under 2 min.
 4. Scheduler equals exhaustive grid search on >= 500 corridor instances
    (<= 5 vehicles, two conflicting approaches, 0.1 s grid), exactly.
 5. Ledger safety over 10,000 randomized multi-zone scheduling scenarios:
    zero headway violations, lateral or same-lane.
 6. End-to-end safety: 100 seeded four-zone Poisson scenarios at moderate
    demand (mean headway >= 3*rho): no aborts, every recomputed rear-end
    margin >= -1e-6, every lateral pair >= rho - 1e-9.
 7. Coordinated-vs-baseline direction on 20 seeded congested scenarios:
    mean effort at least 20 % lower, mean travel time no higher, zero
    stop-and-go against a positive baseline count, under 5 min.
 8. Two `compare` runs on the same scenario file are byte-identical.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.
"""

import filecmp
import math
import os
import time

import numpy as np
import pytest

from cavcorridor.cli import cli_main
from cavcorridor.config import GeneratorSpec, generate_arrivals
from cavcorridor.corridor import (ApproachSpec, ConflictZoneSpec,
                                  CorridorSpec, GlobalParams, Route,
                                  RouteLeg, feasible_time_bounds)
from cavcorridor.errors import ScheduleInfeasibleError
from cavcorridor.scheduler import (ScheduleLedger, entry_time_same_lane,
                                   first_vehicle_time, schedule_entry)
from cavcorridor.simulator import run_scenario
from cavcorridor.trajectory import (BvpProblem, CubicArc, LeaderOffsetArc,
                                    PiecewiseTrajectory,
                                    detect_rear_end_violation, effort,
                                    leader_state, solve_constrained,
                                    solve_unconstrained)

from oracles import greedy_grid_entry, transcription_kkt


def report(num, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def random_free_problem(rng):
    t0 = float(rng.uniform(0, 10))
    return BvpProblem(t0=t0, tf=t0 + float(rng.uniform(5, 60)),
                      v0=float(rng.uniform(3, 20)),
                      pf=float(rng.uniform(50, 600)))


def test_criterion_1_boundary_exactness():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        prob = random_free_problem(rng)
        arc = solve_unconstrained(prob)
        worst = max(worst,
                    abs(arc.position(prob.t0) - prob.p0),
                    abs(arc.speed(prob.t0) - prob.v0),
                    abs(arc.position(prob.tf) - prob.pf),
                    abs(arc.control(prob.tf)))
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-9 and elapsed < 1.0,
           f"worst residual {worst:.2e}, {elapsed:.3f} s for 1000 solves")


def test_criterion_2_optimality_vs_oracle():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst_excess = -math.inf
    worst_dev = 0.0
    for _ in range(100):
        prob = random_free_problem(rng)
        arc = solve_unconstrained(prob)
        times, _, p_nodes, _, eff = transcription_kkt(
            prob.t0, prob.tf, prob.v0, prob.p0, prob.pf)
        worst_excess = max(worst_excess, effort(arc) - eff)
        worst_dev = max(worst_dev, max(abs(arc.position(t) - p)
                                       for t, p in zip(times, p_nodes)))
    elapsed = time.perf_counter() - start
    report(2, worst_excess <= 1e-6 and worst_dev < 1e-2 and elapsed < 30.0,
           f"effort excess {worst_excess:.2e}, position dev {worst_dev:.2e},"
           f" {elapsed:.1f} s")


def _constrained_instance(rng, kind):
    """Leader/follower pair whose free solution violates the gap."""
    delta = 5.0
    for _ in range(50):
        if kind == "riding":
            # long-deceleration leaders with tight terminal slack: the band
            # where a finite boundary-riding interval is optimal
            t_k = float(rng.uniform(24.0, 27.0))
            vk_hi = 3.0 * (200.0 / t_k) - 9.4
            v_k = float(rng.uniform(11.5, max(vk_hi, 11.6)))
            lead = PiecewiseTrajectory(
                (solve_unconstrained(BvpProblem(t0=0.0, tf=t_k, v0=v_k,
                                                pf=200.0)),), 1, "z")
            prob = BvpProblem(t0=1.2, tf=t_k + 1.2,
                              v0=min(v_k + float(rng.uniform(2.0, 4.0)),
                                     19.0),
                              pf=200.0, leader=lead, delta=delta)
        else:
            v_k = float(rng.uniform(7, 10))
            head = float(rng.uniform(25, 40))
            T = float(rng.uniform(16, 24))
            lead = PiecewiseTrajectory(
                (CubicArc(0.0, 0.0, v_k, head, 0.0, T + 5.0),), 1, "z")
            slack = float(rng.uniform(3, 10))
            pf = head + v_k * T - delta - slack
            prob = BvpProblem(t0=0.0, tf=T,
                              v0=float(rng.uniform(v_k + 3, v_k + 7)),
                              pf=pf, leader=lead, delta=delta)
        free = solve_unconstrained(BvpProblem(t0=prob.t0, tf=prob.tf,
                                              v0=prob.v0, pf=prob.pf))
        viol = detect_rear_end_violation(free, prob.leader, delta,
                                         (prob.t0, prob.tf))
        gap0 = leader_state(prob.leader, prob.t0)[0] - prob.p0 - delta
        gap_end = leader_state(prob.leader, prob.tf)[0] - delta - prob.pf
        # gap_end > 0 keeps the terminal point itself feasible
        if viol is not None and viol.depth < -0.05 and gap0 > 0.5 \
                and gap_end > 0.5:
            return prob
    raise RuntimeError("could not draw a violating instance")


def test_criterion_3_constrained_correctness():
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    n_riding = 0
    worst_margin = math.inf
    worst_junction = 0.0
    worst_identity = 0.0
    worst_eff = 0.0
    for i in range(50):
        kind = "riding" if i % 3 < 2 else "touch"
        prob = _constrained_instance(rng, kind)
        traj = solve_constrained(prob)

        for left, right in zip(traj.arcs, traj.arcs[1:]):
            t = left.t_end
            for l_val, r_val in zip(left.state(t), right.state(t)):
                worst_junction = max(worst_junction, abs(l_val - r_val))

        ts = np.linspace(prob.t0, prob.tf, 4001)
        margin = min(leader_state(prob.leader, t)[0] - prob.delta
                     - traj.evaluate(t)[0] for t in ts)
        worst_margin = min(worst_margin, margin)

        for arc in traj.arcs:
            if isinstance(arc, LeaderOffsetArc):
                n_riding += 1
                for t in np.linspace(arc.t_start, arc.t_end, 21):
                    p, v, u = arc.state(t)
                    pk, vk, uk = leader_state(prob.leader, t)
                    worst_identity = max(worst_identity,
                                         abs(p - (pk - prob.delta)),
                                         abs(v - vk), abs(u - uk))

        _, _, _, _, eff_oracle = transcription_kkt(
            prob.t0, prob.tf, prob.v0, prob.p0, prob.pf,
            leader_pos=lambda t: leader_state(prob.leader, t)[0],
            delta=prob.delta)
        worst_eff = max(worst_eff, abs(effort(traj) - eff_oracle))
    elapsed = time.perf_counter() - start
    ok = (worst_margin >= -1e-6 and worst_junction < 1e-7
          and worst_identity < 1e-9 and worst_eff < 1e-2
          and n_riding >= 10 and elapsed < 120.0)
    report(3, ok,
           f"margin {worst_margin:.2e}, junction {worst_junction:.2e},"
           f" identity {worst_identity:.2e}, effort gap {worst_eff:.2e},"
           f" {n_riding} riding arcs, {elapsed:.1f} s")


def test_criterion_4_scheduler_oracle_equality():
    rng = np.random.default_rng(404)
    params = GlobalParams(rho=1.2, delta=5.0, v_min=5.0, v_max=20.0,
                          u_min=-4.0, u_max=3.0)
    zone = ConflictZoneSpec(
        "z", (ApproachSpec("a", 200.0), ApproachSpec("b", 200.0)),
        frozenset({frozenset({"a", "b"})}), 25.0)
    corridor = CorridorSpec((zone,), params)
    speeds = [20.0, 10.0, 8.0, 5.0]  # keep 200/v on the 0.1 s grid
    checked = 0
    for _ in range(500):
        n = int(rng.integers(1, 6))
        t = 0.0
        arrivals = []
        for _ in range(n):
            t += float(rng.integers(0, 40)) * 0.1
            arrivals.append((round(t, 10), speeds[rng.integers(4)],
                             "a" if rng.integers(2) else "b"))
        ledger = ScheduleLedger(corridor)
        rows = []
        for vid, (t0, v0, app) in enumerate(arrivals):
            approach = zone.approach(app)
            t_min, t_max = feasible_time_bounds(approach, t0, params)
            desired = first_vehicle_time(t0, v0, approach, params)
            pred = ledger.zone("z").last_on_approach(app)
            if pred is None:
                candidate = lower = desired
            else:
                candidate = max(desired, entry_time_same_lane(
                    pred.entry_time, params.rho, t_min, t_max))
                lower = max(desired, pred.entry_time + params.rho)
            try:
                got = schedule_entry(zone, ledger, vid, app, candidate,
                                     t_min, t_max, params.rho)
            except ScheduleInfeasibleError:
                got = None
            conflicting = [r[2] for r in rows
                           if r[0] != app and r[2] is not None]
            want = greedy_grid_entry(lower, conflicting, params.rho, t_max)
            assert (got is None) == (want is None), (lower, conflicting)
            if got is not None:
                assert abs(got - want) < 1e-9, (lower, conflicting, got, want)
                checked += 1
            rows.append((app, lower, got))
    report(4, checked > 500,
           f"{checked} assignments matched the grid oracle exactly")


def test_criterion_5_scheduler_safety_invariants():
    rng = np.random.default_rng(505)
    violations = 0
    assignments = 0
    for _ in range(10000):
        params = GlobalParams(rho=float(rng.uniform(0.5, 2.5)), delta=5.0,
                              v_min=float(rng.uniform(2, 6)),
                              v_max=float(rng.uniform(10, 25)),
                              u_min=-4.0, u_max=3.0)
        zones = []
        for zi in range(int(rng.integers(1, 4))):
            n_app = int(rng.integers(2, 5))
            apps = tuple(ApproachSpec(f"z{zi}a{k}",
                                      float(rng.uniform(80, 300)))
                         for k in range(n_app))
            pairs = set()
            for i in range(n_app):
                for j in range(i + 1, n_app):
                    if rng.uniform() < 0.5:
                        pairs.add(frozenset({apps[i].id, apps[j].id}))
            zones.append(ConflictZoneSpec(f"z{zi}", apps, frozenset(pairs),
                                          20.0))
        corridor = CorridorSpec(tuple(zones), params)
        ledger = ScheduleLedger(corridor)
        vid = 0
        for zone in zones:
            t = 0.0
            for _ in range(int(rng.integers(1, 9))):
                t += float(rng.uniform(0.2, 4.0))
                app = zone.approaches[rng.integers(len(zone.approaches))]
                t_min, t_max = feasible_time_bounds(app, t, params)
                v0 = float(rng.uniform(params.v_min, params.v_max))
                desired = first_vehicle_time(t, v0, app, params)
                pred = ledger.zone(zone.id).last_on_approach(app.id)
                candidate = desired if pred is None else max(
                    desired, entry_time_same_lane(pred.entry_time,
                                                  params.rho, t_min, t_max))
                try:
                    schedule_entry(zone, ledger, vid, app.id, candidate,
                                   t_min, t_max, params.rho)
                    assignments += 1
                except ScheduleInfeasibleError:
                    pass
                vid += 1
        for zone in zones:
            entries = ledger.zone(zone.id).entries
            by_app = {}
            for e in entries:
                by_app.setdefault(e.approach_id, []).append(e.entry_time)
            for times in by_app.values():
                violations += sum(1 for a, b in zip(times, times[1:])
                                  if b - a < params.rho - 1e-9)
            for i, ei in enumerate(entries):
                for ej in entries[i + 1:]:
                    if zone.conflicts(ei.approach_id, ej.approach_id):
                        if abs(ei.entry_time - ej.entry_time) \
                                < params.rho - 1e-9:
                            violations += 1
    report(5, violations == 0,
           f"{violations} violations across 10000 scenarios"
           f" ({assignments} assignments)")


def four_zone_corridor(params=None):
    params = params or GlobalParams(rho=1.2, delta=5.0, v_min=5.0,
                                    v_max=15.0, u_min=-4.0, u_max=3.0)
    names = ["merge", "reduce", "round", "inter"]
    zones = tuple(ConflictZoneSpec(
        nm, (ApproachSpec(f"main_{nm}", 200.0),
             ApproachSpec(f"side_{nm}", 170.0)),
        frozenset({frozenset({f"main_{nm}", f"side_{nm}"})}), 22.0)
        for nm in names)
    corridor = CorridorSpec(zones, params)
    routes = {"mainline": Route("mainline", tuple(
        RouteLeg(nm, f"main_{nm}", 50.0) for nm in names))}
    for nm in names:
        routes[f"side_{nm}"] = Route(
            f"side_{nm}", (RouteLeg(nm, f"side_{nm}", 25.0),))
    return corridor, routes


def test_criterion_6_end_to_end_safety():
    corridor, routes = four_zone_corridor()
    params = corridor.params
    rho = params.rho
    worst_margin = math.inf
    worst_lateral = math.inf
    aborted = 0
    for seed in range(100):
        gen = GeneratorSpec(seed=seed, rate=1.0 / (3.0 * rho), horizon=60.0,
                            speed_range=(9.0, 13.0),
                            routes=("mainline", "side_merge", "side_round",
                                    "side_inter"),
                            weights=(0.4, 0.25, 0.2, 0.15))
        arrivals = generate_arrivals(gen, params)
        try:
            res = run_scenario(corridor, arrivals, routes, mode="optimal")
        except Exception:
            aborted += 1
            continue
        m = res.metrics.min_rear_margin
        if m is not None:
            worst_margin = min(worst_margin, m)
        for zone_id, entries in res.schedule.items():
            zone = corridor.zone(zone_id)
            for i, ei in enumerate(entries):
                for ej in entries[i + 1:]:
                    if zone.conflicts(ei["approach"], ej["approach"]):
                        worst_lateral = min(
                            worst_lateral,
                            abs(ei["entry_time"] - ej["entry_time"]))
    ok = (aborted == 0 and worst_margin >= -1e-6
          and worst_lateral >= rho - 1e-9)
    report(6, ok,
           f"{aborted} aborts, worst rear margin {worst_margin:.2e},"
           f" worst lateral headway {worst_lateral:.4f} (rho={rho})")


def test_criterion_7_directional_improvement():
    corridor, routes = four_zone_corridor()
    start = time.perf_counter()
    bad = []
    ratios = []
    for seed in range(1, 21):
        gen = GeneratorSpec(seed=seed, rate=0.8, horizon=90.0,
                            speed_range=(12.0, 14.5),
                            routes=("mainline", "side_merge", "side_round",
                                    "side_inter"),
                            weights=(0.4, 0.25, 0.2, 0.15))
        arrivals = generate_arrivals(gen, corridor.params)
        res_o = run_scenario(corridor, arrivals, routes, mode="optimal")
        res_b = run_scenario(corridor, arrivals, routes, mode="baseline")
        mo, mb = res_o.metrics, res_b.metrics
        ratios.append(mo.mean_effort / mb.mean_effort)
        seed_ok = (mo.mean_effort <= 0.8 * mb.mean_effort
                   and mo.mean_travel_time <= mb.mean_travel_time
                   and mo.total_stop_and_go == 0
                   and mb.total_stop_and_go > 0)
        if not seed_ok:
            bad.append(seed)
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 300.0
    report(7, ok,
           f"effort ratio {min(ratios):.4f}..{max(ratios):.4f},"
           f" failing seeds {bad or 'none'}, {elapsed:.1f} s for 20 seeds")


def test_criterion_8_compare_determinism(tmp_path):
    config = os.path.join(os.path.dirname(__file__), "..", "configs",
                          "corridor4.toml")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli_main(["compare", config, "--out", str(out_a)]) == 0
    assert cli_main(["compare", config, "--out", str(out_b)]) == 0
    files = ["comparison.json"]
    for mode in ("optimal", "baseline"):
        for name in ("trajectories.csv", "metrics.json", "schedule.json"):
            files.append(os.path.join(mode, name))
    different = [f for f in files
                 if not filecmp.cmp(out_a / f, out_b / f, shallow=False)]
    report(8, not different,
           f"{len(files)} output files byte-identical"
           if not different else f"differing files: {different}")
