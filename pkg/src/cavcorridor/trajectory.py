"""Closed-form minimum-effort trajectories through a control zone.

A vehicle entering a control zone at (t0, p0=0, v0) must reach the
conflict-zone entry pf at its assigned time tf while minimizing the control
effort (1/2) * integral(u^2 dt) for double-integrator dynamics
p' = v, v' = u.  With the terminal speed left free, the optimal control is
affine in time and vanishes at tf, so position is the cubic

    p(t) = a*t^3/6 + b*t^2/2 + c*t + d,
    v(t) = a*t^2/2 + b*t   + c,
    u(t) = a*t     + b.

When the free solution would close to within `delta` of the same-lane
leader, the trajectory is re-pieced as unconstrained cubic / constrained
arc / unconstrained cubic.  On the constrained arc the follower shadows the
leader exactly at offset delta (same speed, same control); at both junction
times position, speed and control are continuous, and the entry/exit states
are tangent to the moving constraint boundary.  The two junction times are
the only nonlinear unknowns and are found by a damped Newton iteration,
with each iterate solving small linear systems for the cubic coefficients.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .corridor import GlobalParams
from .errors import TrajectorySolverError

# |a| below this is treated as zero in the effort antiderivative (the
# (a*t+b)^3/(6a) form degenerates to b^2*t/2).
_A_EPS = 1e-12
# Margin dips shallower than this are float noise, not violations.
_DETECT_EPS = 1e-10


# ---------------------------------------------------------------------------
# arcs


@dataclass(frozen=True)
class CubicArc:
    """One unconstrained piece, coefficients in absolute time."""

    a: float
    b: float
    c: float
    d: float
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"empty arc: [{self.t_start}, {self.t_end}]")

    def control(self, t: float) -> float:
        return self.a * t + self.b

    def speed(self, t: float) -> float:
        return (0.5 * self.a * t + self.b) * t + self.c

    def position(self, t: float) -> float:
        return ((self.a * t / 6.0 + 0.5 * self.b) * t + self.c) * t + self.d

    def state(self, t: float) -> tuple[float, float, float]:
        return (self.position(t), self.speed(t), self.control(t))


@dataclass(frozen=True)
class LeaderOffsetArc:
    """Constrained piece: shadow the leader at fixed gap delta.

    Position, speed and control all copy the leader's committed trajectory
    (position shifted back by delta).  Beyond the leader's own time span its
    motion is extended at constant speed.
    """

    leader: "PiecewiseTrajectory"
    delta: float
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"empty arc: [{self.t_start}, {self.t_end}]")

    def state(self, t: float) -> tuple[float, float, float]:
        p, v, u = leader_state(self.leader, t)
        return (p - self.delta, v, u)

    def control(self, t: float) -> float:
        return self.state(t)[2]

    def speed(self, t: float) -> float:
        return self.state(t)[1]

    def position(self, t: float) -> float:
        return self.state(t)[0]


Arc = Union[CubicArc, LeaderOffsetArc]


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Time-contiguous arcs for one vehicle through one control zone."""

    arcs: tuple[Arc, ...]
    vehicle_id: int = -1
    zone_id: str = ""

    def __post_init__(self):
        if not self.arcs:
            raise ValueError("trajectory needs at least one arc")
        for prev, nxt in zip(self.arcs, self.arcs[1:]):
            if abs(prev.t_end - nxt.t_start) > 1e-9:
                raise ValueError("arcs must be contiguous in time")

    @property
    def t_start(self) -> float:
        return self.arcs[0].t_start

    @property
    def t_end(self) -> float:
        return self.arcs[-1].t_end

    def arc_at(self, t: float) -> Arc:
        starts = [arc.t_start for arc in self.arcs]
        idx = bisect.bisect_right(starts, t) - 1
        return self.arcs[max(idx, 0)]

    def evaluate(self, t: float) -> tuple[float, float, float]:
        if t < self.t_start - 1e-9 or t > self.t_end + 1e-9:
            raise ValueError(
                f"t={t} outside trajectory span [{self.t_start}, {self.t_end}]")
        return self.arc_at(min(max(t, self.t_start), self.t_end)).state(t)

    def initial_state(self) -> tuple[float, float, float]:
        return self.arcs[0].state(self.t_start)

    def terminal_state(self) -> tuple[float, float, float]:
        return self.arcs[-1].state(self.t_end)


def evaluate(traj: PiecewiseTrajectory, t: float) -> tuple[float, float, float]:
    """(position, speed, control) of `traj` at time t inside its span."""
    return traj.evaluate(t)


def leader_state(traj: PiecewiseTrajectory, t: float) -> tuple[float, float, float]:
    """Leader state with constant-speed extension outside the committed span."""
    if t < traj.t_start:
        p0, v0, _ = traj.initial_state()
        return (p0 + v0 * (t - traj.t_start), v0, 0.0)
    if t > traj.t_end:
        pf, vf, _ = traj.terminal_state()
        return (pf + vf * (t - traj.t_end), vf, 0.0)
    return traj.evaluate(t)


# ---------------------------------------------------------------------------
# flattening: everything below works on plain absolute-time cubic pieces


class _Piece(NamedTuple):
    t0: float
    t1: float
    a: float
    b: float
    c: float
    d: float

    def position(self, t):
        return ((self.a * t / 6.0 + 0.5 * self.b) * t + self.c) * t + self.d

    def speed(self, t):
        return (0.5 * self.a * t + self.b) * t + self.c

    def control(self, t):
        return self.a * t + self.b


def _linear_piece(t0: float, t1: float, p_ref: float, v: float,
                  t_ref: float) -> _Piece:
    # constant-speed motion through (t_ref, p_ref)
    return _Piece(t0, t1, 0.0, 0.0, v, p_ref - v * t_ref)


def _flatten(traj, lo: float, hi: float, extrapolate: bool = False,
             offset: float = 0.0) -> list[_Piece]:
    """Cubic pieces of `traj` covering [lo, hi] (positions shifted by -offset)."""
    if isinstance(traj, CubicArc):
        traj = PiecewiseTrajectory((traj,))
    pieces: list[_Piece] = []
    if hi <= lo + 1e-12:
        return pieces
    if lo < traj.t_start:
        if not extrapolate:
            raise ValueError("window extends before trajectory span")
        p0, v0, _ = traj.initial_state()
        end = min(hi, traj.t_start)
        pieces.append(_linear_piece(lo, end, p0 - offset, v0, traj.t_start))
    for arc in traj.arcs:
        s = max(arc.t_start, lo)
        e = min(arc.t_end, hi)
        if e - s <= 1e-12:
            continue
        if isinstance(arc, CubicArc):
            pieces.append(_Piece(s, e, arc.a, arc.b, arc.c, arc.d - offset))
        else:
            pieces.extend(_flatten(arc.leader, s, e, extrapolate=True,
                                   offset=offset + arc.delta))
    if hi > traj.t_end:
        if not extrapolate:
            raise ValueError("window extends past trajectory span")
        pf, vf, _ = traj.terminal_state()
        start = max(lo, traj.t_end)
        pieces.append(_linear_piece(start, hi, pf - offset, vf, traj.t_end))
    return pieces


class _LeaderView:
    """Fast (p, v, u) lookup into a leader trajectory over a fixed window."""

    def __init__(self, leader: PiecewiseTrajectory, lo: float, hi: float):
        self.pieces = _flatten(leader, lo, hi, extrapolate=True)
        self._starts = [p.t0 for p in self.pieces]
        self.lo = lo
        self.hi = hi

    def state(self, t: float) -> tuple[float, float, float]:
        idx = bisect.bisect_right(self._starts, t) - 1
        piece = self.pieces[max(idx, 0)]
        return (piece.position(t), piece.speed(t), piece.control(t))


# ---------------------------------------------------------------------------
# unconstrained solve


@dataclass(frozen=True)
class BvpProblem:
    """Boundary data for one control-zone traversal.

    Position is measured from the control-zone entry (p0 = 0) to the
    conflict-zone entry (pf = control-zone length).  `leader`, when given,
    is the committed trajectory of the vehicle immediately ahead on the same
    lane, in the same position frame, and `delta` the minimum gap to it.
    """

    t0: float
    tf: float
    v0: float
    pf: float
    p0: float = 0.0
    leader: Optional[PiecewiseTrajectory] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"need tf > t0, got [{self.t0}, {self.tf}]")
        if not self.pf > self.p0:
            raise ValueError(f"need pf > p0, got [{self.p0}, {self.pf}]")
        if self.leader is not None and self.delta is None:
            raise ValueError("delta required when a leader is given")


def _shifted_to_absolute(a, b, c, d, r):
    """Re-expand coefficients taken about t=r into absolute-time form."""
    return (
        float(a),
        float(b - a * r),
        float(c - b * r + 0.5 * a * r * r),
        float(d - c * r + 0.5 * b * r * r - a * r ** 3 / 6.0),
    )


def _free_arc(t0: float, p0: float, v0: float, tf: float, pf: float) -> CubicArc:
    T = tf - t0
    m = np.array([
        [0.0, 0.0, 1.0, 0.0],          # v(t0) = v0
        [0.0, 0.0, 0.0, 1.0],          # p(t0) = p0
        [T ** 3 / 6.0, T ** 2 / 2.0, T, 1.0],   # p(tf) = pf
        [T, 1.0, 0.0, 0.0],            # u(tf) = 0
    ])
    rhs = np.array([v0, p0, pf, 0.0])
    coeffs = np.linalg.solve(m, rhs)
    a, b, c, d = _shifted_to_absolute(*coeffs, t0)
    return CubicArc(a, b, c, d, t0, tf)


def solve_unconstrained(problem: BvpProblem) -> CubicArc:
    """Minimum-effort cubic meeting p(t0)=p0, v(t0)=v0, p(tf)=pf, u(tf)=0.

    The final condition is the free-terminal-speed optimality condition: the
    speed costate vanishes at tf, hence so does the control.  Solved as a
    4x4 linear system in the coefficients (taken about t0 for conditioning,
    then re-expanded to absolute time).
    """
    return _free_arc(problem.t0, problem.p0, problem.v0, problem.tf,
                     problem.pf)


def _hermite_arc(t0: float, p0: float, v0: float, t1: float, p1: float,
                 v1: float) -> CubicArc:
    """Cubic with position and speed pinned at both ends."""
    T = t1 - t0
    m = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [T ** 3 / 6.0, T ** 2 / 2.0, T, 1.0],
        [T ** 2 / 2.0, T, 1.0, 0.0],
    ])
    rhs = np.array([v0, p0, p1, v1])
    coeffs = np.linalg.solve(m, rhs)
    a, b, c, d = _shifted_to_absolute(*coeffs, t0)
    return CubicArc(a, b, c, d, t0, t1)


# ---------------------------------------------------------------------------
# rear-end violation detection


class Violation(NamedTuple):
    t_enter: float
    t_exit: float
    depth: float  # most negative margin inside [t_enter, t_exit]


def _real_roots_in(coeffs, lo, hi):
    """Real roots of a polynomial (highest power first) inside [lo, hi]."""
    coeffs = np.asarray(coeffs, dtype=float)
    nz = np.flatnonzero(np.abs(coeffs) > 0.0)
    if nz.size == 0:
        return []
    coeffs = coeffs[nz[0]:]
    if coeffs.size <= 1:
        return []
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    if np.all(np.abs(coeffs[:-1]) < 1e-14 * scale):
        return []
    roots = np.roots(coeffs)
    out = []
    for r in roots:
        if abs(r.imag) < 1e-8 * max(1.0, abs(r.real)):
            t = float(r.real)
            if lo - 1e-9 <= t <= hi + 1e-9:
                out.append(min(max(t, lo), hi))
    return sorted(out)


def detect_rear_end_violation(traj_i, traj_k: PiecewiseTrajectory,
                              delta: float,
                              overlap: Optional[tuple[float, float]] = None
                              ) -> Optional[Violation]:
    """Interval where the gap to the leader drops below delta, if any.

    The margin m(t) = p_k(t) - p_i(t) - delta is piecewise cubic, so its
    sign changes are isolated by exact root finding on each piece.  Returns
    the hull from the first crossing below zero to the last recovery,
    together with the deepest dip, or None when the margin never goes
    negative.
    """
    if isinstance(traj_i, CubicArc):
        traj_i = PiecewiseTrajectory((traj_i,))
    lo, hi = overlap if overlap is not None else (traj_i.t_start, traj_i.t_end)
    pieces_i = _flatten(traj_i, lo, hi, extrapolate=True)
    pieces_k = _flatten(traj_k, lo, hi, extrapolate=True)

    # margin pieces on the merged breakpoint grid
    cuts = sorted({p.t0 for p in pieces_i} | {p.t1 for p in pieces_i}
                  | {p.t0 for p in pieces_k} | {p.t1 for p in pieces_k})
    starts_i = [p.t0 for p in pieces_i]
    starts_k = [p.t0 for p in pieces_k]

    def margin_coeffs(s):
        pi = pieces_i[max(bisect.bisect_right(starts_i, s + 1e-12) - 1, 0)]
        pk = pieces_k[max(bisect.bisect_right(starts_k, s + 1e-12) - 1, 0)]
        return (pk.a - pi.a, pk.b - pi.b, pk.c - pi.c, pk.d - pi.d - delta)

    def margin_val(cf, t):
        a, b, c, d = cf
        return ((a * t / 6.0 + 0.5 * b) * t + c) * t + d

    bad: list[tuple[float, float]] = []
    depth = math.inf
    for s, e in zip(cuts, cuts[1:]):
        if e - s <= 1e-12:
            continue
        cf = margin_coeffs(s)
        roots = _real_roots_in([cf[0] / 6.0, cf[1] / 2.0, cf[2], cf[3]], s, e)
        # track the deepest dip: interior extrema plus endpoints
        crit = _real_roots_in([cf[0] / 2.0, cf[1], cf[2]], s, e) + [s, e]
        depth = min(depth, min(margin_val(cf, t) for t in crit))
        pts = sorted({s, e, *roots})
        for q0, q1 in zip(pts, pts[1:]):
            if q1 - q0 <= 1e-12:
                continue
            if margin_val(cf, 0.5 * (q0 + q1)) < -_DETECT_EPS:
                if bad and q0 <= bad[-1][1] + 1e-9:
                    bad[-1] = (bad[-1][0], q1)
                else:
                    bad.append((q0, q1))
    if not bad:
        return None
    return Violation(float(bad[0][0]), float(bad[-1][1]), float(depth))


# ---------------------------------------------------------------------------
# constrained solve


def _terminal_arc(t2: float, p2: float, v2: float, tf: float,
                  pf: float) -> CubicArc:
    # same boundary structure as the free solve, starting from (t2, p2, v2);
    # trial junction times may put p2 past pf, which the linear solve handles
    return _free_arc(t2, p2, v2, tf, pf)


def solve_constrained(problem: BvpProblem) -> PiecewiseTrajectory:
    """Minimum-effort trajectory honoring the gap to the leader.

    Solves the free problem first; if the resulting gap to `problem.leader`
    never drops below delta, that single arc is returned unchanged.
    Otherwise the trajectory is re-pieced around the active constraint.
    Two contact structures occur:

    * a finite boundary interval [t1, t2]: the follower rides the gap
      constraint, copying the leader's motion at offset delta in between.
      The junction times solve a 2x2 damped Newton system whose residuals
      are the control mismatches against the leader at t1 and t2 (control
      continuity at both junctions); for each iterate the entry cubic is
      pinned by (p, v) at t0 and tangency (p = p_leader - delta,
      v = v_leader) at t1, the exit cubic by tangency at t2 plus
      (p = pf, u = 0) at tf.

    * a touch point: the riding interval degenerates to a single tangent
      contact.  This is the optimal structure whenever copying the leader
      is not worth any riding time (a leader at constant speed is the
      cleanest example: holding its zero control leaves no time to meet the
      terminal conditions, so the boundary system has no root).  The
      contact time solves the scalar control-matching condition between the
      entry and exit cubics.

    The boundary structure is attempted first and the touch point used when
    no boundary root exists.  Either way the result is verified against the
    leader and re-solved over a widened window when stray dips survive.
    """
    if problem.leader is None:
        return PiecewiseTrajectory((solve_unconstrained(problem),))
    delta = problem.delta
    leader = problem.leader
    t0, tf = problem.t0, problem.tf

    free = solve_unconstrained(problem)
    viol = detect_rear_end_violation(free, leader, delta, (t0, tf))
    if viol is None:
        return PiecewiseTrajectory((free,),)

    m0 = leader_state(leader, t0)[0] - problem.p0 - delta
    if m0 <= 1e-9:
        raise TrajectorySolverError(
            f"gap to leader already at or below delta at t0={t0:.3f}"
            f" (margin {m0:.3e}); no entry arc exists",
            diagnostics={"margin_t0": m0})

    lv = _LeaderView(leader, t0, tf)
    lo_v, hi_v = viol.t_enter, viol.t_exit
    last_err = None
    for _ in range(3):  # widen and re-solve if stray dips survive
        try:
            t1, t2 = _solve_junctions(problem, lv, lo_v, hi_v)
        except TrajectorySolverError as err:
            last_err = err
            t1 = t2 = _solve_touch(problem, lv, lo_v, hi_v)
        pk1, vk1, _ = lv.state(t1)
        arcs = [_hermite_arc(t0, problem.p0, problem.v0, t1, pk1 - delta, vk1)]
        if t2 > t1:
            arcs.append(LeaderOffsetArc(leader, delta, t1, t2))
        pk2, vk2, _ = lv.state(t2)
        arcs.append(_terminal_arc(t2, pk2 - delta, vk2, tf, problem.pf))
        traj = PiecewiseTrajectory(tuple(arcs))
        again = detect_rear_end_violation(traj, leader, delta, (t0, tf))
        if again is None or again.depth >= -1e-6:
            return traj
        lo_v = min(lo_v, again.t_enter)
        hi_v = max(hi_v, again.t_exit)
    raise TrajectorySolverError(
        "constrained solve left residual gap violations after 3 expansions",
        diagnostics={"window": (lo_v, hi_v), "boundary_error": str(last_err)})


def _bracket_root(fun, grid, prefer: float):
    """Sign-change bracket of `fun` on `grid` nearest to `prefer`, or None."""
    vals = [fun(t) for t in grid]
    best = None
    best_dist = math.inf
    for ta, ra, tb, rb in zip(grid, vals, grid[1:], vals[1:]):
        if ra == 0.0:
            return (ta, ta)
        if ra * rb < 0:
            dist = abs(0.5 * (ta + tb) - prefer)
            if dist < best_dist:
                best, best_dist = (ta, tb), dist
    return best


def _bisect(fun, ta, tb, tol=1e-12):
    ra = fun(ta)
    for _ in range(200):
        tm = 0.5 * (ta + tb)
        rm = fun(tm)
        if abs(rm) < 1e-11 or tb - ta < tol * max(1.0, abs(tm)):
            return tm
        if ra * rm <= 0:
            tb = tm
        else:
            ta, ra = tm, rm
    return 0.5 * (ta + tb)


def _solve_junctions(problem: BvpProblem, lv: _LeaderView, lo_v: float,
                     hi_v: float) -> tuple[float, float]:
    """Junction times (t1, t2) of the finite boundary-riding structure.

    The entry residual depends only on t1 and the exit residual only on t2
    (the leader's motion is fixed), so each is bracketed by a scan first; a
    damped 2x2 Newton pass then polishes the pair.  Raises when either
    residual never changes sign (no boundary structure exists) or the roots
    cross (the riding interval would be empty) -- the caller falls back to
    the touch-point structure.
    """
    t0, tf = problem.t0, problem.tf
    delta = problem.delta
    T = tf - t0
    gap_min = 1e-4 * T

    def r_entry(t1):
        pk1, vk1, uk1 = lv.state(t1)
        arc1 = _hermite_arc(t0, problem.p0, problem.v0, t1, pk1 - delta, vk1)
        return arc1.control(t1) - uk1

    def r_exit(t2):
        pk2, vk2, uk2 = lv.state(t2)
        arc3 = _terminal_arc(t2, pk2 - delta, vk2, tf, problem.pf)
        return arc3.control(t2) - uk2

    lo = t0 + 2 * gap_min
    hi = tf - 2 * gap_min
    grid = np.unique(np.clip(np.concatenate([
        np.linspace(lo, hi, 41),
        np.linspace(max(lo_v - 0.5, lo), min(hi_v + 0.5, hi), 21),
    ]), lo, hi))
    b1 = _bracket_root(r_entry, grid, lo_v)
    b2 = _bracket_root(r_exit, grid, hi_v)
    if b1 is None or b2 is None:
        raise TrajectorySolverError(
            "no boundary-riding structure: junction residual has no root",
            diagnostics={"entry_bracketed": b1 is not None,
                         "exit_bracketed": b2 is not None})
    t1 = _bisect(r_entry, *b1) if b1[0] != b1[1] else b1[0]
    t2 = _bisect(r_exit, *b2) if b2[0] != b2[1] else b2[0]
    if not t1 + gap_min <= t2:
        raise TrajectorySolverError(
            "boundary-riding junctions cross; structure degenerates",
            diagnostics={"t1": t1, "t2": t2})

    def residuals(x):
        return np.array([r_entry(x[0]), r_exit(x[1])])

    def in_bounds(x):
        return (t0 + gap_min <= x[0] and x[0] + gap_min <= x[1]
                and x[1] <= tf - gap_min)

    return _damped_newton(residuals, np.array([t1, t2]), in_bounds, T)


def _solve_touch(problem: BvpProblem, lv: _LeaderView, lo_v: float,
                 hi_v: float) -> float:
    """Contact time of the touch-point structure.

    Entry and exit cubics are both tangent to the constraint boundary at the
    contact time tau; the scalar residual is the control mismatch between
    them there.  The root is bracketed on a scan of the admissible window
    (biased toward the violation interval) and polished by bisection.
    """
    t0, tf = problem.t0, problem.tf
    delta = problem.delta
    T = tf - t0
    gap_min = 1e-4 * T

    def residual(tau):
        pk, vk, _ = lv.state(tau)
        entry = _hermite_arc(t0, problem.p0, problem.v0, tau, pk - delta, vk)
        exit_ = _terminal_arc(tau, pk - delta, vk, tf, problem.pf)
        return entry.control(tau) - exit_.control(tau)

    lo = t0 + 2 * gap_min
    hi = tf - 2 * gap_min
    grid = np.unique(np.clip(np.concatenate([
        np.linspace(lo, hi, 41),
        np.linspace(max(lo_v - 0.5, lo), min(hi_v + 0.5, hi), 21),
    ]), lo, hi))
    vals = [residual(t) for t in grid]
    bracket = None
    mid_v = 0.5 * (lo_v + hi_v)
    best_dist = math.inf
    for (ta, ra), (tb, rb) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
        if ra == 0.0:
            return float(ta)
        if ra * rb < 0:
            dist = abs(0.5 * (ta + tb) - mid_v)
            if dist < best_dist:
                bracket, best_dist = (ta, ra, tb, rb), dist
    if bracket is None:
        raise TrajectorySolverError(
            "no contact time found: touch-point residual has no sign change",
            diagnostics={"residual_range": (min(vals), max(vals))})
    ta, ra, tb, rb = bracket
    for _ in range(200):
        tm = 0.5 * (ta + tb)
        rm = residual(tm)
        if abs(rm) < 1e-11 or tb - ta < 1e-13 * max(1.0, abs(tm)):
            return float(tm)
        if ra * rm <= 0:
            tb, rb = tm, rm
        else:
            ta, ra = tm, rm
    return float(0.5 * (ta + tb))


def _damped_newton(fun, x0, in_bounds, scale, tol=1e-10, max_iter=60):
    x = np.array(x0, dtype=float)
    r = fun(x)
    best = float(np.max(np.abs(r)))
    h = 1e-7 * max(1.0, scale)
    for _ in range(max_iter):
        if best < tol:
            return float(x[0]), float(x[1])
        jac = np.empty((2, 2))
        for j in range(2):
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            if not (in_bounds(xp) and in_bounds(xm)):
                xp = x.copy(); xm = x.copy()
                if in_bounds(x + np.eye(2)[j] * h):
                    xp[j] += h
                else:
                    xm[j] -= h
            jac[:, j] = (fun(xp) - fun(xm)) / (xp[j] - xm[j])
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        alpha = 1.0
        improved = False
        for _ in range(40):
            xn = x + alpha * step
            if in_bounds(xn):
                rn = fun(xn)
                fn = float(np.max(np.abs(rn)))
                if fn < best or fn < tol:
                    x, r, best = xn, rn, fn
                    improved = True
                    break
            alpha *= 0.5
        if not improved:
            break
    if best < 1e-8:  # accept a slightly loose root rather than fail outright
        return float(x[0]), float(x[1])
    raise TrajectorySolverError(
        f"junction iteration stalled with residual {best:.3e}",
        diagnostics={"t1": float(x[0]), "t2": float(x[1]), "residual": best})


# ---------------------------------------------------------------------------
# effort, bounds, costates


def effort(traj) -> float:
    """(1/2) * integral of u(t)^2 over the trajectory (units m^2/s^3).

    Exact per piece: the antiderivative of (1/2)(a*t+b)^2 is
    (a*t+b)^3 / (6a), with the b^2*t/2 limit as a -> 0.  Constrained pieces
    integrate the leader's control.
    """
    if isinstance(traj, CubicArc):
        traj = PiecewiseTrajectory((traj,))
    total = 0.0
    for p in _flatten(traj, traj.t_start, traj.t_end):
        if abs(p.a) < _A_EPS:
            total += 0.5 * p.b * p.b * (p.t1 - p.t0)
        else:
            hi = p.a * p.t1 + p.b
            lo = p.a * p.t0 + p.b
            total += (hi ** 3 - lo ** 3) / (6.0 * p.a)
    return total


@dataclass(frozen=True)
class BoundExcursion:
    kind: str       # "v_max" | "v_min" | "u_max" | "u_min"
    t_start: float
    t_end: float
    peak: float     # largest magnitude of the violation, SI units


def _positive_intervals(c2, c1, c0, lo, hi):
    """Subintervals of [lo, hi] where c2*t^2 + c1*t + c0 > 0, with peaks."""
    def val(t):
        return (c2 * t + c1) * t + c0

    roots = _real_roots_in([c2, c1, c0], lo, hi)
    pts = sorted({lo, hi, *roots})
    out = []
    for q0, q1 in zip(pts, pts[1:]):
        if q1 - q0 <= 1e-12:
            continue
        if val(0.5 * (q0 + q1)) > 0:
            peak_ts = [q0, q1]
            if abs(c2) > 0:
                vertex = -c1 / (2 * c2)
                if q0 < vertex < q1:
                    peak_ts.append(vertex)
            out.append((q0, q1, max(val(t) for t in peak_ts)))
    return out


def check_bounds(traj, params: GlobalParams,
                 tol: float = 1e-9) -> list[BoundExcursion]:
    """Exact speed/control excursion intervals against the global limits.

    Empty result means the limits hold throughout.  Excursions are found by
    root isolation (quadratic for speed, linear for control) per piece and
    merged across junctions; dips smaller than `tol` are ignored.
    """
    if isinstance(traj, CubicArc):
        traj = PiecewiseTrajectory((traj,))
    checks = [
        # (kind, c2, c1, c0-offset builder): expression > 0 means violation
        ("v_max", lambda p: (0.5 * p.a, p.b, p.c - params.v_max)),
        ("v_min", lambda p: (-0.5 * p.a, -p.b, params.v_min - p.c)),
        ("u_max", lambda p: (0.0, p.a, p.b - params.u_max)),
        ("u_min", lambda p: (0.0, -p.a, params.u_min - p.b)),
    ]
    found: list[BoundExcursion] = []
    for p in _flatten(traj, traj.t_start, traj.t_end):
        for kind, make in checks:
            c2, c1, c0 = make(p)
            for q0, q1, peak in _positive_intervals(c2, c1, c0, p.t0, p.t1):
                if peak <= tol:
                    continue
                prev = found[-1] if found else None
                if (prev is not None and prev.kind == kind
                        and q0 <= prev.t_end + 1e-9):
                    found[-1] = BoundExcursion(kind, prev.t_start, q1,
                                               max(prev.peak, peak))
                else:
                    found.append(BoundExcursion(kind, q0, q1, peak))
    return sorted(found, key=lambda e: (e.t_start, e.kind))


@dataclass(frozen=True)
class CostateRecord:
    """Diagnostic costates and multiplier activity for one arc.

    On unconstrained arcs the position costate is the constant `a` and the
    speed costate is -(a*t + b), so u = -lambda_v and lambda_v(tf) = 0 on
    the final arc.  On a constrained arc only the gap multiplier eta_c is
    active; the costates jump at the entry junction by (pi1, pi2).
    """

    arc_index: int
    constrained: bool
    lambda_p: float
    lambda_v_slope: float      # lambda_v(t) = slope * t + intercept
    lambda_v_intercept: float
    eta_c_active: bool = False
    pi1: Optional[float] = None
    pi2: Optional[float] = None

    def lambda_v(self, t: float) -> float:
        return self.lambda_v_slope * t + self.lambda_v_intercept


def costate_records(traj: PiecewiseTrajectory) -> list[CostateRecord]:
    records = []
    arcs = traj.arcs
    for i, arc in enumerate(arcs):
        if isinstance(arc, CubicArc):
            records.append(CostateRecord(
                arc_index=i, constrained=False, lambda_p=arc.a,
                lambda_v_slope=-arc.a, lambda_v_intercept=-arc.b))
        else:
            # continue the exit arc's costates backward over the constrained
            # arc; the jump multipliers live at the entry junction
            nxt = arcs[i + 1] if i + 1 < len(arcs) else None
            prev = arcs[i - 1] if i > 0 else None
            ref = nxt if isinstance(nxt, CubicArc) else prev
            a_ref = ref.a if isinstance(ref, CubicArc) else 0.0
            b_ref = ref.b if isinstance(ref, CubicArc) else 0.0
            t1 = arc.t_start
            u_k = arc.control(t1)
            pi2 = -u_k + a_ref * t1 + b_ref
            pi1 = (prev.a - a_ref) if isinstance(prev, CubicArc) else 0.0
            records.append(CostateRecord(
                arc_index=i, constrained=True, lambda_p=a_ref,
                lambda_v_slope=-a_ref, lambda_v_intercept=-b_ref,
                eta_c_active=True, pi1=pi1, pi2=pi2))
    return records
