"""Structure of the eps -> 0 limit: sweeps, energy separation and singular-time bookkeeping.

A finite ladder of regularisation radii stands in for the limiting weak
solution. Singular times are a falsifiable proxy: a node is flagged when
``||grad u_eps(t)||`` grows by at least a factor two per halving of eps along
the whole ladder. The regular intervals ``(a_i, b_i)`` are the gaps between
flagged components, and the singular set is summarised by the square-root
length budget and a Minkowski-Bouligand dimension estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import fields as fl
from .fields import Grid
from .nse import FlowTrace, LerayRun, MeasuredConstants, leray_solve, pressure_cubed_bound_check
from .stokes import TimeMesh


# ---------------------------------------------------------------------------
# eps sweep


@dataclass
class SweepResult:
    ladder: tuple
    runs: list
    checkpoints: tuple
    distances: dict = field(default_factory=dict)

    @property
    def resolved(self) -> bool:
        return all(r.resolved for r in self.runs)

    def grad_traces(self) -> np.ndarray:
        return np.array([r.trace.h1semi for r in self.runs])

    @property
    def times(self) -> np.ndarray:
        return self.runs[0].trace.t


def pairwise_distances(grid: Grid, runs: Sequence[LerayRun], t: float) -> np.ndarray:
    k = len(runs)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            d = fl.lp_norm(grid, runs[i].checkpoints[t] - runs[j].checkpoints[t], 2)
            out[i, j] = out[j, i] = d
    return out


def eps_sweep(grid: Grid, u0: np.ndarray, ladder: Sequence[float], mesh: TimeMesh,
              checkpoints: Sequence[float] = ()) -> SweepResult:
    """One regularised run per radius; pairwise L^2 distances at the checkpoints."""
    ladder = tuple(float(e) for e in ladder)
    if any(b >= a for a, b in zip(ladder[:-1], ladder[1:])):
        raise ValueError("eps ladder must be strictly decreasing")
    runs = [leray_solve(grid, u0, e, mesh, checkpoints) for e in ladder]
    res = SweepResult(ladder, runs, tuple(float(c) for c in checkpoints))
    for t in res.checkpoints:
        res.distances[t] = pairwise_distances(grid, runs, t)
    return res


# ---------------------------------------------------------------------------
# separation of energy


def tail_constant(run: LerayRun, t: float | None = None) -> float:
    """Constant of the cubic term, ``(2 C_p + C_4) 2^{-3/4}``, from the run's own ratios.

    ``C_p`` and ``C_4`` are the largest observed ``||p|| / (||grad u||^{3/2} ||u||^{1/2})``
    and ``||u||_4^2`` over the same scale on ``[0, t]``.
    """
    if t is not None:
        n = run.trace.at(t) + 1
        sub = LerayRun(run.eps, run.grid, run.mesh, _trace_slice(run, n), {}, run.final,
                       run.pressure[:n], run.cancellation[:n], run.tail[:n])
        cp, c4 = pressure_cubed_bound_check(sub)
    else:
        cp, c4 = pressure_cubed_bound_check(run)
    return (2.0 * cp + c4) * 2.0**-0.75


def _trace_slice(run: LerayRun, n: int) -> FlowTrace:
    return FlowTrace(**{c: getattr(run.trace, c)[:n] for c in FlowTrace.COLUMNS})


def tail_energy_bound_check(run: LerayRun, R1: float, R2: float, t: float,
                            C: float | None = None) -> float:
    """Slack ``RHS - LHS`` of the energy-separation inequality at time ``t``.

    ``RHS = int_{|x|>R1} |u0|^2 + (||u0||^2 sqrt(t) + C ||u0||^3 t^{1/4}) / (R2 - R1)``
    where the first coefficient is exact (from ``2 I_1 <= sqrt(t) ||u0||``)
    and ``C`` defaults to :func:`tail_constant` of the run up to ``t``.
    """
    g = run.grid
    if not 0 < R1 < R2:
        raise ValueError("need 0 < R1 < R2")
    if R2 >= g.L / 2:
        raise ValueError("need R2 < L/2")
    u0 = run.initial
    if t == 0:
        ut = u0
    else:
        ut = run.checkpoints[t] if t in run.checkpoints else None
        if ut is None:
            raise KeyError(f"t={t} is not a checkpoint of the run")
    if C is None:
        C = tail_constant(run, t) if t > 0 else 0.0
    n0 = fl.lp_norm(g, u0, 2)
    lhs = fl.tail_energy(g, ut, R2)
    rhs = fl.tail_energy(g, u0, R1) + (n0**2 * math.sqrt(t) + C * n0**3 * t**0.25) / (R2 - R1)
    return float(rhs - lhs)


# ---------------------------------------------------------------------------
# intervals of regularity


@dataclass(frozen=True)
class IntervalSet:
    """Disjoint open intervals ``(a_i, b_i)`` in ``(0, inf)`` with a horizon.

    The singular set is ``(0, horizon]`` minus the union of the intervals.
    At most one interval is unbounded (``b = inf``).
    """

    intervals: tuple
    horizon: float

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in iv:
            if not (a >= 0 and a < b):
                raise ValueError(f"bad interval ({a}, {b})")
        for (a0, b0), (a1, b1) in zip(iv[:-1], iv[1:]):
            if b0 > a1:
                raise ValueError("intervals must be ordered and disjoint")
        if sum(math.isinf(b) for _, b in iv) > 1:
            raise ValueError("at most one unbounded interval")
        if any(math.isinf(b) for _, b in iv[:-1]):
            raise ValueError("the unbounded interval must come last")
        object.__setattr__(self, "intervals", iv)

    def __len__(self):
        return len(self.intervals)

    def finite(self) -> list:
        return [(a, b) for a, b in self.intervals if math.isfinite(b)]

    def singular_components(self) -> list:
        """Closed components ``[c, d]`` of the singular set within the horizon.

        A shared endpoint of two adjacent intervals is a degenerate component.
        """
        out = []
        prev, first = 0.0, True
        for a, b in self.intervals:
            if a > prev or (a == prev and not first):
                out.append((prev, a))
            prev, first = b, False
        if prev < self.horizon:
            out.append((prev, self.horizon))
        return out

    @classmethod
    def from_singular(cls, components, horizon: float, open_end: bool = True) -> "IntervalSet":
        """Gaps between closed singular components.

        With ``open_end`` the solution is taken regular after the last
        component, so the final gap is unbounded.
        """
        comps = sorted((float(c), float(d)) for c, d in components)
        iv = []
        prev = 0.0
        for c, d in comps:
            if c > prev:
                iv.append((prev, c))
            prev = max(prev, d)
        if open_end:
            iv.append((prev, math.inf))
        elif prev < horizon:
            iv.append((prev, horizon))
        return cls(tuple(iv), horizon)

    def to_json(self) -> dict:
        return {"horizon": self.horizon,
                "intervals": [[a, None if math.isinf(b) else b] for a, b in self.intervals]}

    @classmethod
    def from_json(cls, d: dict) -> "IntervalSet":
        return cls(tuple((a, math.inf if b is None else b) for a, b in d["intervals"]), d["horizon"])


def singular_mask(grad_traces, ladder: Sequence[float], factor: float = 2.0) -> np.ndarray:
    """Nodes where ``||grad u_eps||`` grows by ``factor`` per halving along the whole ladder."""
    g = np.asarray(grad_traces, dtype=float)
    ladder = np.asarray(ladder, dtype=float)
    if g.shape[0] != ladder.size or ladder.size < 3:
        raise ValueError("need one trace per eps and at least three levels")
    halvings = np.log2(ladder[:-1] / ladder[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = (g[1:] / g[:-1]) ** (1.0 / halvings[:, None])
    rate = np.nan_to_num(rate, nan=0.0)
    return np.all(rate >= factor, axis=0)


def detect_singular_times(times, grad_traces, ladder: Sequence[float], horizon: float | None = None,
                          factor: float = 2.0) -> IntervalSet:
    """Singular-time proxy from the trend rule; returns the regular intervals.

    Runs of consecutive flagged nodes form closed components. The rule only
    uses ratios, so it is invariant under rescaling all traces.
    """
    t = np.asarray(times, dtype=float)
    horizon = float(t[-1]) if horizon is None else horizon
    mask = singular_mask(grad_traces, ladder, factor)
    comps = []
    i = 0
    while i < len(t):
        if mask[i]:
            j = i
            while j + 1 < len(t) and mask[j + 1]:
                j += 1
            comps.append((t[i], t[j]))
            i = j + 1
        else:
            i += 1
    return IntervalSet.from_singular(comps, horizon)


def budget_constant(constants: MeasuredConstants) -> float:
    """``C`` in ``sum sqrt(b_i - a_i) <= C ||u0||^2`` from the gradient blow-up floor.

    ``||grad u(t)||^2 >= sqrt(c / (b - t))`` near a singular time ``b`` and the
    energy inequality give ``C = 1 / (4 sqrt(c))``.
    """
    return 1.0 / (4.0 * math.sqrt(constants.c_grad_time))


def sqrt_length_budget(intervals: IntervalSet, u0_norm: float, C: float = 1.0) -> tuple[float, float]:
    """``(sum over finite intervals of sqrt(b - a), C ||u0||^2)``."""
    s = math.fsum(math.sqrt(b - a) for a, b in intervals.finite())
    return s, C * u0_norm**2


def gap_fixture(lengths: Sequence[float], start: float = 0.0) -> IntervalSet:
    """Adjacent finite intervals of the given lengths followed by an unbounded one."""
    iv = []
    a = start
    for ln in lengths:
        iv.append((a, a + ln))
        a += ln
    iv.append((a, math.inf))
    return IntervalSet(tuple(iv), a)


# ---------------------------------------------------------------------------
# Minkowski-Bouligand dimension


@dataclass
class BoxDimEstimate:
    deltas: np.ndarray
    measures: np.ndarray
    counts: np.ndarray
    dimension: float
    stderr: float

    def rows(self):
        return [(float(d), float(m), int(c)) for d, m, c in zip(self.deltas, self.measures, self.counts)]

    def summary(self) -> dict:
        return {"dimension": self.dimension, "stderr": self.stderr}


def default_deltas(lo: float = 1e-4, hi: float = 1e-1) -> np.ndarray:
    """Geometric ladder with ratio 1/2 from ``hi`` down to ``lo``."""
    n = int(math.floor(math.log2(hi / lo))) + 1
    return hi * 0.5 ** np.arange(n)


def _components(obj) -> np.ndarray:
    if isinstance(obj, IntervalSet):
        comps = obj.singular_components()
        return np.array(comps, dtype=float).reshape(-1, 2)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 1:
        return np.stack([arr, arr], axis=1)
    return arr.reshape(-1, 2)


def neighbourhood_measure(components: np.ndarray, delta: float) -> tuple[float, int]:
    """``|Sigma_delta|`` and the number of connected pieces of the neighbourhood."""
    if components.size == 0:
        return 0.0, 0
    c = components[np.argsort(components[:, 0])]
    lo, hi = c[:, 0] - delta, c[:, 1] + delta
    run_hi = np.maximum.accumulate(hi)
    new = np.empty(len(lo), dtype=bool)
    new[0] = True
    new[1:] = lo[1:] > run_hi[:-1]
    starts = lo[new]
    idx = np.flatnonzero(new)
    ends = np.append(run_hi[idx[1:] - 1], run_hi[-1])
    return float(np.sum(ends - starts)), int(new.sum())


def box_dimension_estimate(obj, deltas=None) -> BoxDimEstimate:
    """``1 - slope`` of ``log |Sigma_delta|`` against ``log delta``.

    ``obj`` is a point array, an ``(n, 2)`` array of closed components, or an
    :class:`IntervalSet` (whose singular set is used).
    """
    deltas = default_deltas() if deltas is None else np.sort(np.asarray(deltas, dtype=float))[::-1]
    if deltas.size < 3 or deltas.max() / deltas.min() < 100:
        raise ValueError("delta ladder must span at least two decades")
    comps = _components(obj)
    meas, cnt = zip(*(neighbourhood_measure(comps, d) for d in deltas))
    meas, cnt = np.array(meas), np.array(cnt)
    if comps.size == 0:
        return BoxDimEstimate(deltas, meas, cnt, 0.0, 0.0)
    fit = stats.linregress(np.log(deltas), np.log(meas))
    return BoxDimEstimate(deltas, meas, cnt, float(1.0 - fit.slope), float(fit.stderr))


def power_sequence(power: float, n_max: int = 200000) -> np.ndarray:
    """``{n^{-power} : 1 <= n <= n_max} U {0}``."""
    n = np.arange(1, n_max + 1, dtype=float)
    return np.append(n**-power, 0.0)


# ---------------------------------------------------------------------------
# decay and convergence


def loglog_tail_slope(t, y, t_min: float) -> float:
    t, y = np.asarray(t), np.asarray(y)
    sel = (t >= t_min) & (y > 0)
    if sel.sum() < 3:
        raise ValueError("not enough nodes past the threshold")
    return float(stats.linregress(np.log(t[sel]), np.log(y[sel])).slope)


def late_time_decay_check(run: LerayRun, u0_norm: float, constants: MeasuredConstants,
                          slack: float = 0.1) -> dict:
    """Tail slopes of ``||grad u||`` and ``||u||_inf`` past the threshold ``C ||u0||^4``.

    The threshold constant is ``1 / (16 c)`` with ``c`` the gradient window
    constant. The fit window is ``t >= max(threshold, T/4)``. Also reports
    the largest ``||grad u|| t^{1/2} / ||u0||`` and ``||u||_inf t^{3/4} / ||u0||``
    there.
    """
    tr = run.trace
    T = float(tr.t[-1])
    thr = u0_norm**4 / (16.0 * constants.c_grad_time)
    if T <= 2.0 * thr or T <= 0:
        return {"status": "skipped", "threshold": thr, "horizon": T}
    t_min = max(thr, T / 4.0)
    sg = loglog_tail_slope(tr.t, tr.h1semi, t_min)
    si = loglog_tail_slope(tr.t, tr.linf, t_min)
    sel = tr.t >= t_min
    cg = float(np.max(tr.h1semi[sel] * np.sqrt(tr.t[sel])) / u0_norm) if u0_norm > 0 else 0.0
    ci = float(np.max(tr.linf[sel] * tr.t[sel] ** 0.75) / u0_norm) if u0_norm > 0 else 0.0
    ok = sg <= -0.5 + slack and si <= -0.75 + slack
    return {"status": "pass" if ok else "fail", "threshold": thr, "t_min": t_min,
            "grad_slope": sg, "linf_slope": si, "grad_constant": cg, "linf_constant": ci}


def strong_l2_convergence_check(sweep: SweepResult, t_list: Sequence[float],
                                singular: IntervalSet | None = None) -> dict:
    """Cauchy trend of distances and norm gaps between consecutive ladder levels.

    At each checkpoint not inside a singular component both sequences
    ``||u_i - u_{i+1}||`` and ``| ||u_i|| - ||u_{i+1}|| |`` must decrease
    down the ladder (zero sequences count as decreasing).
    """
    g = sweep.runs[0].grid
    report = {}
    comps = [] if singular is None else singular.singular_components()
    for t in t_list:
        if any(c <= t <= d for c, d in comps):
            report[t] = {"status": "skipped"}
            continue
        us = [r.checkpoints[t] for r in sweep.runs]
        d = [fl.lp_norm(g, a - b, 2) for a, b in zip(us[:-1], us[1:])]
        n = [fl.lp_norm(g, a, 2) for a in us]
        gaps = [abs(a - b) for a, b in zip(n[:-1], n[1:])]
        dec = lambda s: all(y < x or (x == 0 and y == 0) for x, y in zip(s[:-1], s[1:]))
        ok = dec(d) and dec(gaps)
        report[t] = {"status": "pass" if ok else "fail", "distances": d, "norm_gaps": gaps}
    return report
