"""Strong and Leray-regularised Navier-Stokes solutions on the periodic box.

Strong solutions come from the Picard scheme on the Duhamel form,

    u^{(0)} = Phi(t) * u0,
    u^{(n+1)} = Phi(t) * u0 - int_0^t T(t - s) * (u^{(n)} . grad) u^{(n)} ds,

run on ``[0, T]`` with ``T = 1 / (32 (1 + C')^4 ||u0||_inf^2)``. The
regularised system ``u_t = Delta u - P((J_eps u . grad) u)`` is advanced by
ETDRK4 (Cox-Matthews) with the linear part treated exactly per mode.

The constants of the smoothing inequalities are measured on seeded batches of
random smooth fields (see :func:`measure_constants`); every check in this
module consumes a :class:`MeasuredConstants` record.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

from . import fields as fl
from . import stokes as st
from .analysis import min_kernel_cumulative, volterra_closed_form
from .fields import Grid, fft, ifft
from .stokes import TimeMesh, Trajectory

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# measured constants


@dataclass(frozen=True)
class MeasuredConstants:
    """Empirical constants of the smoothing inequalities.

    c_prime : ``||D(t)||_inf <= C' int ||Y||_inf^2 / sqrt(t-s)`` for the Duhamel term.
    c_dprime : same with the kernel ``min(||Y||_inf^2 / sqrt(t-s), ||Y||^2 / (t-s)^2)``.
    c_grad : ``||Phi(t) * u0||_inf <= c_grad ||grad u0|| t^{-1/4}``.
    c_lp : ``||Phi(t) * u0||_inf <= c_lp[p] ||u0||_p t^{-3/(2p)}``.
    c_moll : ``||J_eps v||_inf <= c_moll[eps] eps^{-3/2} ||v||``.
    """

    c_prime: float
    c_dprime: float
    c_grad: float
    c_lp: dict = field(default_factory=dict)
    c_moll: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("c_prime", "c_dprime", "c_grad"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")

    @property
    def c_inf(self) -> float:
        """Prefactor of the existence time ``c_inf / ||u0||_inf^2``."""
        return 1.0 / (32.0 * (1.0 + self.c_prime) ** 4)

    @property
    def c_grad_time(self) -> float:
        """Prefactor of the gradient window ``c / ||grad u0||^4``."""
        return (4.0 * math.pi * self.c_prime * self.c_grad) ** -4

    def lp_constant(self, p: float) -> float:
        if p not in self.c_lp:
            raise KeyError(f"no measured L^{p} constant (have {sorted(self.c_lp)})")
        return self.c_lp[p]

    def moll_constant(self, eps: float) -> float:
        for k, v in self.c_moll.items():
            if math.isclose(k, eps, rel_tol=1e-12):
                return v
        raise KeyError(f"no mollifier constant for eps={eps}")

    def t_formula(self, linf: float) -> float:
        return self.c_inf / linf**2

    def to_record(self) -> dict:
        return {
            "c_prime": float(self.c_prime),
            "c_dprime": float(self.c_dprime),
            "c_grad": float(self.c_grad),
            "c_lp": {str(k): float(v) for k, v in sorted(self.c_lp.items())},
            "c_moll": {str(k): float(v) for k, v in sorted(self.c_moll.items())},
            "provenance": self.provenance,
        }


def _duhamel_constant_forcing(grid: Grid, Fh: np.ndarray, t: float) -> np.ndarray:
    a = 4.0 * math.pi**2 * grid.xi2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(a > 0, -np.expm1(-a * t) / a, t)
    return ifft(w * Fh)


def constant_batch(grid: Grid, seed: int = 0, n_fields: int = 50) -> list[np.ndarray]:
    """Seeded batch of random smooth solenoidal fields used to measure constants."""
    rng = np.random.Generator(np.random.Philox(seed))
    return [fl.random_solenoidal(grid, rng, n_blobs=int(rng.integers(1, 6)))
            for _ in range(n_fields)]


def measure_constants(grid: Grid, seed: int = 0, n_fields: int = 50, ps: Sequence[float] = (4.0, 6.0),
                      eps: Sequence[float] = (), n_times: int = 16, batch=None) -> MeasuredConstants:
    """Measure the smoothing constants as suprema of their ratios over a batch.

    The Duhamel ratios use time-constant fields ``Y``, for which
    ``int_0^t ds / sqrt(t-s) = 2 sqrt(t)``. Times are log-spaced between the
    squared mesh width and ``(L/4)^2``.
    """
    fields_ = constant_batch(grid, seed, n_fields) if batch is None else list(batch)
    times = np.geomspace(grid.h**2, (grid.L / 4.0) ** 2, n_times)
    cp = cdp = cg = 0.0
    clp = {float(p): 0.0 for p in ps}
    for Y in fields_:
        linf = fl.lp_norm(grid, Y, math.inf)
        l2 = fl.lp_norm(grid, Y, 2)
        grad = st._h1(grid, Y)
        lps = {p: fl.lp_norm(grid, Y, p) for p in clp}
        Fh = st.advective_forcing_hat(grid, Y, Y)
        Yh = fft(Y)
        mk = min_kernel_cumulative(linf**2, l2**2, times)
        for t, m in zip(times, mk):
            d = fl.lp_norm(grid, _duhamel_constant_forcing(grid, Fh, t), math.inf)
            cp = max(cp, d / (2.0 * math.sqrt(t) * linf**2))
            cdp = max(cdp, d / m)
            heat = fl.lp_norm(grid, ifft(Yh * fl.heat_hat(grid, t)), math.inf)
            cg = max(cg, heat * t**0.25 / grad)
            for p in clp:
                clp[p] = max(clp[p], heat * t ** (1.5 / p) / lps[p])
    cm = {}
    for e in eps:
        extremiser = np.stack([fl.bump(grid.r, e), 0 * grid.r, 0 * grid.r])
        cm[float(e)] = fl.mollifier_linf_constant(grid, e, fields_ + [extremiser])
    prov = {"L": grid.L, "N": grid.N, "seed": seed, "n_fields": len(fields_),
            "t_range": [float(times[0]), float(times[-1])], "n_times": n_times}
    return MeasuredConstants(float(cp), float(cdp), float(cg), {p: float(v) for p, v in clp.items()},
                             cm, prov)


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass
class PicardRun:
    mesh: TimeMesh
    T_formula: float
    diffs: list = field(default_factory=list)
    diffs_linf: list = field(default_factory=list)
    linf_traces: list = field(default_factory=list)
    lambda_observed: float = 0.0
    iterations: int = 0
    converged: bool = False
    residual: float = math.nan
    energy_defect: float = math.nan
    iterates: list | None = None

    def to_record(self) -> dict:
        return {"lambda_observed": self.lambda_observed, "T_formula": self.T_formula,
                "iterations": self.iterations, "diffs": [float(d) for d in self.diffs],
                "converged": self.converged, "residual": self.residual,
                "energy_defect": self.energy_defect}


def heat_trajectory(grid: Grid, u0: np.ndarray, mesh: TimeMesh) -> Trajectory:
    return Trajectory(grid, mesh, [st.heat_evolve(grid, u0, float(t)) for t in mesh.nodes])


def picard_step(grid: Grid, u_n: Trajectory, u0: np.ndarray, mesh: TimeMesh | None = None) -> Trajectory:
    """``u^{(n+1)}`` from ``u^{(n)}``: Stokes solve with advective forcing ``Y = Z = u^{(n)}``."""
    mesh = u_n.mesh if mesh is None else mesh
    return st.stokes_solve_advective(grid, u0, u_n.u, u_n.u, mesh)


def _sup_diff(grid: Grid, a: Trajectory, b: Trajectory, p: float) -> float:
    return max(fl.lp_norm(grid, x - y, p) for x, y in zip(a.u, b.u))


def contraction_ratio(diffs, floor: float = 1e-12) -> float:
    """Largest ``d_{n+1} / d_n`` with both terms above the roundoff floor."""
    r = [b / a for a, b in zip(diffs[:-1], diffs[1:]) if a > floor and b > floor]
    return float(max(r)) if r else 0.0


def picard_solve(grid: Grid, u0: np.ndarray, constants: MeasuredConstants, tol: float = 1e-8,
                 M: int = 32, T: float | None = None, max_iter: int = 60,
                 keep_iterates: bool = False) -> tuple[Trajectory, PicardRun]:
    """Iterate the Picard map to a fixed point on ``[0, T]``.

    ``T`` defaults to ``T_formula``. Convergence is ``max_t ||u^{(n+1)} - u^{(n)}||``
    relative to ``||u0||`` at most ``tol``. The reported residual is one
    further application of the map, and the energy defect is
    ``max_t |‖u(t)‖^2 + 2 int_0^t ‖grad u‖^2 - ‖u0‖^2| / ‖u0‖^2``.
    """
    st._require_solenoidal(grid, u0, "initial data")
    linf = fl.lp_norm(grid, u0, math.inf)
    l2 = fl.lp_norm(grid, u0, 2)
    T_formula = constants.t_formula(linf) if linf > 0 else math.inf
    if T is None:
        T = T_formula if math.isfinite(T_formula) else 1.0
    mesh = TimeMesh.uniform(T, M)
    run = PicardRun(mesh=mesh, T_formula=T_formula)
    cur = heat_trajectory(grid, u0, mesh)
    run.linf_traces.append(cur.norms("linf"))
    if keep_iterates:
        run.iterates = [cur]
    if l2 == 0:
        run.converged, run.residual, run.energy_defect = True, 0.0, 0.0
        return cur, run
    for n in range(max_iter):
        nxt = picard_step(grid, cur, u0, mesh)
        run.diffs.append(_sup_diff(grid, nxt, cur, 2) / l2)
        run.diffs_linf.append(_sup_diff(grid, nxt, cur, math.inf) / linf)
        run.linf_traces.append(nxt.norms("linf"))
        if keep_iterates:
            run.iterates.append(nxt)
        cur = nxt
        run.iterations = n + 1
        if run.diffs[-1] <= tol:
            run.converged = True
            break
    run.lambda_observed = contraction_ratio(run.diffs)
    check = picard_step(grid, cur, u0, mesh)
    run.residual = _sup_diff(grid, check, cur, 2) / l2
    run.energy_defect = energy_equality_defect(cur)
    return cur, run


def energy_equality_defect(traj: Trajectory) -> float:
    """``max_t |‖u‖^2 + 2 int ‖grad u‖^2 - ‖u0‖^2| / ‖u0‖^2`` (work term excluded)."""
    e, diss, _ = st.energy_ledger(traj.grid, traj.mesh, traj.u, traj.forcing)
    if e[0] == 0:
        return 0.0
    return float(np.abs(e + diss - e[0]).max() / e[0])


def duhamel_bound_margin(grid: Grid, prev: Trajectory, nxt: Trajectory, u0: np.ndarray,
                         constants: MeasuredConstants) -> float:
    """Worst ``‖u^{(n+1)}(t)‖_inf - (C' int ‖u^{(n)}‖_inf^2 / sqrt(t-s) + ‖u0‖_inf)``."""
    sq = prev.norms("linf") ** 2
    bound = constants.c_prime * (st.duhamel_weights(prev.mesh, 0.5) @ sq) + fl.lp_norm(grid, u0, math.inf)
    return float(np.max(nxt.norms("linf") - bound))


def semi_strong_solve(grid: Grid, u0: np.ndarray, constants: MeasuredConstants, delta: float,
                      T: float | None = None, tol: float = 1e-8, M: int = 32):
    """Picard on ``[delta, T]`` seeded from ``Phi(delta) * u0`` for H^1 data.

    Returns ``(times, trajectory, run, ratio)`` with ``times`` the absolute
    times of the nodes and ``ratio = max ‖u(t)‖_inf t^{1/4} / (2 c_grad ‖grad u0‖)``,
    which stays at most one on the admissible window ``t <= c / ‖grad u0‖^4``.
    """
    grad = st._h1(grid, u0)
    window = constants.c_grad_time / grad**4 if grad > 0 else math.inf
    if T is None:
        T = window
    if not T > delta:
        raise ValueError("need T > delta")
    seed = st.heat_evolve(grid, u0, delta)
    traj, run = picard_solve(grid, seed, constants, tol=tol, M=M, T=T - delta)
    times = delta + traj.mesh.nodes
    if grad == 0:
        return times, traj, run, 0.0
    ratio = np.max(traj.norms("linf") * times**0.25) / (2.0 * constants.c_grad * grad)
    return times, traj, run, float(ratio)


# ---------------------------------------------------------------------------
# existence times and blow-up floors


def existence_time_from_norms(linf: float, grad: float, lp: float, p: float,
                              constants: MeasuredConstants) -> tuple[float, float, float]:
    """The three lower bounds on the existence time from data norms."""
    if not p > 3:
        raise ValueError("the L^p bound needs p > 3")
    c = constants
    t1 = c.c_inf / linf**2 if linf > 0 else math.inf
    t2 = c.c_grad_time / grad**4 if grad > 0 else math.inf
    k = 4.0 * c.c_prime * c.lp_constant(p) * special.beta(0.5, 1.0 - 3.0 / p)
    t3 = (k * lp) ** (-2.0 * p / (p - 3.0)) if lp > 0 else math.inf
    return t1, t2, t3


def existence_time_bounds(grid: Grid, u0: np.ndarray, constants: MeasuredConstants,
                          p: float = 6.0) -> tuple[float, float, float]:
    return existence_time_from_norms(fl.lp_norm(grid, u0, math.inf), st._h1(grid, u0),
                                     fl.lp_norm(grid, u0, p), p, constants)


def blowup_exponents(p: float) -> tuple[float, float, float]:
    """Exponents of ``1/(T0 - t)`` in the three floors."""
    third = 0.5 if math.isinf(p) else (1.0 - 3.0 / p) / 2.0
    return 0.5, 0.25, third


def blowup_rate_floor(T0: float, t, p: float, constants: MeasuredConstants):
    """Floors on ``‖u‖_inf``, ``‖grad u‖`` and ``‖u‖_p`` if ``T0`` were the blow-up time.

    Each follows from an existence-time bound restarted at ``t``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= T0):
        raise ValueError("floors need t < T0")
    if not p > 3:
        raise ValueError("need p > 3")
    gap = T0 - t
    c = constants
    f_inf = np.sqrt(c.c_inf / gap)
    f_grad = (c.c_grad_time / gap) ** 0.25
    e3 = blowup_exponents(p)[2]
    k = 1.0 / (4.0 * c.c_prime * c.lp_constant(p) * special.beta(0.5, 1.0 - 3.0 / p))
    f_lp = k * gap ** -e3
    return f_inf, f_grad, f_lp


def blowup_floor_check(times, linf, grad, lp, p: float, constants: MeasuredConstants,
                       candidates: Sequence[float]) -> dict:
    """Smallest ``observed / floor`` per candidate ``T0`` and per norm (pass when all >= 1)."""
    times = np.asarray(times, dtype=float)
    out = {}
    for T0 in candidates:
        fi, fg, fp = blowup_rate_floor(T0, times, p, constants)
        out[float(T0)] = {"linf": float(np.min(np.asarray(linf) / fi)),
                          "grad": float(np.min(np.asarray(grad) / fg)),
                          "lp": float(np.min(np.asarray(lp) / fp))}
    return out


# ---------------------------------------------------------------------------
# smallness and persistence


def smallness_thresholds(constants: MeasuredConstants) -> tuple[float, float]:
    """``eps1`` for ``‖u0‖^2 ‖u0‖_inf`` and ``eps2`` for ``‖u0‖ ‖grad u0‖``.

    ``eps1`` makes ``phi = 2 ‖u0‖_inf`` a strict supersolution of the
    min-kernel inequality for all times (``432 C''^3 E M < 1``); ``eps2``
    brings the data below ``eps1`` at the end of the gradient window.
    """
    eps1 = 1.0 / (432.0 * constants.c_dprime**3)
    eps2 = math.sqrt(eps1 / (8.0 * math.pi * constants.c_prime * constants.c_grad**2))
    return eps1, eps2


def smallness_values(l2: float, linf: float, grad: float, lp: float, p: float,
                     constants: MeasuredConstants) -> dict:
    eps1, eps2 = smallness_thresholds(constants)
    cp = constants.lp_constant(p)
    k = 4.0 * constants.c_prime * cp * special.beta(0.5, 1.0 - 3.0 / p)
    lp_val = l2 ** (2 * (p - 3)) * lp**p * (2.0 * cp) ** (p - 3) * k**3
    return {
        "energy_linf": (l2**2 * linf, eps1),
        "energy_grad": (l2 * grad, eps2),
        "lp": (lp_val, eps1 ** (p - 3)),
    }


def smallness_global_check(grid: Grid, u0: np.ndarray, constants: MeasuredConstants,
                           p: float = 6.0) -> dict:
    """Pass/fail per smallness criterion, with the value and threshold."""
    vals = smallness_values(fl.lp_norm(grid, u0, 2), fl.lp_norm(grid, u0, math.inf),
                            st._h1(grid, u0), fl.lp_norm(grid, u0, p), p, constants)
    return {k: {"value": float(v), "threshold": float(th), "passed": bool(v < th)}
            for k, (v, th) in vals.items()}


def gradient_persistence_check(times, linf, grad, i1: int, i2: int,
                               constants: MeasuredConstants) -> dict:
    """Check the two bounds after ``t1`` on the window ``t2 - t1 <= c / ‖grad u(t1)‖^4``.

    Uses ``‖u(t2)‖_inf <= 2 c_grad ‖grad u(t1)‖ (t2 - t1)^{-1/4}`` and
    ``‖grad u(t2)‖ <= 2 ‖grad u(t1)‖``.
    """
    t1, t2 = float(times[i1]), float(times[i2])
    if not t2 > t1:
        raise ValueError("need t1 < t2")
    g1 = float(grad[i1])
    window = constants.c_grad_time / g1**4 if g1 > 0 else math.inf
    if t2 - t1 > window:
        return {"status": "skipped", "window": window, "t1": t1, "t2": t2}
    b_inf = 2.0 * constants.c_grad * g1 * (t2 - t1) ** -0.25
    b_grad = 2.0 * g1
    ok = linf[i2] <= b_inf and grad[i2] <= b_grad
    return {"status": "pass" if ok else "fail", "window": window, "t1": t1, "t2": t2,
            "linf_ratio": float(linf[i2] / b_inf) if b_inf > 0 else 0.0,
            "grad_ratio": float(grad[i2] / b_grad) if b_grad > 0 else 0.0}


def gronwall_separation_check(grid: Grid, u: Trajectory, v: Trajectory) -> float:
    """``max_{t1<t2} ‖w(t2)‖^2 / (‖w(t1)‖^2 exp(1/2 int_{t1}^{t2} ‖u‖_inf^2))``, ``w = u - v``.

    The envelope uses the designated ``u`` only, so the ratio is not
    symmetric in ``(u, v)``.
    """
    if len(u.u) != len(v.u):
        raise ValueError("trajectories must share the mesh")
    w2 = np.array([fl.lp_norm(grid, a - b, 2) ** 2 for a, b in zip(u.u, v.u)])
    if w2.max() < 1e-30:
        return 0.0
    cum = np.zeros(len(w2))
    cum[1:] = integrate.cumulative_trapezoid(u.norms("linf") ** 2, x=u.mesh.nodes)
    best = 0.0
    for i in range(len(w2) - 1):
        if w2[i] < 1e-30:
            continue
        r = w2[i + 1:] / (w2[i] * np.exp(0.5 * (cum[i + 1:] - cum[i])))
        best = max(best, float(r.max()))
    return best


# ---------------------------------------------------------------------------
# Leray-regularised system


@dataclass
class FlowTrace:
    t: np.ndarray
    l2: np.ndarray
    h1semi: np.ndarray
    linf: np.ndarray
    l4: np.ndarray
    l6: np.ndarray
    dissipation_cum: np.ndarray
    energy_defect: np.ndarray

    COLUMNS = ("t", "l2", "h1semi", "linf", "l4", "l6", "dissipation_cum", "energy_defect")

    def rows(self):
        cols = [getattr(self, c) for c in self.COLUMNS]
        return [tuple(float(c[i]) for c in cols) for i in range(len(self.t))]

    def at(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t - t)))
        if not math.isclose(self.t[i], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"t={t} is not a node")
        return i


@dataclass
class LerayRun:
    eps: float
    grid: Grid
    mesh: TimeMesh
    trace: FlowTrace
    checkpoints: dict
    final: np.ndarray
    pressure: np.ndarray
    cancellation: np.ndarray
    tail: np.ndarray
    initial: np.ndarray | None = None
    majorant: np.ndarray | None = None
    resolved: bool = True

    def max_energy_defect(self) -> float:
        return float(np.abs(self.trace.energy_defect).max())


def _etdrk4_coeffs(a: np.ndarray, h: float):
    z = -a * h
    e, p1, p2, p3 = st.phi_functions(z, 3)
    e2, q1 = st.phi_functions(z / 2.0, 1)
    f1 = h * (p1 - 3.0 * p2 + 4.0 * p3)
    f2 = h * (p2 - 2.0 * p3)
    f3 = h * (4.0 * p3 - p2)
    return e, e2, 0.5 * h * q1, f1, f2, f3


def leray_nonlinearity_hat(grid: Grid, uh: np.ndarray, mhat: np.ndarray) -> np.ndarray:
    """``-P div((J_eps u) (x) u)`` in Fourier space, dealiased."""
    u = ifft(uh)
    return st.advective_forcing_hat(grid, ifft(uh * mhat), u)


def leray_solve(grid: Grid, u0: np.ndarray, eps: float, mesh: TimeMesh,
                checkpoints: Sequence[float] = (), tail_limit: float = 1e-3) -> LerayRun:
    """Advance the regularised system and record a FlowTrace at every node.

    The cumulative dissipation is the exact integral of the per-mode
    exponential interpolant with the nonlinearity interpolated linearly
    between nodes. Runs whose energy fraction in ``max_i |k_i| >= N/4``
    exceeds ``tail_limit`` at any node are flagged unresolved.
    """
    if not eps < grid.L / 4:
        raise ValueError("need eps < L/4")
    st._require_solenoidal(grid, u0, "initial data")
    mhat = fl.mollifier_hat(grid, eps)
    a = 4.0 * math.pi**2 * grid.xi2
    scale = grid.cell_volume / grid.N**3
    t = mesh.nodes
    n = len(t)
    cols = {c: np.zeros(n) for c in FlowTrace.COLUMNS}
    pressure, cancel, tail = np.zeros(n), np.zeros(n), np.zeros(n)
    want = {i: float(t[i]) for i in range(n) for c in checkpoints
            if math.isclose(t[i], c, rel_tol=1e-9, abs_tol=1e-12)}
    if len(want) != len(set(checkpoints)):
        raise ValueError("checkpoint times must be mesh nodes")
    saved = {}

    uh = fft(u0)
    N0 = leray_nonlinearity_hat(grid, uh, mhat)

    def record(i, uh, Nh):
        u = ifft(uh)
        cols["t"][i] = t[i]
        cols["l2"][i] = fl.lp_norm(grid, u, 2)
        cols["h1semi"][i] = st._h1(grid, u)
        cols["linf"][i] = fl.lp_norm(grid, u, math.inf)
        cols["l4"][i] = fl.lp_norm(grid, u, 4)
        cols["l6"][i] = fl.lp_norm(grid, u, 6)
        pressure[i] = fl.lp_norm(grid, st.stokes_pressure_advective(grid, ifft(uh * mhat), u), 2)
        denom = cols["l2"][i] * cols["h1semi"][i] * cols["linf"][i]
        work = scale * float(np.sum(np.conj(uh) * Nh).real)
        cancel[i] = abs(work) / denom if denom > 0 else 0.0
        tail[i] = fl.resolution_tail(grid, u)
        if i in want:
            saved[want[i]] = u
        return u

    record(0, uh, N0)
    cache = {}
    u = u0
    for i in range(n - 1):
        h = t[i + 1] - t[i]
        key = round(h, 15)
        if key not in cache:
            cache = {key: _etdrk4_coeffs(a, h)}
        E, E2, Q, f1, f2, f3 = cache[key]
        Nu = N0
        ah = E2 * uh + Q * Nu
        Na = leray_nonlinearity_hat(grid, ah, mhat)
        bh = E2 * uh + Q * Na
        Nb = leray_nonlinearity_hat(grid, bh, mhat)
        ch = E2 * ah + Q * (2.0 * Nb - Nu)
        Nc = leray_nonlinearity_hat(grid, ch, mhat)
        new = E * uh + f1 * Nu + 2.0 * f2 * (Na + Nb) + f3 * Nc
        N1 = leray_nonlinearity_hat(grid, new, mhat)
        i2, _ = st.step_integrals(a, uh, Nu, N1, h)
        cols["dissipation_cum"][i + 1] = cols["dissipation_cum"][i] + 2.0 * scale * np.sum(a * i2)
        uh, N0 = new, N1
        u = record(i + 1, uh, N0)

    e = cols["l2"] ** 2
    cols["energy_defect"] = (e + cols["dissipation_cum"] - e[0]) / (e[0] if e[0] > 0 else 1.0)
    trace = FlowTrace(**cols)
    resolved = bool(tail.max() <= tail_limit)
    return LerayRun(eps, grid, mesh, trace, saved, u, pressure, cancel, tail,
                    initial=np.array(u0, dtype=float, copy=True), resolved=resolved)


def volterra_majorant(eps: float, u0_norms: tuple[float, float], t, constants: MeasuredConstants,
                      c_moll: float | None = None) -> np.ndarray:
    """Solution of ``phi = C' C_m eps^{-3/2} ‖u0‖ int phi / sqrt(t-s) + ‖u0‖_inf``.

    ``u0_norms`` is ``(‖u0‖, ‖u0‖_inf)``. Evaluated in closed form.
    """
    l2, linf = u0_norms
    cm = constants.moll_constant(eps) if c_moll is None else c_moll
    C = constants.c_prime * cm * eps**-1.5 * l2
    with np.errstate(over="ignore"):
        return volterra_closed_form(C, linf, np.asarray(t, dtype=float))


def attach_majorant(run: LerayRun, constants: MeasuredConstants) -> np.ndarray:
    tr = run.trace
    run.majorant = volterra_majorant(run.eps, (tr.l2[0], tr.linf[0]), tr.t, constants)
    return run.majorant


def pressure_cubed_bound_check(run: LerayRun) -> tuple[float, float]:
    """Max of ``‖p‖ / (‖grad u‖^{3/2} ‖u‖^{1/2})`` and of ``‖u‖_4^2`` over the same scale."""
    tr = run.trace
    den = tr.h1semi**1.5 * tr.l2**0.5
    ok = den > 0
    if not np.any(ok):
        return 0.0, 0.0
    return float(np.max(run.pressure[ok] / den[ok])), float(np.max(tr.l4[ok] ** 2 / den[ok]))
