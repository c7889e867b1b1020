"""Stokes initial-value problem through the Duhamel representation.

Each Fourier mode obeys ``d/dt u_hat = -a u_hat + P F_hat`` with
``a = 4 pi^2 |xi|^2``. The linear part is propagated exactly and the forcing
is interpolated linearly in time between mesh nodes, which gives the
second-order exponential integrator

    u_{n+1} = E u_n + (w1 - w2) P F_n + w2 P F_{n+1},
    E = exp(-a h),  w1 = h phi_1(-a h),  w2 = h phi_2(-a h).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import fields as fl
from . import kernels
from .analysis import product_weights
from .fields import Grid, fft, ifft

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# time meshes and weights


@dataclass(frozen=True)
class TimeMesh:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if t[0] != 0.0:
            raise ValueError("mesh must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T: float, M: int) -> "TimeMesh":
        if not T > 0 or M < 1:
            raise ValueError("need T > 0 and M >= 1")
        return cls(np.linspace(0.0, T, M + 1))

    @classmethod
    def graded(cls, T: float, M: int, power: float = 2.0) -> "TimeMesh":
        """Nodes ``T (j/M)^power``, clustered near zero."""
        return cls(T * (np.arange(M + 1) / M) ** power)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def M(self) -> int:
        return self.nodes.size - 1

    def __len__(self):
        return self.nodes.size


def duhamel_weights(mesh: TimeMesh | np.ndarray, alpha: float) -> np.ndarray:
    """Product-integration weights for ``int_0^{t_n} (t_n - s)^{-alpha} f(s) ds``.

    Returns a lower-triangular matrix ``W`` with ``W[n] @ f`` exact whenever
    ``f`` is piecewise linear on the mesh.
    """
    t = mesh.nodes if isinstance(mesh, TimeMesh) else mesh
    return product_weights(t, alpha)


def time_integral(mesh: TimeMesh, values: np.ndarray) -> np.ndarray:
    """Cumulative ``int_0^{t_n} f ds``: Simpson on uniform even meshes, else trapezoid."""
    values = np.asarray(values, dtype=float)
    t = mesh.nodes
    out = np.zeros_like(values)
    uniform = np.allclose(np.diff(t), t[1] - t[0], rtol=1e-12, atol=0.0)
    if uniform and mesh.M >= 2:
        out[1:] = integrate.cumulative_simpson(values, x=t)
    else:
        out[1:] = integrate.cumulative_trapezoid(values, x=t)
    return out


def phi_functions(z: np.ndarray, kmax: int = 3) -> list[np.ndarray]:
    """``phi_0 .. phi_kmax`` of the exponential integrators, stable near z = 0."""
    z = np.asarray(z, dtype=float)
    out = [np.exp(z)]
    small = np.abs(z) < 1.0
    zs = z[small]
    for k in range(1, kmax + 1):
        val = np.empty_like(z)
        acc = np.zeros_like(zs)
        term = np.full_like(zs, 1.0 / math.factorial(k))
        for n in range(20):
            acc += term
            term = term * zs / (n + k + 1)
        val[small] = acc
        zb = z[~small]
        val[~small] = (out[k - 1][~small] - 1.0 / math.factorial(k - 1)) / zb
        out.append(val)
    return out


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    grid: Grid
    mesh: TimeMesh
    u: list = field(default_factory=list)
    p: list | None = None
    forcing: list | None = None

    def norms(self, which: str = "l2") -> np.ndarray:
        g = self.grid
        if which == "l2":
            return np.array([fl.lp_norm(g, v, 2) for v in self.u])
        if which == "linf":
            return np.array([fl.lp_norm(g, v, math.inf) for v in self.u])
        if which == "h1":
            return np.array([_h1(g, v) for v in self.u])
        raise ValueError(which)


def _h1(grid: Grid, v: np.ndarray) -> float:
    vh = fft(v)
    return float(math.sqrt(grid.cell_volume / grid.N**3
                           * np.sum(np.abs(vh) ** 2 * TWO_PI**2 * grid.xi2)))


def heat_evolve(grid: Grid, u0: np.ndarray, t: float) -> np.ndarray:
    """``Phi(t) * u0`` as the spectral multiplier ``exp(-4 pi^2 t |xi|^2)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return np.array(u0, dtype=float, copy=True)
    return ifft(fft(u0) * fl.heat_hat(grid, t))


def _require_solenoidal(grid: Grid, u: np.ndarray, what: str):
    if not np.any(u):
        return
    if not fl.is_solenoidal(grid, u):
        raise ValueError(f"{what} must be divergence free")


def _as_sampler(F, mesh: TimeMesh) -> Callable[[int], np.ndarray | None]:
    if F is None:
        return lambda j: None
    if callable(F):
        return lambda j: F(float(mesh.nodes[j]))
    seq = F
    if len(seq) != len(mesh):
        raise ValueError("forcing must be sampled at every mesh node")
    return lambda j: seq[j]


def _march(grid: Grid, u0: np.ndarray, forcing_hat: Callable[[int], np.ndarray | None],
           mesh: TimeMesh, keep: Sequence[int] | None = None):
    """Exponential-integrator march; ``forcing_hat(j)`` returns the projected P F_hat at node j."""
    a = 4.0 * math.pi**2 * grid.xi2
    uh = fft(u0)
    out = [np.array(u0, dtype=float, copy=True)]
    Fn = forcing_hat(0)
    cache = {}
    t = mesh.nodes
    for n in range(mesh.M):
        h = t[n + 1] - t[n]
        key = round(h, 15)
        if key not in cache:
            e, p1, p2 = phi_functions(-a * h, 2)
            cache = {key: (e, h * p1, h * p2)}
        E, w1, w2 = cache[key]
        Fn1 = forcing_hat(n + 1)
        uh = E * uh
        if Fn is not None:
            uh = uh + (w1 - w2) * Fn
        if Fn1 is not None:
            uh = uh + w2 * Fn1
        Fn = Fn1
        if keep is None or (n + 1) in keep:
            out.append(ifft(uh))
    return out


def stokes_solve_general(grid: Grid, u0: np.ndarray, F, mesh: TimeMesh,
                         with_pressure: bool = False) -> Trajectory:
    """Solve the forced Stokes system for general forcing ``F``.

    ``F`` is ``None``, a sequence of fields at the mesh nodes, or a callable
    ``F(t)``. The forcing is projected onto divergence-free fields per mode;
    the discarded gradient part is the pressure.
    """
    _require_solenoidal(grid, u0, "initial data")
    sample = _as_sampler(F, mesh)

    def fh(j):
        f = sample(j)
        return None if f is None else fl.project_hat(grid, fft(f))

    us = _march(grid, u0, fh, mesh)
    traj = Trajectory(grid, mesh, us)
    if F is not None:
        traj.forcing = [sample(j) for j in range(len(mesh))]
        if with_pressure:
            traj.p = [stokes_pressure_general(grid, f) for f in traj.forcing]
    return traj


def stokes_pressure_general(grid: Grid, F: np.ndarray) -> np.ndarray:
    """``p = -(-Delta)^{-1} div F``."""
    return ifft(-fl.inv_laplacian_hat(grid, fl.divergence_hat(grid, fft(F))))


def advective_forcing_hat(grid: Grid, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Spectral ``-P div(Y (x) Z)`` with 2/3-rule dealiased products."""
    mask = grid.dealias_mask
    Yt = ifft(fft(Y) * mask)
    Zt = Yt if Z is Y else ifft(fft(Z) * mask)
    ik = 1j * TWO_PI * grid.xi_odd
    out = np.zeros((3,) + Y.shape[1:], dtype=complex)
    for i in range(3):
        for k in range(3):
            out[i] += ik[k] * fft(Yt[k] * Zt[i])
    return -fl.project_hat(grid, out * mask)


def advective_forcing(grid: Grid, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return ifft(advective_forcing_hat(grid, Y, Z))


def convective_term(grid: Grid, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """``(Y . grad) Z`` from dealiased pointwise products (not projected)."""
    mask = grid.dealias_mask
    Yt = ifft(fft(Y) * mask)
    gZ = fl.gradient(grid, ifft(fft(Z) * mask))
    out = np.einsum("kxyz,ikxyz->ixyz", Yt, gZ)
    return ifft(fft(out) * mask)


def stokes_solve_advective(grid: Grid, u0: np.ndarray, Y, Z, mesh: TimeMesh,
                           with_pressure: bool = False) -> Trajectory:
    """Stokes solve with forcing ``-(Y . grad) Z`` written as ``-P div(Y (x) Z)``.

    ``Y`` and ``Z`` are sequences of fields at the mesh nodes (or ``None`` for
    zero forcing). ``Y`` must be divergence free at every node.
    """
    _require_solenoidal(grid, u0, "initial data")
    if Y is None or Z is None:
        return stokes_solve_general(grid, u0, None, mesh)
    if len(Y) != len(mesh) or len(Z) != len(mesh):
        raise ValueError("Y and Z must be sampled at every mesh node")
    for y in Y:
        _require_solenoidal(grid, y, "advecting field Y")
    us = _march(grid, u0, lambda j: advective_forcing_hat(grid, Y[j], Z[j]), mesh)
    traj = Trajectory(grid, mesh, us)
    traj.forcing = [advective_forcing(grid, Y[j], Z[j]) for j in range(len(mesh))]
    if with_pressure:
        traj.p = [stokes_pressure_advective(grid, Y[j], Z[j]) for j in range(len(mesh))]
    return traj


def stokes_pressure_advective(grid: Grid, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Pressure with ``-Delta p = div div (Y (x) Z)``, i.e. ``-sum_ik R_iR_k (Y_i Z_k)``."""
    mask = grid.dealias_mask
    Yt = ifft(fft(Y) * mask)
    Zt = ifft(fft(Z) * mask)
    ph = np.zeros(Y.shape[1:], dtype=complex)
    for i in range(3):
        for k in range(3):
            ph -= fl.riesz_dd_hat(grid, fft(Yt[i] * Zt[k]) * mask, i, k)
    return ifft(ph)


# ---------------------------------------------------------------------------
# ledgers and bounds


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def step_integrals(a: np.ndarray, u0h: np.ndarray, f0: np.ndarray, f1: np.ndarray, h: float):
    """Per-mode ``int_0^h |u|^2`` and ``int_0^h Re(conj(u) f)`` over one step.

    ``u`` is the exact solution of ``u' = -a u + f`` with ``u(0) = u0h`` and
    ``f`` linear from ``f0`` to ``f1``, i.e. the interpolant implied by the
    exponential integrator. Moderate ``a h`` uses 8-point Gauss-Legendre on
    the phi-function representation; stiff modes use the closed form
    ``u = A exp(-a tau) + B + C tau``. Inputs broadcast over a leading
    component axis; the outputs are summed over it.
    """
    stiff = a * h > 0.5
    e2 = np.zeros(a.shape)
    wk = np.zeros(a.shape)
    soft = ~stiff
    if np.any(soft):
        av, c, g0, g1 = a[soft], u0h[:, soft], f0[:, soft], f1[:, soft]
        d = g1 - g0
        for x, w in zip(_GL_X, _GL_W):
            tau = x * h
            E, p1, p2 = phi_functions(-av * tau, 2)
            u = E * c + tau * p1 * g0 + tau * tau / h * p2 * d
            f = g0 + x * d
            e2[soft] += w * h * np.sum(np.abs(u) ** 2, axis=0)
            wk[soft] += w * h * np.sum((np.conj(u) * f).real, axis=0)
    if np.any(stiff):
        av, c, g0, g1 = a[stiff], u0h[:, stiff], f0[:, stiff], f1[:, stiff]
        sl = (g1 - g0) / h
        C = sl / av
        B = (g0 - C) / av
        A = c - B
        ea = np.exp(-av * h)
        E0 = (1.0 - ea) / av
        E1 = (1.0 - ea * (1.0 + av * h)) / av**2
        Ee = (1.0 - ea * ea) / (2.0 * av)
        aa = (np.abs(A) ** 2 * Ee
              + np.abs(B) ** 2 * h + (np.conj(B) * C).real * h * h + np.abs(C) ** 2 * h**3 / 3.0
              + 2.0 * (np.conj(A) * (B * E0 + C * E1)).real)
        ww = (np.conj(A) * (g0 * E0 + sl * E1) + np.conj(B) * g0 * h
              + (np.conj(B) * sl + np.conj(C) * g0) * h * h / 2.0 + np.conj(C) * sl * h**3 / 3.0).real
        e2[stiff] = np.sum(aa, axis=0)
        wk[stiff] = np.sum(ww, axis=0)
    return e2, wk


def energy_ledger(grid: Grid, mesh: TimeMesh, us, forcing=None):
    """Energies, cumulative ``2 int ||grad u||^2`` and cumulative ``2 int <u, F>``.

    The time integrals are taken exactly for the per-mode exponential
    interpolant between nodes with linearly interpolated forcing, so stiff
    modes do not spoil the quadrature.
    """
    a = 4.0 * math.pi**2 * grid.xi2
    scale = grid.cell_volume / grid.N**3
    e = np.array([fl.lp_norm(grid, v, 2) ** 2 for v in us])
    diss = np.zeros(len(us))
    work = np.zeros(len(us))
    uh_prev = fft(us[0])
    fh_prev = None if forcing is None else fl.project_hat(grid, fft(forcing[0]))
    zero = np.zeros_like(uh_prev)
    t = mesh.nodes
    for n in range(len(us) - 1):
        fh_next = None if forcing is None else fl.project_hat(grid, fft(forcing[n + 1]))
        i2, iw = step_integrals(a, uh_prev, zero if fh_prev is None else fh_prev,
                                zero if fh_next is None else fh_next, t[n + 1] - t[n])
        diss[n + 1] = diss[n] + 2.0 * scale * np.sum(a * i2)
        work[n + 1] = work[n] + 2.0 * scale * np.sum(iw)
        uh_prev, fh_prev = fft(us[n + 1]), fh_next
    return e, diss, work


def energy_dissipation_check(traj: Trajectory, F=None) -> float:
    """Max relative defect of the energy dissipation equality over the nodes.

    Without ``F`` the forcing is the node-sampled forcing the solver used. A
    callable ``F(t)`` is the true (continuous) forcing: its deviation from the
    linear interpolant enters the work integral through 3-point Gauss rules
    per step, so the defect then measures the integrator's time error.
    Normalised by ``||u0||^2``, or by ``max_t ||u(t)||^2`` when ``u0 = 0``.
    """
    g, mesh = traj.grid, traj.mesh
    forcing = traj.forcing
    if F is not None and not callable(F):
        forcing = list(F)
    e, diss, work = energy_ledger(g, mesh, traj.u, forcing)
    if callable(F):
        work = work + 2.0 * _interpolation_work(g, mesh, traj.u, F)
    defect = e - e[0] + diss - work
    scale = e[0] if e[0] > 0 else e.max()
    if scale == 0:
        return 0.0
    return float(np.abs(defect).max() / scale)


def _interpolation_work(grid: Grid, mesh: TimeMesh, us, F) -> np.ndarray:
    """Cumulative ``int <u, F - F_lin>`` with u interpolated linearly in time."""
    x, w = np.polynomial.legendre.leggauss(3)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    t = mesh.nodes
    out = np.zeros(len(us))
    F0 = F(float(t[0]))
    for n in range(len(us) - 1):
        h = t[n + 1] - t[n]
        F1 = F(float(t[n + 1]))
        acc = 0.0
        for xq, wq in zip(x, w):
            u = (1.0 - xq) * us[n] + xq * us[n + 1]
            dF = F(float(t[n] + xq * h)) - ((1.0 - xq) * F0 + xq * F1)
            acc += wq * h * grid.cell_volume * np.sum(u * dF)
        out[n + 1] = out[n] + acc
        F0 = F1
    return out


def nonlinear_cancellation(grid: Grid, Y: np.ndarray, u: np.ndarray) -> float:
    """``|<u, P div(Y (x) u)>| / (||u|| ||grad u|| ||u||_inf)`` (0 for u = 0)."""
    denom = fl.lp_norm(grid, u, 2) * _h1(grid, u) * fl.lp_norm(grid, u, math.inf)
    if denom == 0:
        return 0.0
    f = advective_forcing(grid, Y, u)
    return float(abs(grid.cell_volume * np.sum(u * f)) / denom)


@dataclass(frozen=True)
class SmoothingConstants:
    """Constants of the L^inf and gradient smoothing bounds, from kernel norms at t = 1."""

    c_linf: float
    c_grad: float

    @classmethod
    def measure(cls) -> "SmoothingConstants":
        t2 = kernels.kernel_time_norm("Oseen", 1.0, 2)
        h2 = kernels.kernel_time_norm("Heat", 1.0, 2)
        g1 = kernels.kernel_time_norm("GradOseen", 1.0, 1)
        heat_grad = 1.0 / math.sqrt(2.0 * math.e)  # sup_xi 2 pi |xi| exp(-4 pi^2 |xi|^2)
        return cls(c_linf=max(t2, h2), c_grad=max(g1, heat_grad))


def smoothing_bound_margins(traj: Trajectory, consts: SmoothingConstants | None = None):
    """Worst ``observed - bound`` for the L^inf and gradient smoothing bounds.

    Both returned values must be non-positive. The time integrals use product
    integration of the piecewise-linear interpolant of ``||F(s)||``.
    """
    consts = consts or SmoothingConstants.measure()
    g, mesh = traj.grid, traj.mesh
    u0n = fl.lp_norm(g, traj.u[0], 2)
    fn = (np.zeros(len(mesh)) if traj.forcing is None
          else np.array([fl.lp_norm(g, f, 2) for f in traj.forcing]))
    W34 = duhamel_weights(mesh, 0.75)
    W12 = duhamel_weights(mesh, 0.5)
    t = mesh.nodes
    worst_inf, worst_grad = -np.inf, -np.inf
    for j in range(1, len(mesh)):
        b_inf = consts.c_linf * (W34[j] @ fn + u0n * t[j] ** -0.75)
        b_grad = consts.c_grad * (W12[j] @ fn + u0n * t[j] ** -0.5)
        worst_inf = max(worst_inf, fl.lp_norm(g, traj.u[j], math.inf) - b_inf)
        worst_grad = max(worst_grad, _h1(g, traj.u[j]) - b_grad)
    return float(worst_inf), float(worst_grad)


def l2_bound_margin(traj: Trajectory) -> float:
    """Worst ``||u(t)|| - (int_0^t ||F|| + ||u0||)`` over the nodes."""
    g, mesh = traj.grid, traj.mesh
    fn = (np.zeros(len(mesh)) if traj.forcing is None
          else np.array([fl.lp_norm(g, f, 2) for f in traj.forcing]))
    bound = time_integral(mesh, fn) + fl.lp_norm(g, traj.u[0], 2)
    return float(np.max(traj.norms("l2") - bound))


def advective_l2_margin(traj: Trajectory, Y, Z, C: float | None = None) -> float:
    """Worst ``||u(t)|| - (C int ||Y||_inf ||Z|| / sqrt(t-s) + ||u0||)``."""
    g, mesh = traj.grid, traj.mesh
    if C is None:
        C = SmoothingConstants.measure().c_grad
    prod = np.array([fl.lp_norm(g, y, math.inf) * fl.lp_norm(g, z, 2) for y, z in zip(Y, Z)])
    bound = C * (duhamel_weights(mesh, 0.5) @ prod) + fl.lp_norm(g, traj.u[0], 2)
    return float(np.max(traj.norms("l2") - bound))


def oseen_convolve_direct(grid: Grid, F: np.ndarray, t: float) -> np.ndarray:
    """``T(t) * F`` by direct node quadrature of sampled Oseen tensors (small grids only)."""
    if grid.N > 16:
        raise ValueError("direct convolution is an O(N^6) oracle; use N <= 16")
    pts = grid.x.reshape(3, -1).T
    src = F.reshape(3, -1).T
    out = np.zeros_like(src)
    for n, x in enumerate(pts):
        T = kernels.oseen_tensor(x - pts, t)
        out[n] = grid.cell_volume * np.einsum("mij,mj->i", T, src)
    return out.T.reshape(F.shape)
