"""Abel-kernel Volterra equations and integral-inequality comparisons.

The model problem is

    phi(x) = C int_0^x phi(y) / sqrt(x - y) dy + D,

whose solution is ``D exp(z^2) (1 + erf z)`` with ``z = C sqrt(pi x)``. The
marching solver uses product integration: the kernel is integrated exactly
against the piecewise-linear interpolant of the unknown.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np
from scipy import integrate, special


# ---------------------------------------------------------------------------
# product integration


def product_weight_row(t, i: int, alpha: float) -> np.ndarray:
    """Row ``i`` of :func:`product_weights` (length ``i + 1``)."""
    t = np.asarray(t, dtype=float)
    row = np.zeros(i + 1)
    if i == 0:
        return row
    b1, b2 = 1.0 - alpha, 2.0 - alpha
    A = t[i] - t[1:i + 1]
    B = t[i] - t[:i]
    d = t[1:i + 1] - t[:i]
    I0 = (B**b1 - A**b1) / b1
    I1 = (B**b2 - A**b2) / b2
    row[:i] += (I1 - A * I0) / d
    row[1:] += (B * I0 - I1) / d
    return row


def product_weights(t, alpha: float) -> np.ndarray:
    """Lower-triangular ``W`` with ``W[n] @ f = int_0^{t_n} (t_n - s)^{-alpha} f_lin(s) ds``.

    ``f_lin`` is the piecewise-linear interpolant of the node values, so the
    rule is exact for constants and for ``s`` on any mesh.
    """
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    t = np.asarray(t, dtype=float)
    n = t.size
    W = np.zeros((n, n))
    for i in range(1, n):
        W[i, :i + 1] = product_weight_row(t, i, alpha)
    return W


@dataclass(frozen=True)
class PowerKernel:
    """Kernel ``g(s) = coeff * s^{-alpha}``."""

    coeff: float
    alpha: float = 0.5

    def __call__(self, s):
        return self.coeff * np.asarray(s, dtype=float) ** (-self.alpha)

    def weights(self, t) -> np.ndarray:
        return self.coeff * product_weights(t, self.alpha)


# ---------------------------------------------------------------------------
# Volterra equation


@dataclass(frozen=True)
class VolterraProblem:
    C: float
    D: float
    x_max: float = 1.0
    M: int = 2048
    grading: float = 2.0
    alpha: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.C) and math.isfinite(self.D)):
            raise ValueError("C and D must be finite")
        if self.C < 0 or self.D < 0:
            raise ValueError("C and D must be non-negative")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if self.alpha != 0.5:
            raise ValueError("only the Abel exponent 1/2 is supported")

    def mesh(self) -> np.ndarray:
        return self.x_max * (np.arange(self.M + 1) / self.M) ** self.grading


def _volterra_march(x: np.ndarray, C: float, D: float, alpha: float) -> np.ndarray:
    phi = np.empty_like(x)
    phi[0] = D
    for n in range(1, x.size):
        w = C * product_weight_row(x, n, alpha)
        phi[n] = (D + w[:n] @ phi[:n]) / (1.0 - w[n])
    return phi


def volterra_solve(problem: VolterraProblem, extrapolate: bool = True):
    """March the product-integration scheme; returns ``(x, phi)``.

    The scheme is second order on the graded mesh, so by default it is run on
    ``M`` and ``2M`` cells and the two are combined by Richardson
    extrapolation on the coarse nodes.
    """
    x = problem.mesh()
    coarse = _volterra_march(x, problem.C, problem.D, problem.alpha)
    if not extrapolate:
        return x, coarse
    fine_problem = VolterraProblem(problem.C, problem.D, problem.x_max, 2 * problem.M,
                                   problem.grading, problem.alpha)
    fine = _volterra_march(fine_problem.mesh(), problem.C, problem.D, problem.alpha)[::2]
    return x, fine + (fine - coarse) / 3.0


def volterra_halving_change(problem: VolterraProblem) -> float:
    """Max relative change of the solution when the mesh is refined once."""
    x, a = volterra_solve(problem)
    finer = VolterraProblem(problem.C, problem.D, problem.x_max, 2 * problem.M,
                            problem.grading, problem.alpha)
    _, b = volterra_solve(finer)
    return float(np.max(np.abs(b[::2] - a) / np.abs(a).clip(min=np.finfo(float).tiny)))


def volterra_closed_form(C: float, D: float, x) -> np.ndarray:
    z = C * np.sqrt(math.pi * np.asarray(x, dtype=float))
    return D * special.erfcx(-z)


def volterra_series(C: float, D: float, x: float, k_max: int = 120, tol: float = 1e-8) -> float:
    """Partial sum ``D sum_{k <= k_max} z^k / Gamma(k/2 + 1)``, ``z = C sqrt(pi x)``.

    Raises ``ValueError`` when the ratio-test bound on the remainder exceeds
    ``tol`` relative to the partial sum.
    """
    if k_max < 20:
        raise ValueError("k_max must be at least 20")
    z = C * math.sqrt(math.pi * x)
    if z == 0.0:
        return float(D)
    k = np.arange(k_max + 1)
    logt = k * math.log(z) - special.gammaln(k / 2.0 + 1.0)
    terms = np.exp(logt)
    total = terms.sum()
    # successive ratios z Gamma(k/2+1)/Gamma(k/2+3/2) decrease in k
    nxt = math.exp((k_max + 1) * math.log(z) - special.gammaln((k_max + 1) / 2.0 + 1.0))
    r = z * math.exp(special.gammaln((k_max + 1) / 2.0 + 1.0) - special.gammaln((k_max + 2) / 2.0 + 1.0))
    if r >= 1.0:
        raise ValueError("series not yet in its convergent tail at k_max")
    remainder = nxt / (1.0 - r)
    if remainder > tol * total:
        raise ValueError(f"remainder bound {remainder:.2e} exceeds tolerance at k_max={k_max}")
    return float(D * total)


def successive_approximations(problem: VolterraProblem, x: np.ndarray | None = None,
                              tol: float = 1e-8, max_iter: int = 500):
    """Iterate ``phi_{k+1} = D + C K phi_k`` from ``phi_0 = D``.

    Returns ``(x, phi, diffs)`` where ``diffs[k]`` is the sup difference of
    consecutive iterates.
    """
    x = problem.mesh() if x is None else np.asarray(x, dtype=float)
    W = problem.C * product_weights(x, problem.alpha)
    phi = np.full_like(x, problem.D)
    diffs = []
    for _ in range(max_iter):
        new = problem.D + W @ phi
        diffs.append(float(np.abs(new - phi).max()))
        phi = new
        if diffs[-1] <= tol:
            break
    return x, phi, diffs


def predicted_iterations(C: float, D: float, x_max: float, tol: float = 1e-8) -> int:
    """Smallest k with ``D z^k / Gamma(k/2 + 1) <= tol``, ``z = C sqrt(pi x_max)``.

    The k-th successive-approximation increment is exactly the k-th series term.
    """
    z = C * math.sqrt(math.pi * x_max)
    if z == 0 or D == 0:
        return 1
    k = 1
    while math.log(D) + k * math.log(z) - special.gammaln(k / 2.0 + 1.0) > math.log(tol):
        k += 1
    return k


# ---------------------------------------------------------------------------
# comparison verdicts


@dataclass
class Verdict:
    status: str  # "pass", "fail" or "not_applicable"
    margin: float
    detail: str = ""
    t: np.ndarray | None = field(default=None, repr=False)
    profile: np.ndarray | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_record(self) -> dict:
        return {"status": self.status, "margin": self.margin, "detail": self.detail}

    def profile_rows(self):
        if self.t is None:
            return []
        return [(float(a), float(b)) for a, b in zip(self.t, self.profile)]


def _scale(*arrs) -> float:
    return max(1.0, *(float(np.max(np.abs(a))) for a in arrs))


def quadratic_compare(t, f, phi, g: PowerKernel, a, b, tol: float = 1e-8) -> Verdict:
    """Check ``f <= phi`` given the sub- and super-inequalities with kernel ``g``.

    Both hypotheses are verified on the mesh first (product integration of the
    piecewise-linear interpolants of ``f^2`` and ``phi^2``); if either fails
    the verdict is ``not_applicable``.
    """
    t = np.asarray(t, dtype=float)
    f, phi = np.asarray(f, float), np.asarray(phi, float)
    a = np.broadcast_to(np.asarray(a, float), t.shape)
    b = np.broadcast_to(np.asarray(b, float), t.shape)
    s = tol * _scale(f, phi, a, b)
    W = g.weights(t)
    if np.any(a > b + s):
        return Verdict("not_applicable", float("nan"), "a <= b violated")
    if np.any(f > W @ f**2 + a + s):
        return Verdict("not_applicable", float("nan"), "f does not satisfy the sub-inequality")
    sup = phi - W @ phi**2 - b
    if np.any(sup < -s):
        return Verdict("not_applicable", float("nan"), "phi does not satisfy the super-inequality")
    margin = phi - f
    status = "pass" if np.all(margin >= -s) else "fail"
    return Verdict(status, float(margin.min()), "", t, margin)


@dataclass(frozen=True)
class ConstantMajorant:
    c: float

    def __call__(self, t):
        return np.full(np.shape(t), self.c, dtype=float)

    def abel_square(self, t, coeff: float):
        """``coeff int_0^t phi(s)^2 (t-s)^{-1/2} ds`` in closed form."""
        return 2.0 * coeff * self.c**2 * np.sqrt(np.asarray(t, float))


@dataclass(frozen=True)
class PowerMajorant:
    """``phi(t) = c t^{-beta}`` with ``0 <= beta < 1/2``."""

    c: float
    beta: float

    def __call__(self, t):
        t = np.asarray(t, float)
        with np.errstate(divide="ignore"):
            return self.c * t ** (-self.beta)

    def abel_square(self, t, coeff: float):
        t = np.asarray(t, float)
        beta_fn = special.beta(0.5, 1.0 - 2.0 * self.beta)
        return coeff * self.c**2 * beta_fn * t ** (0.5 - 2.0 * self.beta)


def majorant_preset(name: str, **kw):
    """Named closed-form majorants: ``constant``, ``grad`` (c t^{-1/4}), ``lp`` (c t^{-3/(2p)})."""
    if name == "constant":
        return ConstantMajorant(kw["c"])
    if name == "grad":
        return PowerMajorant(kw["c"], 0.25)
    if name == "lp":
        p = kw["p"]
        if p <= 3:
            raise ValueError("p must exceed 3")
        return PowerMajorant(kw["c"], 1.5 / p)
    raise ValueError(f"unknown majorant preset {name!r}")


def supersolution_verify(phi, g: PowerKernel, b, t) -> np.ndarray:
    """Margin ``phi(t) - int_0^t g(t-s) phi(s)^2 ds - b(t)`` at the nodes.

    ``phi`` is a closed-form majorant (``ConstantMajorant``/``PowerMajorant``)
    or an array sampled on ``t``; ``b`` is a callable or array.
    """
    t = np.asarray(t, dtype=float)
    bv = b(t) if callable(b) else np.broadcast_to(np.asarray(b, float), t.shape)
    if isinstance(phi, (ConstantMajorant, PowerMajorant)):
        if g.alpha != 0.5:
            raise ValueError("closed-form majorants are tabulated for the Abel kernel")
        pv = phi(t)
        integral = phi.abel_square(t, g.coeff)
    else:
        pv = np.asarray(phi, dtype=float)
        integral = g.weights(t) @ pv**2
    return pv - integral - bv


def first_violation(t, margin, tol: float = 1e-12):
    """Mesh cell ``(t_j, t_{j+1})`` where the margin first drops below ``-tol``; None if never."""
    bad = np.nonzero(np.asarray(margin) < -tol)[0]
    if bad.size == 0:
        return None
    j = int(bad[0])
    return (float(t[j - 1]) if j > 0 else 0.0, float(t[j]))


def linear_solve(t, g: PowerKernel, h, b) -> np.ndarray:
    """Solve ``phi = int g(t-s) h(s) phi(s) ds + b`` by implicit product-integration marching."""
    t = np.asarray(t, dtype=float)
    h = np.broadcast_to(np.asarray(h, float), t.shape)
    b = np.broadcast_to(np.asarray(b, float), t.shape)
    W = g.weights(t)
    phi = np.empty_like(t)
    phi[0] = b[0]
    for n in range(1, t.size):
        phi[n] = (b[n] + W[n, :n] @ (h[:n] * phi[:n])) / (1.0 - W[n, n] * h[n])
    return phi


def linear_compare(t, f, g: PowerKernel, h, a, b, tol: float = 1e-8) -> Verdict:
    """Check ``f <= phi`` where ``phi`` solves the linear equation with data ``b``."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, float)
    h = np.broadcast_to(np.asarray(h, float), t.shape)
    a = np.broadcast_to(np.asarray(a, float), t.shape)
    b = np.broadcast_to(np.asarray(b, float), t.shape)
    s = tol * _scale(f, a, b)
    if np.any(a > b + s):
        return Verdict("not_applicable", float("nan"), "a <= b violated")
    W = g.weights(t)
    if np.any(f > W @ (h * f) + a + s):
        return Verdict("not_applicable", float("nan"), "f does not satisfy the sub-inequality")
    phi = linear_solve(t, g, h, b)
    margin = phi - f
    status = "pass" if np.all(margin >= -s * _scale(phi)) else "fail"
    return Verdict(status, float(margin.min()), "", t, margin)


def _min_kernel_integral(t: float, vals: Callable, g: PowerKernel, h: Callable) -> float:
    """``int_0^t min(g(t-s) v(s), h(t-s)) ds`` for an Abel-type ``g``."""
    if t <= 0:
        return 0.0

    def inner(s):
        lag = t - s
        if lag <= 0:
            return vals(s)
        return min(vals(s), h(lag) * lag**g.alpha / g.coeff)

    # g(t-s) min(v, h/g) with the algebraic endpoint weight (t - s)^{-alpha}
    val, _ = integrate.quad(inner, 0.0, t, weight="alg", wvar=(0.0, -g.alpha), limit=200)
    return g.coeff * val


def crossing_time(g: PowerKernel, h: Callable, C_star: float, s_max: float = 1e3, n: int = 4000):
    """Detect ``tau`` with ``h >= C*^2 g`` before and ``h <= C*^2 g`` after; None if absent."""
    s = np.geomspace(1e-8, s_max, n)
    d = h(s) - C_star**2 * g(s)
    above = d >= 0
    if not above[0]:
        return None
    idx = np.nonzero(~above)[0]
    if idx.size == 0:
        return None
    k = int(idx[0])
    if np.any(above[k:]):
        return None
    return float(np.sqrt(s[k - 1] * s[k]))


def min_kernel_compare(t, f, g: PowerKernel, h: Callable, a: float, b: float, C_star: float,
                       tol: float = 1e-8) -> Verdict:
    """Check ``f <= C*`` under the min-kernel inequality."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if a > b:
        return Verdict("not_applicable", float("nan"), "a <= b violated")
    tau = crossing_time(g, h, C_star)
    if tau is None:
        return Verdict("not_applicable", float("nan"), "crossing structure not detected")
    const = lambda s: C_star**2
    gate = np.array([C_star - _min_kernel_integral(tk, const, g, h) - b for tk in t])
    if np.any(gate <= 0):
        return Verdict("not_applicable", float("nan"), "strict constant inequality fails")
    f2 = lambda s: float(np.interp(s, t, f)) ** 2
    rhs = np.array([_min_kernel_integral(tk, f2, g, h) + a for tk in t])
    if np.any(f > rhs + tol * _scale(f, rhs)):
        return Verdict("not_applicable", float("nan"), "f does not satisfy the sub-inequality")
    margin = C_star - f
    status = "pass" if np.all(margin >= -tol * _scale(f)) else "fail"
    return Verdict(status, float(margin.min()), f"tau={tau:.6g}", t, margin)


def min_kernel_total(A: float, B: float) -> float:
    """``int_0^inf min(A / sqrt(s), B / s^2) ds = 3 A^{2/3} B^{1/3}``."""
    if A <= 0 or B <= 0:
        return 0.0
    return 3.0 * A ** (2.0 / 3.0) * B ** (1.0 / 3.0)


def min_kernel_cumulative(A: float, B: float, t) -> np.ndarray:
    """``int_0^t min(A / sqrt(s), B / s^2) ds``."""
    t = np.asarray(t, dtype=float)
    if A <= 0:
        return np.zeros_like(t)
    if B <= 0:
        return np.zeros_like(t)
    ts = (B / A) ** (2.0 / 3.0)
    early = 2.0 * A * np.sqrt(np.minimum(t, ts))
    late = np.where(t > ts, B * (1.0 / ts - 1.0 / np.maximum(t, ts)), 0.0)
    return early + late


def problem_record(problem: VolterraProblem) -> dict:
    return asdict(problem)
