"""Heat kernel, Oseen potential and Oseen tensor in physical and Fourier space.

All kernels are for unit viscosity. Physical-space evaluators accept points of
shape ``(..., 3)`` and broadcast over the leading axes.

The Oseen potential is radial, ``P(x, t) = G(|x|^2 / 4t) / sqrt(t)`` with

    G(w) = kappa * int_0^1 exp(-w s^2) ds,      kappa = 1 / (4 pi^{3/2}),

so every derivative ``G^{(k)}(w) = (-1)^k kappa int_0^1 s^{2k} exp(-w s^2) ds``
is a positive integral without cancellation. The Cartesian derivative tensors
are assembled from ``A_k = G^{(k)} / 2^k``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import integrate, special

KAPPA = 1.0 / (4.0 * math.pi**1.5)
MAX_ORDER = 2
_TAYLOR_RADIUS = 1e-3  # |x|/sqrt(t) below which G^{(k)} uses its power series


class KernelFamily(enum.Enum):
    HEAT = "Heat"
    OSEEN_POTENTIAL = "OseenPotential"
    OSEEN = "Oseen"
    GRAD_OSEEN = "GradOseen"


@dataclass(frozen=True)
class DecayFitResult:
    """Measured decay constant and log-log slope of a kernel family."""

    family: str
    m: int
    exponent: float
    log_prefactor: float
    max_residual: float

    def to_record(self) -> dict:
        return asdict(self)


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("kernels are defined for t > 0 only")
    return t


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError("points must have a trailing axis of length 3")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return x


# ---------------------------------------------------------------------------
# radial profile of the potential


def _gw(k: int, w: np.ndarray) -> np.ndarray:
    """k-th derivative of G with respect to w = r^2/4 (at t = 1)."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    small = w < 0.25 * _TAYLOR_RADIUS**2
    if np.any(small):
        ws = w[small]
        acc = np.zeros_like(ws)
        # 6-term Taylor series around the removable singularity
        for n in range(6):
            acc += (-ws) ** n / (math.factorial(n) * (2 * n + 2 * k + 1))
        out[small] = acc
    big = ~small
    if np.any(big):
        a = k + 0.5
        wb = w[big]
        out[big] = 0.5 * special.gamma(a) * special.gammainc(a, wb) / wb**a
    return (-1) ** k * KAPPA * out


def heat_phi(x, t) -> np.ndarray:
    """Heat kernel ``(4 pi t)^{-3/2} exp(-|x|^2 / 4t)``."""
    t = _check_time(t)
    x = _as_points(x)
    r2 = np.sum(x * x, axis=-1)
    return (4.0 * math.pi * t) ** -1.5 * np.exp(-r2 / (4.0 * t))


def heat_phi_fourier(xi, t) -> np.ndarray:
    """Fourier transform ``exp(-4 pi^2 t |xi|^2)`` (convention e^{-2 pi i x.xi})."""
    t = _check_time(t)
    xi = _as_points(xi)
    return np.exp(-4.0 * math.pi**2 * t * np.sum(xi * xi, axis=-1))


def oseen_potential(x, t) -> np.ndarray:
    """Oseen potential ``P(x, t)``, smooth through ``x = 0``."""
    t = _check_time(t)
    x = _as_points(x)
    w = np.sum(x * x, axis=-1) / (4.0 * t)
    return _gw(0, w) / np.sqrt(t)


def _sym_delta_x(x: np.ndarray) -> np.ndarray:
    """delta_ij x_k + delta_ik x_j + delta_jk x_i, shape (..., 3, 3, 3)."""
    eye = np.eye(3)
    return (
        np.einsum("ij,...k->...ijk", eye, x)
        + np.einsum("ik,...j->...ijk", eye, x)
        + np.einsum("jk,...i->...ijk", eye, x)
    )


def _sym_delta_delta() -> np.ndarray:
    eye = np.eye(3)
    return (
        np.einsum("ij,kl->ijkl", eye, eye)
        + np.einsum("ik,jl->ijkl", eye, eye)
        + np.einsum("il,jk->ijkl", eye, eye)
    )


def _sym_delta_xx(x: np.ndarray) -> np.ndarray:
    eye = np.eye(3)
    terms = ("ij,...k,...l", "ik,...j,...l", "il,...j,...k",
             "jk,...i,...l", "jl,...i,...k", "kl,...i,...j")
    return sum(np.einsum(s + "->...ijkl", eye, x, x) for s in terms)


def _radial_derivative(order: int, coeffs: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Cartesian derivative tensor of a radial function f(w), w = |x|^2/4.

    ``coeffs[k]`` holds ``f^{(k)}(w) / 2^k`` evaluated at the points.
    """
    A = coeffs
    if order == 0:
        return A[0]
    if order == 1:
        return A[1][..., None] * x
    if order == 2:
        return (A[1][..., None, None] * np.eye(3)
                + A[2][..., None, None] * np.einsum("...i,...j->...ij", x, x))
    if order == 3:
        return (A[2][..., None, None, None] * _sym_delta_x(x)
                + A[3][..., None, None, None] * np.einsum("...i,...j,...k->...ijk", x, x, x))
    if order == 4:
        return (A[2][..., None, None, None, None] * _sym_delta_delta()
                + A[3][..., None, None, None, None] * _sym_delta_xx(x)
                + A[4][..., None, None, None, None]
                * np.einsum("...i,...j,...k,...l->...ijkl", x, x, x, x))
    raise ValueError(f"derivative order {order} not supported")


def potential_derivative(x, t, m: int) -> np.ndarray:
    """m-th spatial derivative tensor of the Oseen potential, m <= 4."""
    if m < 0 or m > 4:
        raise ValueError("potential derivatives are available for m <= 4")
    t = _check_time(t)
    x = _as_points(x)
    st = np.sqrt(t)
    y = x / np.asarray(st)[..., None]
    w = np.sum(y * y, axis=-1) / 4.0
    coeffs = [_gw(k, w) / 2.0**k for k in range(m + 1)]
    return _radial_derivative(m, coeffs, y) * _tscale(t, (m + 1) / 2.0, m)


def _tscale(t: np.ndarray, power: float, m: int) -> np.ndarray:
    s = np.asarray(t, dtype=float) ** (-power)
    return s.reshape(s.shape + (1,) * m) if m else s


def _heat_derivative(y: np.ndarray, m: int) -> np.ndarray:
    """Derivatives of Phi(., 1) at points y."""
    w = np.sum(y * y, axis=-1) / 4.0
    base = (4.0 * math.pi) ** -1.5 * np.exp(-w)
    coeffs = [(-1) ** k * base / 2.0**k for k in range(m + 1)]
    return _radial_derivative(m, coeffs, y)


def oseen_tensor(x, t) -> np.ndarray:
    """Oseen tensor ``T_ij = delta_ij Phi + d_i d_j P``, shape (..., 3, 3)."""
    t = _check_time(t)
    x = _as_points(x)
    st = np.sqrt(t)
    y = x / np.asarray(st)[..., None]
    w = np.sum(y * y, axis=-1) / 4.0
    phi = (4.0 * math.pi) ** -1.5 * np.exp(-w)
    a1 = _gw(1, w) / 2.0
    a2 = _gw(2, w) / 4.0
    T1 = ((phi + a1)[..., None, None] * np.eye(3)
          + a2[..., None, None] * np.einsum("...i,...j->...ij", y, y))
    return T1 * _tscale(t, 1.5, 2)


def oseen_tensor_grad(x, t, m: int = 1) -> np.ndarray:
    """m-th gradient of the Oseen tensor; index order (i, j, k[, l]) = d_k[d_l] T_ij."""
    if m not in (1, 2):
        raise ValueError("oseen_tensor_grad supports m in {1, 2}")
    t = _check_time(t)
    x = _as_points(x)
    st = np.sqrt(t)
    y = x / np.asarray(st)[..., None]
    w = np.sum(y * y, axis=-1) / 4.0
    coeffs = [_gw(k, w) / 2.0**k for k in range(m + 3)]
    d_p = _radial_derivative(m + 2, coeffs, y)
    d_phi = _heat_derivative(y, m)
    eye = np.eye(3)
    if m == 1:
        tensor = d_p + np.einsum("ij,...k->...ijk", eye, d_phi)
    else:
        tensor = d_p + np.einsum("ij,...kl->...ijkl", eye, d_phi)
    return tensor * _tscale(t, (m + 3) / 2.0, m + 2)


def oseen_multiplier(xi, t) -> np.ndarray:
    """Fourier symbol ``(I - xi xi^T/|xi|^2) exp(-4 pi^2 t |xi|^2)``."""
    t = _check_time(t)
    xi = _as_points(xi)
    n2 = np.sum(xi * xi, axis=-1)
    if np.any(n2 == 0):
        raise ValueError("the Oseen multiplier is undefined at xi = 0")
    proj = np.eye(3) - np.einsum("...i,...j->...ij", xi, xi) / n2[..., None, None]
    return proj * np.exp(-4.0 * math.pi**2 * t * n2)[..., None, None]


# ---------------------------------------------------------------------------
# integral norms


def _radial_profile(family: KernelFamily, r: float, t: float) -> float:
    """Pointwise Frobenius norm of the kernel at |x| = r (rotation invariant)."""
    x = np.array([r, 0.0, 0.0])
    if family is KernelFamily.HEAT:
        return float(heat_phi(x, t))
    if family is KernelFamily.OSEEN:
        return float(np.linalg.norm(oseen_tensor(x, t)))
    if family is KernelFamily.GRAD_OSEEN:
        return float(np.linalg.norm(oseen_tensor_grad(x, t, 1)))
    raise ValueError(f"no radial profile for {family}")


_SUPPORTED_NORMS = {
    (KernelFamily.HEAT, 1), (KernelFamily.HEAT, 2),
    (KernelFamily.OSEEN, 2), (KernelFamily.GRAD_OSEEN, 1),
}

# pointwise decay |K(x,t)| <= C (|x|^2+t)^{-d/2} used to place the cutoff
_DECAY_POWER = {KernelFamily.OSEEN: 3, KernelFamily.GRAD_OSEEN: 4}


def kernel_time_norm(family: KernelFamily | str, t: float, p: float, rel_tail: float = 1e-8) -> float:
    """L^p(R^3) norm of a kernel at time t by adaptive radial quadrature.

    The integration range ``[0, R_cut]`` is split into octaves of ``sqrt(t)``;
    ``R_cut`` is chosen so that the algebraic tail implied by the pointwise
    decay bound is below ``rel_tail`` of the accumulated integral.
    """
    family = KernelFamily(family)
    if (family, p) not in _SUPPORTED_NORMS:
        raise ValueError(f"unsupported (family, p) pair: ({family.value}, {p})")
    t = float(_check_time(t))
    st = math.sqrt(t)

    def integrand(r):
        return 4.0 * math.pi * r * r * _radial_profile(family, r, t) ** p

    edges = [0.0, st]
    total = 0.0
    while True:
        a, b = edges[-2], edges[-1]
        val, _ = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-11, limit=200)
        total += val
        if family is KernelFamily.HEAT:
            if b > 12.0 * st:
                break
        else:
            # tail of C^p r^{2 - d p} beyond b, with C measured from the profile at b
            d = _DECAY_POWER[family]
            c = _radial_profile(family, b, t) * (b * b + t) ** (d / 2.0)
            q = d * p - 2.0
            tail = 4.0 * math.pi * c**p * b ** (1.0 - q) / (q - 1.0)
            if b > 4.0 * st and tail < rel_tail * total:
                break
        edges.append(2.0 * b)
    return total ** (1.0 / p)


def grad_oseen_holder_l1(x, y, t, n_radial: int = 24, n_polar: int = 48) -> float:
    """``int |grad T(x - z, t) - grad T(y - z, t)| dz`` by axisymmetric quadrature.

    The integrand depends on ``z`` only through its position relative to the
    segment ``[x, y]`` and is invariant under rotations about it, so the 3-D
    integral reduces to Gauss-Legendre quadrature in spherical coordinates
    centred at the midpoint, with radial octave panels.
    """
    t = float(_check_time(t))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        return 0.0
    st = math.sqrt(t)
    # axis along d; points w = z - midpoint, kernel args (x - z) = d/2 - w and (y - z) = -d/2 - w
    half = np.array([0.0, 0.0, dist / 2.0])
    r0 = min(st, dist) / 4.0
    rmax = 2000.0 * max(st, dist)
    panels = [0.0, r0]
    while panels[-1] < rmax:
        panels.append(panels[-1] * 2.0)
    gr, wr = np.polynomial.legendre.leggauss(n_radial)
    gc, wc = np.polynomial.legendre.leggauss(n_polar)
    total = 0.0
    for a, b in zip(panels[:-1], panels[1:]):
        r = 0.5 * (b - a) * gr + 0.5 * (b + a)
        w_r = 0.5 * (b - a) * wr
        R, C = np.meshgrid(r, gc, indexing="ij")
        S = np.sqrt(1.0 - C * C)
        pts = np.stack([R * S, np.zeros_like(R), R * C], axis=-1)
        diff = oseen_tensor_grad(half - pts, t) - oseen_tensor_grad(-half - pts, t)
        mag = np.sqrt(np.sum(diff.reshape(diff.shape[:2] + (-1,)) ** 2, axis=-1))
        total += 2.0 * math.pi * np.einsum("i,j,ij->", w_r * r * r, wc, mag)
    return float(total)


def potential_decay_fit(m: int, radii, t: float = 1.0, direction=(1.0, 1.0, 1.0)) -> DecayFitResult:
    """Measure ``C_m = sup |grad^m P| (|x|^2+t)^{(m+1)/2}`` and the log-log slope.

    The slope is fitted to ``log|grad^m P|`` against ``log(|x|^2 + t)`` and
    should be close to ``-(m+1)/2``.
    """
    if m not in (0, 1, 2):
        raise ValueError("potential_decay_fit supports m in {0, 1, 2}")
    radii = np.asarray(radii, dtype=float)
    if radii.size < 8:
        raise ValueError("at least 8 sample radii are required")
    if radii.max() < 10.0 * radii.min() * (1 - 1e-12):
        raise ValueError("sample radii must span at least one decade")
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    pts = radii[:, None] * e
    vals = potential_derivative(pts, t, m)
    mag = np.abs(vals) if m == 0 else np.sqrt(np.sum(vals.reshape(len(radii), -1) ** 2, axis=1))
    s = np.log(radii**2 + t)
    logmag = np.log(mag)
    slope, intercept = np.polyfit(s, logmag, 1)
    resid = logmag - (slope * s + intercept)
    ratio = mag * (radii**2 + t) ** ((m + 1) / 2.0)
    return DecayFitResult(
        family=KernelFamily.OSEEN_POTENTIAL.value,
        m=m,
        exponent=float(slope),
        log_prefactor=float(np.log(ratio.max())),
        max_residual=float(np.abs(resid).max()),
    )


def oseen_decay_fit(m: int, radii, t: float = 1.0, direction=(1.0, 2.0, 3.0)) -> DecayFitResult:
    """Same protocol as :func:`potential_decay_fit` for ``grad^m T``, m in {0,1,2}."""
    if m not in (0, 1, 2):
        raise ValueError("oseen_decay_fit supports m in {0, 1, 2}")
    radii = np.asarray(radii, dtype=float)
    if radii.size < 8:
        raise ValueError("at least 8 sample radii are required")
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    pts = radii[:, None] * e
    vals = oseen_tensor(pts, t) if m == 0 else oseen_tensor_grad(pts, t, m)
    mag = np.sqrt(np.sum(vals.reshape(len(radii), -1) ** 2, axis=1))
    s = np.log(radii**2 + t)
    slope, intercept = np.polyfit(s, np.log(mag), 1)
    resid = np.log(mag) - (slope * s + intercept)
    ratio = mag * (radii**2 + t) ** ((m + 3) / 2.0)
    return DecayFitResult(
        family=(KernelFamily.OSEEN if m == 0 else KernelFamily.GRAD_OSEEN).value,
        m=m,
        exponent=float(slope),
        log_prefactor=float(np.log(ratio.max())),
        max_residual=float(np.abs(resid).max()),
    )


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)
