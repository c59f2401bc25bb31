"""Gaussian-type weights, exposed as log-weights.

Each weight family provides ``log_weight(t, coords)`` (the exponent w with
f = e^w u) and ``potential(t, coords)``, the multiplication part P of the
symmetric operator S = Laplacian + P that the convexity functionals use.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .coefficients import smoothstep5


def phi_gamma(t, gamma: float):
    return gamma / (1.0 + 4.0 * gamma * np.asarray(t, dtype=float))


def phi_gamma_prime(t, gamma: float):
    return -4.0 * gamma**2 / (1.0 + 4.0 * gamma * np.asarray(t, dtype=float)) ** 2


def _r2(x):
    return np.sum(x * x, axis=0)


@dataclass(frozen=True)
class QuadraticWeight:
    """gamma|x|^2, or phi_gamma(t)|x|^2 when time_dependent."""

    gamma: float
    time_dependent: bool = False

    def rate(self, t: float) -> float:
        return float(phi_gamma(t, self.gamma)) if self.time_dependent else self.gamma

    def log_weight(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.rate(t) * _r2(x)

    def potential(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.time_dependent:
            # |grad phi|^2 + d/dt phi vanishes identically for this rate
            return np.zeros(x.shape[1:])
        return 4.0 * self.gamma**2 * _r2(x)

    def describe(self) -> dict:
        return {"family": "quadratic", "gamma": self.gamma, "time_dependent": self.time_dependent}


# ---- mollified radial weight ----

@dataclass(frozen=True)
class MollifierParams:
    a: float
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError("mollifier exponent a must lie in (0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def r_hi(self) -> float:
        return max(self.gamma, 2.0)

    @property
    def r_lo(self) -> float:
        return self.r_hi - 1.0

    blend = (10.0, -15.0, 6.0)  # smoothstep s^3 (10 - 15 s + 6 s^2)

    def zeta(self, r):
        r = np.asarray(r, dtype=float)
        s = (r - self.r_lo) / (self.r_hi - self.r_lo)
        with np.errstate(divide="ignore"):
            tail = 2.0 * np.where(r > 0, r, 1.0) ** (-self.a)
        return np.where(r <= self.r_lo, 0.0, smoothstep5(s) * tail)


def _gauss_cells(edges: np.ndarray, fn, order: int = 8) -> np.ndarray:
    """Integral of fn over each cell [edges[i], edges[i+1]]."""
    nodes, wts = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return np.sum(fn(mid + half * nodes) * wts, axis=1) * half[:, 0]


@dataclass(frozen=True, eq=False)
class MollifiedWeight:
    params: MollifierParams
    r: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @property
    def a(self) -> float:
        return self.params.a

    def phi_at(self, r):
        return np.interp(r, self.r, self.phi)

    def dphi_at(self, r):
        return np.interp(r, self.r, self.dphi)

    @cached_property
    def d2phi(self) -> np.ndarray:
        return np.gradient(self.dphi, self.r, edge_order=2)

    def log_weight(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.params.gamma * self.phi_at(np.sqrt(_r2(x)))

    def potential(self, t: float, x: np.ndarray) -> np.ndarray:
        return (self.params.gamma * self.dphi_at(np.sqrt(_r2(x)))) ** 2

    def describe(self) -> dict:
        p = self.params
        return {"family": "mollified", "a": p.a, "gamma": p.gamma, "r_lo": p.r_lo, "r_hi": p.r_hi,
                "blend": "quintic smoothstep", "r_max": float(self.r[-1]), "mesh": len(self.r)}

    def table(self) -> np.ndarray:
        """Rows (r, phi_a, dphi_a, residual)."""
        res = np.zeros_like(self.r)
        res[1:] = ode_residual(self, self.r[1:])
        return np.column_stack([self.r, self.phi, self.dphi, res])


def build_mollified(a: float, gamma: float, r_max: float | None = None, mesh: int = 20001) -> MollifiedWeight:
    p = MollifierParams(a, gamma)
    if r_max is None:
        r_max = 4.0 * p.r_hi
    if r_max < 4.0 * p.r_hi:
        raise ValueError("r_max must be at least 4 r_hi")
    if mesh < 200:
        raise ValueError("mesh too coarse")
    r = np.linspace(0.0, r_max, mesh)
    # tail integral of zeta(s)/s from r to infinity
    cells = _gauss_cells(r, lambda s: p.zeta(s) / np.where(s > 0, s, 1.0))
    hi = p.r_hi
    above = r >= hi
    tail = np.empty_like(r)
    tail[above] = (2.0 / a) * r[above] ** (-a)
    # below r_hi: integrate to r_hi then use the closed form
    k_hi = int(np.searchsorted(r, hi))  # first node >= r_hi
    partial = _gauss_cells(np.array([r[k_hi - 1], hi]), lambda s: p.zeta(s) / s)[0]
    acc = (2.0 / a) * hi ** (-a) + partial
    tail[k_hi - 1] = acc
    for k in range(k_hi - 2, -1, -1):
        acc += cells[k]
        tail[k] = acc
    dphi = a * r * tail
    dphi[above] = 2.0 * r[above] ** (1.0 - a)
    # phi from the closed form at r_hi, integrating dphi away from it
    phi_hi = (2.0 * hi ** (2.0 - a) - a) / (2.0 - a)
    phi = np.empty_like(r)
    phi[above] = (2.0 * r[above] ** (2.0 - a) - a) / (2.0 - a)
    # trapezoid on dphi is second order; refine with the cell Gauss rule on the interpolant
    seg = 0.5 * (dphi[1:] + dphi[:-1]) * np.diff(r)
    first_leg = 0.5 * (dphi[k_hi - 1] + 2.0 * hi ** (1.0 - a)) * (hi - r[k_hi - 1])
    phi[k_hi - 1] = phi_hi - first_leg
    for k in range(k_hi - 2, -1, -1):
        phi[k] = phi[k + 1] - seg[k]
    return MollifiedWeight(p, r, phi, dphi)


def ode_residual(w: MollifiedWeight, r) -> np.ndarray:
    """|phi'' - phi'/r + a zeta| with phi'' from mesh differences of phi'."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r > w.r[-1]):
        raise ValueError("r must lie in (0, r_max]")
    d2 = np.interp(r, w.r, w.d2phi)
    return np.abs(d2 - w.dphi_at(r) / r + w.a * w.params.zeta(r))


# ---- translated moving weight ----

def translated_weight(mu: float, R: float, t: float, x) -> np.ndarray:
    """mu|x + R t(1-t) e1|^2 + R^2 t(1-t)(1-2t)/6 - R^2 t(1-t)/(16 mu).

    ``x`` is a point of shape (dim,) or a coordinate array (dim, ...).
    """
    if not mu > 0.5:
        raise ValueError("mu must exceed 1/2")
    x = np.asarray(x, dtype=float)
    s = t * (1.0 - t)
    y = x.copy()
    y[0] = y[0] + R * s
    return mu * np.sum(y * y, axis=0) + R**2 * s * (1.0 - 2.0 * t) / 6.0 - R**2 * s / (16.0 * mu)


def weight_at_half(mu: float, R: float, x) -> np.ndarray:
    """Twice the t = 1/2 log-weight: 2 mu |x + R/4 e1|^2 - R^2/(32 mu)."""
    return 2.0 * translated_weight(mu, R, 0.5, x)


@dataclass(frozen=True)
class TranslatedWeight:
    mu: float
    R: float

    def __post_init__(self):
        if not self.mu > 0.5:
            raise ValueError("mu must exceed 1/2")

    def log_weight(self, t: float, x: np.ndarray) -> np.ndarray:
        return translated_weight(self.mu, self.R, t, x)

    def potential(self, t: float, x: np.ndarray) -> np.ndarray:
        mu, R = self.mu, self.R
        s = t * (1.0 - t)
        shift = R * s + (4.0 * mu * (1.0 - 2.0 * t) - 1.0) * R / (16.0 * mu**2)
        y = x.copy()
        y[0] = y[0] + shift
        const = R**2 * (1.0 / 12.0 - (1.0 - 2.0 * t) / (16.0 * mu) + 1.0 / (64.0 * mu**2))
        return 4.0 * mu**2 * np.sum(y * y, axis=0) + 0.5 * R * (x[0] + R * s) - const

    def describe(self) -> dict:
        return {"family": "translated", "mu": self.mu, "R": self.R}
