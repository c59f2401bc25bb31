"""Potential V(t,x) and noise coefficient G(t,x), their sup bounds and decay checks.

Evaluators take ``(t, coords)`` with ``coords`` of shape (dim, *shape) and
return arrays of shape ``shape``; noise gradients return (dim, *shape).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Grid

SAFETY = 1.0 + 1e-6

Evaluator = Callable[[float, np.ndarray], np.ndarray]


class CoefficientError(ValueError):
    pass


def _r2(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=0)


def smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def smoothstep5_prime(s):
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30.0 * s * s * (1.0 - s) ** 2, 0.0)


@dataclass(frozen=True)
class Coefficient:
    """A scalar function of (t, x) with optional analytic spatial gradient."""

    fn: Evaluator
    grad: Optional[Evaluator] = None
    descriptor: dict = field(default_factory=dict)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.fn(t, x), dtype=float), x.shape[1:])


# ---- shipped library ----

def zero() -> Coefficient:
    return Coefficient(lambda t, x: np.zeros(x.shape[1:]), lambda t, x: np.zeros(x.shape), {"kind": "zero"})


def constant(value: float) -> Coefficient:
    return Coefficient(lambda t, x: np.full(x.shape[1:], float(value)),
                       lambda t, x: np.zeros(x.shape), {"kind": "constant", "value": value})


def cosine(amplitude: float, frequency: float = 1.0) -> Coefficient:
    """amplitude * prod_i cos(frequency * x_i)."""

    def fn(t, x):
        return amplitude * np.prod(np.cos(frequency * x), axis=0)

    def grad(t, x):
        c = np.cos(frequency * x)
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            others = np.prod(np.delete(c, i, axis=0), axis=0) if x.shape[0] > 1 else 1.0
            out[i] = -amplitude * frequency * np.sin(frequency * x[i]) * others
        return out

    return Coefficient(fn, grad, {"kind": "cosine", "amplitude": amplitude, "frequency": frequency})


def compact_bump(amplitude: float, radius: float) -> Coefficient:
    """amplitude * exp(1 - 1/(1 - (r/radius)^2)) inside the ball, zero outside."""

    def fn(t, x):
        q = _r2(x) / radius**2
        out = np.zeros_like(q)
        m = q < 1.0
        out[m] = amplitude * np.exp(1.0 - 1.0 / (1.0 - q[m]))
        return out

    def grad(t, x):
        q = _r2(x) / radius**2
        g = np.zeros_like(x)
        m = q < 1.0
        val = np.exp(1.0 - 1.0 / (1.0 - q[m]))
        dq = -val / (1.0 - q[m]) ** 2 * 2.0 / radius**2
        for i in range(x.shape[0]):
            g[i][m] = amplitude * dq * x[i][m]
        return g

    return Coefficient(fn, grad, {"kind": "compact_bump", "amplitude": amplitude, "radius": radius})


def gaussian_bump(amplitude: float, width: float) -> Coefficient:
    """amplitude * exp(-|x|^2 / width^2)."""

    def fn(t, x):
        return amplitude * np.exp(-_r2(x) / width**2)

    def grad(t, x):
        return -2.0 * x / width**2 * fn(t, x)

    return Coefficient(fn, grad, {"kind": "gaussian_bump", "amplitude": amplitude, "width": width})


def decaying(amplitude: float, epsilon: float, cutoff_radius: Optional[float] = None,
             cutoff_width: float = 1.0) -> Coefficient:
    """amplitude * (1+|x|^2)^(-epsilon/2) * chi(|x|) with a quintic cutoff chi.

    chi = 1 up to cutoff_radius and 0 beyond cutoff_radius + cutoff_width; no
    cutoff when cutoff_radius is None.
    """

    def chi(r):
        if cutoff_radius is None:
            return np.ones_like(r), np.zeros_like(r)
        s = (r - cutoff_radius) / cutoff_width
        return 1.0 - smoothstep5(s), -smoothstep5_prime(s) / cutoff_width

    def fn(t, x):
        r2 = _r2(x)
        c, _ = chi(np.sqrt(r2))
        return amplitude * (1.0 + r2) ** (-0.5 * epsilon) * c

    def grad(t, x):
        r2 = _r2(x)
        r = np.sqrt(r2)
        c, dc = chi(r)
        base = (1.0 + r2) ** (-0.5 * epsilon)
        dbase = -epsilon * (1.0 + r2) ** (-0.5 * epsilon - 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(r > 0, dc / r, 0.0)
        return amplitude * x * (dbase * c + base * radial)

    return Coefficient(fn, grad, {"kind": "decaying", "amplitude": amplitude, "epsilon": epsilon,
                                  "cutoff_radius": cutoff_radius, "cutoff_width": cutoff_width})


def time_linear(c0: float, c1: float) -> Coefficient:
    """Space-independent c0 + c1*t."""
    return Coefficient(lambda t, x: np.full(x.shape[1:], c0 + c1 * t),
                       lambda t, x: np.zeros(x.shape), {"kind": "time_linear", "c0": c0, "c1": c1})


LIBRARY = {
    "zero": zero,
    "constant": constant,
    "cosine": cosine,
    "compact_bump": compact_bump,
    "gaussian_bump": gaussian_bump,
    "decaying": decaying,
    "time_linear": time_linear,
}


def coefficient_from_descriptor(desc: dict) -> Coefficient:
    params = dict(desc)
    kind = params.pop("kind")
    if kind not in LIBRARY:
        raise CoefficientError(f"unknown coefficient kind {kind!r}")
    return LIBRARY[kind](**params)


@dataclass(frozen=True)
class CoefficientSpec:
    potential: Coefficient
    noise: Coefficient
    name: str = "custom"

    def V(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.potential(t, x)

    def G(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.noise(t, x)

    def grad_G(self, t: float, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
        if self.noise.grad is not None:
            return np.asarray(self.noise.grad(t, x), dtype=float)
        return fd_gradient(self.noise, t, x, h)

    @property
    def descriptor(self) -> dict:
        return {"name": self.name, "potential": self.potential.descriptor, "noise": self.noise.descriptor}

    @property
    def noise_is_zero(self) -> bool:
        return self.noise.descriptor.get("kind") == "zero"


def fd_gradient(c: Coefficient, t: float, x: np.ndarray, h: float) -> np.ndarray:
    """Five-point centred differences, fourth order in h."""
    out = np.empty(x.shape)
    for i in range(x.shape[0]):
        e = np.zeros((x.shape[0],) + (1,) * (x.ndim - 1))
        e[i] = h
        out[i] = (8.0 * (c(t, x + e) - c(t, x - e)) - (c(t, x + 2 * e) - c(t, x - 2 * e))) / (12.0 * h)
    return out


def spec_from_descriptor(desc: dict) -> CoefficientSpec:
    return CoefficientSpec(coefficient_from_descriptor(desc["potential"]),
                           coefficient_from_descriptor(desc["noise"]),
                           desc.get("name", "custom"))


def default_time_samples(count: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, count)


@dataclass(frozen=True)
class CoefficientBounds:
    M: float
    M0: float
    M1: float

    @property
    def MGV(self) -> float:
        return self.M0**2 + 2.0 * self.M

    @property
    def interpolation_scale(self) -> float:
        """M + M^2 + M0^2 + M1^2, the exponent scale of the interpolation bound."""
        return self.M + self.M**2 + self.M0**2 + self.M1**2

    def as_dict(self) -> dict:
        return {"M": self.M, "M0": self.M0, "M1": self.M1, "MGV": self.MGV}


def estimate_bounds(spec: CoefficientSpec, grid: Grid, time_samples: Sequence[float] | None = None) -> CoefficientBounds:
    ts = default_time_samples() if time_samples is None else np.asarray(time_samples, dtype=float)
    x = grid.coords
    M = M0 = M1 = 0.0
    for t in ts:
        v = spec.V(t, x)
        g = spec.G(t, x)
        dg = spec.grad_G(t, x, h=grid.spacing * 1e-3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g)) and np.all(np.isfinite(dg))):
            raise CoefficientError(f"non-finite coefficient value at t = {t}")
        M = max(M, float(np.max(np.abs(v))))
        M0 = max(M0, float(np.max(np.abs(g))))
        M1 = max(M1, float(np.max(np.sqrt(np.sum(dg * dg, axis=0)))))
    return CoefficientBounds(M * SAFETY, M0 * SAFETY, M1 * SAFETY)


# ---- decay assumptions ----

def a1_bound(gamma: float, epsilon: float, r):
    return np.sqrt(gamma) * np.sqrt(1.0 + 4.0 * gamma) ** (epsilon - 1.0) * np.asarray(r, dtype=float) ** (-epsilon)


def a2_bound(gamma: float, epsilon: float, r):
    return np.sqrt(gamma) * np.asarray(r, dtype=float) ** (-epsilon)


def a1_radius(gamma: float) -> float:
    return max(gamma, 2.0) / np.sqrt(1.0 + 4.0 * gamma)


def a2_radius(gamma: float) -> float:
    return max(gamma, 2.0)


@dataclass(frozen=True)
class AssumptionReport:
    assumption_id: str
    gamma: float
    epsilon: float
    worst_violation: float
    witness: Optional[tuple]
    shell_trend: list

    @property
    def passed(self) -> bool:
        return self.worst_violation <= 0.0

    def as_dict(self) -> dict:
        return {"assumption": self.assumption_id, "gamma": self.gamma, "epsilon": self.epsilon,
                "worst_violation": self.worst_violation, "witness": self.witness,
                "passed": self.passed, "shell_trend": self.shell_trend}


def _shell_trend(spec: CoefficientSpec, grid: Grid, ts: np.ndarray) -> list:
    r = np.sqrt(grid.radius_sq)
    L = grid.half_width
    rows = []
    for frac in (0.5, 0.75, 1.0):
        mask = r > frac * L
        supV = supdG = 0.0
        if np.any(mask):
            for t in ts:
                supV = max(supV, float(np.max(np.abs(spec.V(t, grid.coords)[mask]))))
                dg = spec.grad_G(t, grid.coords, h=grid.spacing * 1e-3)
                supdG = max(supdG, float(np.max(np.sqrt(np.sum(dg * dg, axis=0))[mask])))
        rows.append({"shell": frac * L, "sup_V": supV, "sup_gradG": supdG})
    return rows


def _check(aid, bound_fn, radius, spec, gamma, epsilon, grid, time_samples):
    if not (gamma > 0 and epsilon > 0):
        raise CoefficientError("gamma and epsilon must be positive")
    ts = default_time_samples() if time_samples is None else np.asarray(time_samples, dtype=float)
    r = np.sqrt(grid.radius_sq)
    region = r >= radius
    worst, witness = -np.inf, None
    if np.any(region):
        bound = bound_fn(gamma, epsilon, r[region])
        flat_idx = np.flatnonzero(region)
        for t in ts:
            margin = np.abs(spec.G(t, grid.coords)[region]) - bound
            k = int(np.argmax(margin))  # first maximum = smallest node index
            if margin[k] > worst:
                worst = float(margin[k])
                node = np.unravel_index(flat_idx[k], grid.shape)
                witness = (float(t), tuple(float(grid.coords[d][node]) for d in range(grid.dim)))
    return AssumptionReport(aid, gamma, epsilon, worst, witness, _shell_trend(spec, grid, ts))


def check_assumption_A1(spec, gamma, epsilon, grid, time_samples=None) -> AssumptionReport:
    return _check("A1", a1_bound, a1_radius(gamma), spec, gamma, epsilon, grid, time_samples)


def check_assumption_A2(spec, gamma, epsilon, grid, time_samples=None) -> AssumptionReport:
    return _check("A2", a2_bound, a2_radius(gamma), spec, gamma, epsilon, grid, time_samples)
