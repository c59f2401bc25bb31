"""Stochastic Appell transformation.

For alpha, beta > 0 let kappa = sqrt(alpha/beta) - sqrt(beta/alpha),
a(t) = sqrt(alpha beta)/(alpha(1-t) + beta t) and b(t) = sqrt(beta/alpha) a(t) t.
A solution u maps to

    y(t, x) = a(t)^(n/2) u(b(t), a(t) x) exp(a(t) kappa |x|^2 / 4),

which solves a heat equation with coefficients a^2 V(b, a x) and
G(b, a x) sqrt(b') driven by a Brownian motion on the clock b.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .coefficients import Coefficient, CoefficientBounds, CoefficientSpec, SAFETY, default_time_samples
from .functionals import FAIL, PASS, mean_stderr, pairwise_mean
from .grid import Field, Grid, make_grid, quad_array, weighted_l2_sq_array
from .solver import Ensemble, SolverConfig, Trajectory, solve_batch
from .stochastic import IDENTITY, Clock, SeedLadder, TimeGrid, mix64, sample_increments


class AppellError(ValueError):
    pass


@dataclass(frozen=True)
class AppellParams:
    alpha: float
    beta: float

    @property
    def kappa(self) -> float:
        return np.sqrt(self.alpha / self.beta) - np.sqrt(self.beta / self.alpha)

    @property
    def is_identity(self) -> bool:
        return self.alpha == self.beta

    def a(self, t):
        t = np.asarray(t, dtype=float)
        return np.sqrt(self.alpha * self.beta) / (self.alpha * (1.0 - t) + self.beta * t)

    def b(self, t):
        t = np.asarray(t, dtype=float)
        return np.sqrt(self.beta / self.alpha) * self.a(t) * t

    def a_prime(self, t):
        return self.kappa * self.a(t) ** 2

    def b_prime(self, t):
        return self.a(t) ** 2

    def inverse(self) -> "AppellParams":
        """Undoes the transform at t when evaluated at b(t)."""
        return AppellParams(self.beta, self.alpha)

    def clock(self) -> Clock:
        if self.is_identity:
            return IDENTITY
        return Clock(self.b, f"appell(alpha={self.alpha}, beta={self.beta})")

    @property
    def max_scale(self) -> float:
        """max over [0,1] of a(t)."""
        return float(max(self.a(0.0), self.a(1.0)))

    def describe(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "kappa": self.kappa}


def make_params(alpha: float, beta: float) -> AppellParams:
    if not (alpha > 0 and beta > 0):
        raise AppellError("alpha and beta must be positive")
    p = AppellParams(float(alpha), float(beta))
    if abs(p.b(0.0)) > 1e-14 or abs(p.b(1.0) - 1.0) > 1e-12:
        raise AppellError("clock endpoints are off")
    ts = np.linspace(0.05, 0.95, 7)
    h = 1e-6
    da = (p.a(ts + h) - p.a(ts - h)) / (2 * h)
    db = (p.b(ts + h) - p.b(ts - h)) / (2 * h)
    scale = p.max_scale**2 * max(1.0, abs(p.kappa))
    if np.max(np.abs(da - p.a_prime(ts))) > 1e-6 * scale or np.max(np.abs(db - p.b_prime(ts))) > 1e-6 * scale:
        raise AppellError("derivative identities fail; parameters are numerically degenerate")
    return p


def gaussian_exponent(params: AppellParams, gamma: float, s: float) -> float:
    """Rate c with E||e^{gamma|x|^2} y(t)||^2 = E||e^{c|x|^2} u(s)||^2, s = b(t)."""
    a1s = float(params.a(1.0 - s))
    return gamma * a1s**2 + params.kappa * a1s / 4.0


# ---- field transform ----

def _interp(values: np.ndarray, src: Grid, pts: np.ndarray) -> np.ndarray:
    """Cubic interpolation of values (batch, *src.shape) at points pts (dim, *tshape).

    Points outside the source box get 0."""
    batch = values.shape[0]
    tshape = pts.shape[1:]
    L = src.half_width
    inside = np.all(np.abs(pts) <= L + 1e-12, axis=0)
    out = np.zeros((batch,) + tshape)
    if not np.any(inside):
        return out
    if src.dim == 1:
        spl = CubicSpline(src.axis, values, axis=1)
        out[:, inside] = spl(pts[0][inside])
    else:
        q = np.stack([p[inside] for p in pts], axis=-1)
        for i in range(batch):
            it = RegularGridInterpolator((src.axis, src.axis), values[i], method="cubic")
            out[i, inside] = it(q)
    return out


def transform_values(values: np.ndarray, src: Grid, params: AppellParams, t: float,
                     target: Optional[Grid] = None, src_log_weight: Optional[np.ndarray] = None):
    """Transform a batch of fields u(b(t), .) (shape (batch, *src.shape)).

    Returns (y values on the target grid, fraction of the source's weighted mass
    lying outside the region the target grid can see).
    """
    target = src if target is None else target
    values = np.asarray(values, dtype=float)
    if params.is_identity and target == src:
        return values.copy(), 0.0
    a = float(params.a(t))
    n = src.dim
    pts = a * target.coords
    y = _interp(values, src, pts)
    y *= a ** (n / 2.0) * np.exp(a * params.kappa * target.radius_sq / 4.0)
    y[(slice(None),) + tuple(np.nonzero(~target.interior))] = 0.0
    # source mass the target grid cannot see
    reach = a * target.half_width
    outside = np.any(np.abs(src.coords) > reach + 1e-12, axis=0)
    logw = np.zeros(src.shape) if src_log_weight is None else src_log_weight
    total = weighted_l2_sq_array(values, logw, src)
    hidden = quad_array(np.exp(2.0 * logw) * values**2 * outside, src) if np.any(outside) else np.zeros_like(total)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = float(np.max(np.where(total > 0, hidden / total, 0.0)))
    return y, frac


def transform_field(u_traj: Trajectory, params: AppellParams, t: float, target: Optional[Grid] = None) -> Field:
    s = float(params.b(t))
    u = u_traj.at(s) if not np.isclose(s, 0.0) else u_traj.at(0.0)
    y, _ = transform_values(u.values[None], u.grid, params, t, target)
    return Field(target or u.grid, y[0])


def aligned_grid(src: Grid, params: AppellParams, t: float) -> Grid:
    """Target grid whose nodes map exactly onto the source nodes at time t."""
    return make_grid(src.dim, src.half_width / float(params.a(t)), src.points)


# ---- norm identity ----

@dataclass(frozen=True)
class IdentityReport:
    t: float
    s: float
    gamma: float
    exponent: float
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    relative_discrepancy: float
    hidden_mass_fraction: float
    tolerance: float

    @property
    def degraded(self) -> bool:
        return self.hidden_mass_fraction > 0.01

    @property
    def verdict(self) -> str:
        return PASS if self.relative_discrepancy <= self.tolerance else FAIL

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(verdict=self.verdict, degraded=self.degraded)
        return d


def norm_identity_check(u_ens: Ensemble, params: AppellParams, gamma: float, t: float,
                        target: Optional[Grid] = None, tolerance: float = 0.02) -> IdentityReport:
    src = u_ens.grid
    target = src if target is None else target
    s = float(params.b(t))
    u = u_ens.at(s)
    c = gaussian_exponent(params, gamma, s)
    rhs_vals = weighted_l2_sq_array(u, c * src.radius_sq, src)
    y, hidden = transform_values(u, src, params, t, target, src_log_weight=c * src.radius_sq)
    lhs_vals = weighted_l2_sq_array(y, gamma * target.radius_sq, target)
    lhs, lse = mean_stderr(lhs_vals)
    rhs, rse = mean_stderr(rhs_vals)
    rel = abs(float(lhs) - float(rhs)) / abs(float(rhs)) if rhs != 0 else abs(float(lhs))
    return IdentityReport(float(t), s, gamma, c, float(lhs), float(lse), float(rhs), float(rse),
                          float(rel), hidden, tolerance)


# ---- coefficients ----

@dataclass(frozen=True)
class TransformedProblem:
    params: AppellParams
    spec: CoefficientSpec
    bounds: CoefficientBounds
    source_bounds: CoefficientBounds

    def bound_ratios(self) -> dict:
        """Estimated transformed bounds against max(a)^k times the source bounds."""
        m = self.params.max_scale
        sb, tb = self.source_bounds, self.bounds
        return {
            "M": (tb.M, m**2 * sb.M),
            "M0": (tb.M0, m * sb.M0),
            "M1": (tb.M1, m**2 * sb.M1),
        }

    def bounds_consistent(self) -> bool:
        return all(lhs <= rhs * (1 + 1e-12) for lhs, rhs in self.bound_ratios().values())


def transform_coefficients(spec: CoefficientSpec, params: AppellParams, grid: Grid,
                           time_samples: Optional[Sequence[float]] = None) -> TransformedProblem:
    p = params

    def V(t, x):
        a = float(p.a(t))
        return a**2 * spec.V(float(p.b(t)), a * x)

    def G(t, x):
        a = float(p.a(t))
        return spec.G(float(p.b(t)), a * x) * a  # sqrt(b') = a

    def dG(t, x):
        a = float(p.a(t))
        return spec.grad_G(float(p.b(t)), a * x) * a**2

    tspec = CoefficientSpec(
        Coefficient(V, None, {"kind": "appell", "of": spec.potential.descriptor, **p.describe()}),
        Coefficient(G, dG, {"kind": "appell", "of": spec.noise.descriptor, **p.describe()}),
        f"{spec.name}~appell",
    )
    ts = default_time_samples() if time_samples is None else np.asarray(time_samples, dtype=float)
    M = M0 = M1 = 0.0
    sM = sM0 = sM1 = 0.0
    for t in ts:
        a = float(p.a(t))
        s = float(p.b(t))
        img = a * grid.coords
        v0, g0 = spec.V(s, img), spec.G(s, img)
        d0 = spec.grad_G(s, img)
        sM = max(sM, float(np.max(np.abs(v0))))
        sM0 = max(sM0, float(np.max(np.abs(g0))))
        sM1 = max(sM1, float(np.max(np.sqrt(np.sum(d0 * d0, axis=0)))))
        M = max(M, float(np.max(np.abs(a**2 * v0))))
        M0 = max(M0, float(np.max(np.abs(a * g0))))
        M1 = max(M1, float(np.max(np.sqrt(np.sum((a**2 * d0) ** 2, axis=0)))))
    bounds = CoefficientBounds(M * SAFETY, M0 * SAFETY, M1 * SAFETY)
    source = CoefficientBounds(sM * SAFETY, sM0 * SAFETY, sM1 * SAFETY)
    return TransformedProblem(p, tspec, bounds, source)


def transformed_initial(u0: Callable[[np.ndarray], np.ndarray], params: AppellParams, grid: Grid) -> np.ndarray:
    a = float(params.a(0.0))
    vals = a ** (grid.dim / 2.0) * u0(a * grid.coords) * np.exp(a * params.kappa * grid.radius_sq / 4.0)
    vals[~grid.interior] = 0.0
    return vals


def source_grid_for(target: Grid, params: AppellParams) -> Grid:
    """A grid with the target's spacing wide enough to cover a(t) x for all t."""
    h = target.spacing
    L = target.half_width * params.max_scale
    cells = int(np.ceil(L / h - 1e-9))
    return make_grid(target.dim, cells * h, 2 * cells + 1)


# ---- two-route law comparison ----

@dataclass(frozen=True)
class DualReport:
    rows: list
    verdict: str
    paths: int
    aligned_seeds: bool
    max_pathwise_discrepancy: Optional[float]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _var_stderr(x: np.ndarray):
    m = len(x)
    if m < 4:
        return float(np.var(x, ddof=1)) if m > 1 else 0.0, 0.0
    mu = pairwise_mean(x)
    d2 = (x - mu) ** 2
    var = float(pairwise_mean(d2) * m / (m - 1))
    return var, float(np.std(d2, ddof=1) / np.sqrt(m))


def dual_simulation_check(spec: CoefficientSpec, params: AppellParams, u0: Callable[[np.ndarray], np.ndarray],
                          target: Grid, steps: int, paths: int, master_seed: int,
                          checkpoint_times: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                          aligned_seeds: bool = False, h_gamma: float = 0.1, theta: float = 0.5,
                          n_sigma: float = 4.0, rel_floor: float = 1e-3,
                          source: Optional[Grid] = None) -> DualReport:
    """Route 1: the transformed equation on ``target`` with an identity clock.
    Route 2: the original equation on a wide grid along the clock b, transformed
    pathwise at the checkpoints.  Means and variances of ||.||^2 and of the
    gamma-weighted moment are compared."""
    tg = TimeGrid(steps)
    cps = tuple(float(t) for t in checkpoint_times)
    tp = transform_coefficients(spec, params, target)
    ladder = SeedLadder(master_seed)
    seeds_y = ladder.derive_many(np.arange(paths))
    other = master_seed if aligned_seeds else int(mix64(np.array([master_seed ^ 0xA5A5A5A5A5A5A5A5], dtype=np.uint64))[0])
    seeds_u = SeedLadder(other).derive_many(np.arange(paths))

    inc_y = sample_increments(seeds_y, tg)
    y_ens = solve_batch(transformed_initial(u0, params, target), tp.spec, inc_y, target,
                        SolverConfig(tg, theta, cps), seeds_y)

    src = source or (target if params.is_identity else source_grid_for(target, params))
    clock = params.clock()
    inc_u = sample_increments(seeds_u, tg, clock)
    u_vals0 = u0(src.coords)
    u_ens = solve_batch(u_vals0, spec, inc_u, src, SolverConfig(tg, theta, cps, clock=clock), seeds_u)

    rows = []
    ok = True
    worst_path = 0.0
    for j, t in enumerate(cps):
        yA = y_ens.values[:, j]
        yB, hidden = transform_values(u_ens.values[:, j], src, params, t, target)
        if aligned_seeds:
            worst_path = max(worst_path, float(np.max(np.abs(yA - yB))))
        for name, g in (("norm", 0.0), ("H", h_gamma)):
            logw = g * target.radius_sq
            a_vals = weighted_l2_sq_array(yA, logw, target)
            b_vals = weighted_l2_sq_array(yB, logw, target)
            ma, sa = mean_stderr(a_vals)
            mb, sb = mean_stderr(b_vals)
            va, sva = _var_stderr(a_vals)
            vb, svb = _var_stderr(b_vals)
            mean_tol = n_sigma * np.hypot(sa, sb) + rel_floor * max(abs(ma), abs(mb))
            var_tol = n_sigma * np.hypot(sva, svb) + rel_floor * max(abs(va), abs(vb)) + 1e-300
            row_ok = abs(ma - mb) <= mean_tol and abs(va - vb) <= var_tol
            ok &= bool(row_ok)
            rows.append({"t": t, "functional": name, "direct_mean": float(ma), "direct_stderr": float(sa),
                         "transformed_mean": float(mb), "transformed_stderr": float(sb),
                         "direct_var": va, "transformed_var": vb, "mean_tol": float(mean_tol),
                         "var_tol": float(var_tol), "hidden_mass": hidden, "verdict": PASS if row_ok else FAIL})
    return DualReport(rows, PASS if ok else FAIL, paths, aligned_seeds, worst_path if aligned_seeds else None)
