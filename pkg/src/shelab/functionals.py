"""Weighted second moments and the log-convexity machinery built on them.

For a weight w and a solution ensemble u, f = e^w u and
  H = E||f||^2,  H_G = E||G f||^2,  D = E(S f, f),  D_G = E(S(G f), G f)
with S = Laplacian + P, where P comes from the weight family.  The correction
F solves F' = -2E(Vf,f)/H - H_G/H, F(0) = 0, and Q = F + t(1-t)M^2.

Standard errors of derived quantities use per-path influence functions, so the
correlation of a path's contributions across checkpoints is accounted for.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import CoefficientBounds, CoefficientSpec, check_assumption_A2
from .grid import (dirichlet_energy_array, gradient_array, hessian_sq_array, quad_array,
                   weighted_field_array, weighted_l2_sq_array)
from .solver import Ensemble
from .weights import QuadraticWeight, build_mollified

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


class VanishingFunctionalError(ArithmeticError):
    pass


class PreconditionError(ValueError):
    pass


def mean_stderr(samples: np.ndarray, axis: int = 0):
    """Sample mean and standard error along ``axis`` (stderr 0 for one sample)."""
    samples = np.asarray(samples, dtype=float)
    m = samples.shape[axis]
    mean = pairwise_mean(samples, axis)
    if m < 2:
        return mean, np.zeros_like(mean)
    # scale first so squares of huge weighted norms stay finite
    scale = np.max(np.abs(samples), axis=axis, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    dev = (samples - np.expand_dims(mean, axis)) / scale
    var = pairwise_mean(dev * dev, axis) * (m / (m - 1))
    return mean, np.sqrt(var / m) * np.squeeze(scale, axis)


def pairwise_sum(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along axis by recursive halving in index order (fixed association)."""
    a = np.moveaxis(np.asarray(samples, dtype=float), axis, 0)
    while a.shape[0] > 1:
        n = a.shape[0]
        half = n // 2
        head = a[: 2 * half : 2] + a[1 : 2 * half : 2]
        a = np.concatenate([head, a[2 * half :]]) if n % 2 else head
    return a[0] if a.shape[0] else np.zeros(a.shape[1:])


def pairwise_mean(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    return pairwise_sum(samples, axis) / np.asarray(samples).shape[axis]


# ---- per-path quantities ----

@dataclass(frozen=True, eq=False)
class PathValues:
    """Per-path functional contributions with shape (paths, checkpoints)."""

    H: np.ndarray
    HG: np.ndarray
    D: np.ndarray
    DG: np.ndarray
    VFF: np.ndarray


def path_values(ens: Ensemble, spec: CoefficientSpec, weight, with_forms: bool = True) -> PathValues:
    grid = ens.grid
    x = grid.coords
    M, J = ens.values.shape[:2]
    out = {k: np.zeros((M, J)) for k in ("H", "HG", "D", "DG", "VFF")}
    for j, t in enumerate(ens.times):
        t = float(t)
        u = ens.values[:, j]
        logw = weight.log_weight(t, x)
        f = weighted_field_array(u, logw)
        G = spec.G(t, x)
        V = spec.V(t, x)
        f2 = f * f
        gf = G * f
        out["H"][:, j] = quad_array(f2, grid)
        out["HG"][:, j] = quad_array(gf * gf, grid)
        out["VFF"][:, j] = quad_array(V * f2, grid)
        if with_forms:
            P = weight.potential(t, x)
            out["D"][:, j] = -dirichlet_energy_array(f, grid) + quad_array(P * f2, grid)
            out["DG"][:, j] = -dirichlet_energy_array(gf, grid) + quad_array(P * gf * gf, grid)
    return PathValues(**out)


def weighted_moment(ens: Ensemble, weight, t: float):
    j = ens.index(t)
    logw = weight.log_weight(float(ens.times[j]), ens.grid.coords)
    vals = weighted_l2_sq_array(ens.values[:, j], logw, ens.grid)
    m, se = mean_stderr(vals)
    return float(m), float(se)


def _form_at(ens: Ensemble, weight, t: float, multiplier=None):
    j = ens.index(t)
    t = float(ens.times[j])
    x = ens.grid.coords
    f = weighted_field_array(ens.values[:, j], weight.log_weight(t, x))
    if multiplier is not None:
        f = f * multiplier(t, x)
    vals = -dirichlet_energy_array(f, ens.grid) + quad_array(weight.potential(t, x) * f * f, ens.grid)
    m, se = mean_stderr(vals)
    return float(m), float(se)


def dirichlet_form(ens: Ensemble, weight, t: float):
    return _form_at(ens, weight, t)


def dg_form(ens: Ensemble, weight, t: float, spec: CoefficientSpec):
    return _form_at(ens, weight, t, spec.G)


def dg_lower_bound(ens: Ensemble, weight, t: float, spec: CoefficientSpec):
    """-2E int |G|^2 |grad f|^2 - 2E int |grad G|^2 |f|^2 at checkpoint t."""
    j = ens.index(t)
    t = float(ens.times[j])
    g = ens.grid
    x = g.coords
    f = weighted_field_array(ens.values[:, j], weight.log_weight(t, x))
    gf = gradient_array(f, g.spacing, g.dim)
    G = spec.G(t, x)
    dG = spec.grad_G(t, x)
    grad_sq = np.sum(gf * gf, axis=0)
    vals = -2.0 * quad_array(G * G * grad_sq, g) - 2.0 * quad_array(np.sum(dG * dG, axis=0) * f * f, g)
    m, se = mean_stderr(vals)
    return float(m), float(se)


# ---- series ----

def _trapezoid_matrix(times: np.ndarray) -> np.ndarray:
    """C with (C @ y)_j = integral of the piecewise-linear y from t_0 to t_j."""
    J = len(times)
    C = np.zeros((J, J))
    for j in range(1, J):
        C[j] = C[j - 1]
        dt = times[j] - times[j - 1]
        C[j, j - 1] += 0.5 * dt
        C[j, j] += 0.5 * dt
    return C


@dataclass(frozen=True, eq=False)
class FunctionalSeries:
    times: np.ndarray
    H: np.ndarray
    H_se: np.ndarray
    HG: np.ndarray
    HG_se: np.ndarray
    D: np.ndarray
    D_se: np.ndarray
    DG: np.ndarray
    DG_se: np.ndarray
    VFF: np.ndarray
    VFF_se: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    bounds: CoefficientBounds
    weight: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    per_path: Optional[PathValues] = None

    @property
    def paths(self) -> int:
        return 1 if self.per_path is None else self.per_path.H.shape[0]


def f_correction(H: np.ndarray, VFF: np.ndarray, HG: np.ndarray, times: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if np.any(H <= 0):
        raise VanishingFunctionalError("H vanishes at a checkpoint; the ensemble is numerically dead")
    rate = -(2.0 * np.asarray(VFF) + np.asarray(HG)) / H
    return _trapezoid_matrix(np.asarray(times, dtype=float)) @ rate


def q_correction(F: np.ndarray, times: np.ndarray, M: float) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    return F + t * (1.0 - t) * M**2


def build_series(ens: Ensemble, spec: CoefficientSpec, weight, bounds: CoefficientBounds,
                 times: Optional[np.ndarray] = None) -> FunctionalSeries:
    """Series of all functionals; ``times`` overrides the ensemble's (physical) times
    as the abscissa used for F, Q and the second differences."""
    pv = path_values(ens, spec, weight)
    t = np.asarray(ens.times if times is None else times, dtype=float)
    stats = {k: mean_stderr(getattr(pv, k)) for k in ("H", "HG", "D", "DG", "VFF")}
    H = stats["H"][0]
    if np.all(H > 0):
        F = f_correction(H, stats["VFF"][0], stats["HG"][0], t)
    else:
        F = np.full_like(H, np.nan)
    return FunctionalSeries(
        times=t, H=H, H_se=stats["H"][1], HG=stats["HG"][0], HG_se=stats["HG"][1],
        D=stats["D"][0], D_se=stats["D"][1], DG=stats["DG"][0], DG_se=stats["DG"][1],
        VFF=stats["VFF"][0], VFF_se=stats["VFF"][1], F=F, Q=q_correction(F, t, bounds.M),
        bounds=bounds, weight=weight.describe(), ensemble={"paths": ens.paths}, per_path=pv)


def synthetic_series(times, H, Q=None, bounds: Optional[CoefficientBounds] = None) -> FunctionalSeries:
    """A noiseless series from given H (and optional Q) values."""
    t = np.asarray(times, dtype=float)
    H = np.asarray(H, dtype=float)
    z = np.zeros_like(H)
    Q = z.copy() if Q is None else np.asarray(Q, dtype=float)
    return FunctionalSeries(t, H, z, z, z, z, z, z, z, z, z, z.copy(), Q,
                            bounds or CoefficientBounds(0.0, 0.0, 0.0), {"family": "synthetic"})


# ---- convexity ----

@dataclass(frozen=True, eq=False)
class ConvexityReport:
    series: FunctionalSeries
    g: np.ndarray
    second_diff: np.ndarray
    defect_floor: float
    mc_stderr: np.ndarray
    allowance: np.ndarray
    tolerance: np.ndarray
    verdicts: np.ndarray
    verdict: str
    calibrated_N: float
    mc_only_verdicts: np.ndarray
    notes: list

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "defect_floor": self.defect_floor,
            "calibrated_N": self.calibrated_N,
            "min_margin": float(np.min(self.second_diff - self.defect_floor + self.tolerance)),
            "interior_points": int(len(self.second_diff)),
            "points_passing": int(np.sum(self.verdicts)),
            "points_passing_without_allowance": int(np.sum(self.mc_only_verdicts)),
            "bounds": self.series.bounds.as_dict(),
            "weight": self.series.weight,
            "paths": self.series.paths,
            "notes": self.notes,
        }

    def rows(self) -> list:
        s = self.series
        rows = []
        for j, t in enumerate(s.times):
            interior = 0 < j < len(s.times) - 1
            k = j - 1
            rows.append({
                "t": t, "H": s.H[j], "H_stderr": s.H_se[j], "HG": s.HG[j], "D": s.D[j], "DG": s.DG[j],
                "F": s.F[j], "Q": s.Q[j], "logH_plus_Q": self.g[j],
                "second_diff": self.second_diff[k] if interior else "",
                "tolerance": self.tolerance[k] if interior else "",
                "verdict": (PASS if self.verdicts[k] else FAIL) if interior else "",
            })
        return rows


def _influence(series: FunctionalSeries) -> Optional[np.ndarray]:
    """Per-path influence on g = log H + Q at each checkpoint, shape (paths, J)."""
    pv = series.per_path
    if pv is None or pv.H.shape[0] < 2 or np.any(series.H <= 0):
        return None
    H, Y, Z = series.H, series.VFF, series.HG
    dX = pv.H - H
    psi_log = dX / H
    psi_rate = -(2.0 * (pv.VFF - Y) + (pv.HG - Z)) / H + (2.0 * Y + Z) * dX / H**2
    C = _trapezoid_matrix(series.times)
    return psi_log + psi_rate @ C.T


def interpolation_constant(H: np.ndarray, times: np.ndarray, scale: float) -> float:
    """Smallest N >= 0 with H(t) <= exp(N*scale) H(0)^(1-t) H(1)^t at all checkpoints."""
    logH = np.log(H)
    t = np.asarray(times, dtype=float)
    excess = float(np.max(logH - (1.0 - t) * logH[0] - t * logH[-1]))
    if excess <= 0:
        return 0.0
    return excess / scale if scale > 0 else float("inf")


def convexity_check(series: FunctionalSeries, defect_floor: float = 0.0,
                    tolerance_scale: float = 1.0) -> ConvexityReport:
    t = series.times
    J = len(t)
    if J < 3:
        raise ValueError("convexity needs at least three checkpoints")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9:
        raise ValueError("checkpoints must be uniformly spaced")
    dt = float(dt[0])
    notes = []
    H = series.H
    vanishing = bool(np.any(H < 10.0 * series.H_se)) or bool(np.any(H <= 0))
    if np.any(H <= 0):
        g = np.full(J, np.nan)
    else:
        g = np.log(H) + series.Q
    s = (g[:-2] - 2.0 * g[1:-1] + g[2:]) / dt**2
    psi = _influence(series)
    if psi is None:
        se = np.zeros(J - 2)
    else:
        psi_s = (psi[:, :-2] - 2.0 * psi[:, 1:-1] + psi[:, 2:]) / dt**2
        m = psi_s.shape[0]
        se = np.sqrt(np.sum(psi_s**2, axis=0) / (m * (m - 1)))
    d3 = np.abs(g[3:] - 3.0 * g[2:-1] + 3.0 * g[1:-2] - g[:-3]) / dt**3 if J >= 4 else np.zeros(0)
    allowance = np.zeros(J - 2)
    for k in range(J - 2):
        j = k + 1  # checkpoint index of this second difference
        near = [d3[i] for i in (j - 2, j - 1) if 0 <= i < len(d3)]
        allowance[k] = 10.0 * dt * max(near) if near else 0.0
    tol = tolerance_scale * (3.0 * se + allowance)
    verdicts = s >= defect_floor - tol
    mc_only = s >= defect_floor - tolerance_scale * 3.0 * se
    if vanishing:
        verdict = INCONCLUSIVE
        notes.append("H below 10 standard errors at some checkpoint")
    else:
        verdict = PASS if bool(np.all(verdicts)) else FAIL
    if verdict == PASS and not np.all(mc_only):
        notes.append("pass relies on the discretization allowance at some points")
    N = interpolation_constant(H, t, series.bounds.interpolation_scale) if np.all(H > 0) else float("nan")
    return ConvexityReport(series, g, s, float(defect_floor), se, allowance, tol, verdicts, verdict, N, mc_only, notes)


def integrand_positivity(ens: Ensemble, gamma: float, M0: float) -> tuple:
    """Minimum over paths and checkpoints of the two non-negative combinations
    2(4 gamma - M0^2) int|grad f|^2 and 4 gamma^2 (8 gamma - M0^2) int |x|^2 f^2."""
    grid = ens.grid
    w = QuadraticWeight(gamma)
    lo1 = lo2 = np.inf
    for j, t in enumerate(ens.times):
        f = weighted_field_array(ens.values[:, j], w.log_weight(float(t), grid.coords))
        c1 = 2.0 * (4.0 * gamma - M0**2) * dirichlet_energy_array(f, grid)
        c2 = 4.0 * gamma**2 * (8.0 * gamma - M0**2) * quad_array(grid.radius_sq * f * f, grid)
        lo1 = min(lo1, float(np.min(c1)))
        lo2 = min(lo2, float(np.min(c2)))
    return lo1, lo2


# ---- energy estimate ----

@dataclass(frozen=True)
class EnergyReport:
    lhs: float
    lhs_stderr: float
    rhs0: float
    MGV: float
    C_min: float
    verdict: str
    tolerance: float
    sup_semantics: str = "checkpoint-sup"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def energy_check(ens: Ensemble, gamma: float, bounds: CoefficientBounds, tolerance: float = 1e-3) -> EnergyReport:
    grid = ens.grid
    w_t = QuadraticWeight(gamma, time_dependent=True)
    per_t = np.stack([weighted_l2_sq_array(ens.values[:, j], w_t.log_weight(float(t), grid.coords), grid)
                      for j, t in enumerate(ens.times)], axis=1)
    lhs, lhs_se = mean_stderr(np.max(per_t, axis=1))
    j0 = ens.index(0.0)
    rhs0 = float(pairwise_mean(weighted_l2_sq_array(ens.values[:, j0], gamma * grid.radius_sq, grid)))
    lhs, lhs_se = float(lhs), float(lhs_se)
    MGV = bounds.MGV
    if rhs0 == 0.0:
        return EnergyReport(lhs, lhs_se, rhs0, MGV, 0.0, PASS if lhs == 0.0 else FAIL, tolerance)
    excess = np.log(lhs / rhs0) if lhs > 0 else -np.inf
    if MGV == 0.0:
        ok = lhs <= rhs0 * (1.0 + tolerance)
        return EnergyReport(lhs, lhs_se, rhs0, MGV, 0.0, PASS if ok else FAIL, tolerance)
    C = max(0.0, float(excess)) / MGV
    return EnergyReport(lhs, lhs_se, rhs0, MGV, C, PASS if np.isfinite(C) else FAIL, tolerance)


def relative_change(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


# ---- integrated estimate ----

@dataclass(frozen=True)
class IntegratedReport:
    mass_integral: float
    moment_integral: float
    gradient_integral: float
    initial_term: float
    final_term: float
    sup_mass: float
    N_min: float

    @property
    def lhs(self) -> float:
        return self.mass_integral + self.moment_integral + self.gradient_integral

    @property
    def rhs(self) -> float:
        return self.initial_term + self.final_term + self.sup_mass

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(lhs=self.lhs, rhs=self.rhs)
        return d


def integrated_estimate_check(ens: Ensemble, gamma: float, spec: CoefficientSpec,
                              bounds: CoefficientBounds, epsilon: float,
                              time_samples=None) -> IntegratedReport:
    if not gamma > bounds.M0**2 / 4.0:
        raise PreconditionError(f"gamma = {gamma} does not exceed M0^2/4 = {bounds.M0**2 / 4.0}")
    a2 = check_assumption_A2(spec, gamma, epsilon, ens.grid, time_samples)
    if not a2.passed:
        raise PreconditionError(f"noise violates the decay assumption at gamma={gamma}, eps={epsilon}")
    g = ens.grid
    logw = gamma * g.radius_sq
    t = np.asarray(ens.times, dtype=float)
    J = len(t)
    T1 = np.zeros(J)
    T2 = np.zeros(J)
    T3 = np.zeros(J)
    mass = np.zeros(J)
    for j in range(J):
        u = ens.values[:, j]
        T1[j] = pairwise_mean(weighted_l2_sq_array(u, logw, g))
        f = weighted_field_array(u, logw)
        T2[j] = pairwise_mean(quad_array(g.radius_sq * f * f, g))
        du = gradient_array(u, g.spacing, g.dim)
        wdu = weighted_field_array(du, np.broadcast_to(logw, du.shape))
        T3[j] = pairwise_mean(quad_array(np.sum(wdu * wdu, axis=0), g))
        mass[j] = pairwise_mean(quad_array(u * u, g))
    C = _trapezoid_matrix(t)[-1]
    s = t * (1.0 - t)
    rep = IntegratedReport(float(C @ T1), float(C @ (s * T2)), float(C @ (s * T3)),
                           float(T1[0]), float(T1[-1]), float(np.max(mass)), 0.0)
    N = rep.lhs / rep.rhs if rep.rhs > 0 else 0.0
    return IntegratedReport(**{**rep.__dict__, "N_min": float(N)})


# ---- interior regularity ----

@dataclass(frozen=True)
class InteriorReport:
    gradient_sup: float
    hessian_integral: float
    eps: float
    a: float
    gamma: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def interior_finiteness_check(ens: Ensemble, gamma: float, a: float, eps: float) -> InteriorReport:
    g = ens.grid
    r_edge = float(np.sqrt(np.max(g.radius_sq)))
    w = build_mollified(a, gamma, r_max=max(4.0 * max(gamma, 2.0), r_edge + 1.0))
    logw = w.log_weight(0.0, g.coords)
    t = np.asarray(ens.times, dtype=float)
    keep = t >= eps - 1e-12
    grad_vals, hess_vals = [], []
    for j in np.flatnonzero(keep):
        u = ens.values[:, j]
        du = gradient_array(u, g.spacing, g.dim)
        wdu = weighted_field_array(du, np.broadcast_to(logw, du.shape))
        sq = np.sum(wdu * wdu, axis=0)  # components lead
        grad_vals.append(float(pairwise_mean(quad_array(sq, g))))
        h2 = hessian_sq_array(u, g.spacing, g.dim)
        wh = weighted_l2_sq_array(np.sqrt(h2), logw, g)
        hess_vals.append(float(pairwise_mean(wh)))
    tk = t[keep]
    hess_int = float(np.sum(0.5 * (np.array(hess_vals[1:]) + np.array(hess_vals[:-1])) * np.diff(tk))) if len(tk) > 1 else 0.0
    return InteriorReport(float(max(grad_vals)) if grad_vals else 0.0, hess_int, eps, a, gamma)
