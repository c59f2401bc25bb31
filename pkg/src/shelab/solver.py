"""Theta-scheme for du = (Lap u + V u) dt + G u dW on a truncated Dirichlet box.

The Laplacian is treated with implicitness theta; the potential and the noise
are explicit (Ito Euler-Maruyama).  Paths are advanced together but every
arithmetic operation is elementwise per path, so a path's result does not
depend on which other paths share its batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientSpec
from .grid import Field, Grid
from .stochastic import IDENTITY, Clock, SeedLadder, TimeGrid, WienerPath, bridge_refine, sample_path

CG_TOL = 1e-10
CG_MAXITER = 500


class SolverError(RuntimeError):
    pass


def uniform_checkpoints(count: int = 21) -> tuple:
    return tuple(np.linspace(0.0, 1.0, count))


@dataclass(frozen=True)
class SolverConfig:
    time_grid: TimeGrid
    theta: float = 0.5
    checkpoint_times: tuple = field(default_factory=uniform_checkpoints)
    noise_mode: str = "ito_explicit"
    clock: Clock = IDENTITY  # physical time of knot t_k is clock(t_k)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.noise_mode != "ito_explicit":
            raise ValueError(f"unsupported noise mode {self.noise_mode!r}")
        ts = tuple(float(t) for t in self.checkpoint_times)
        if len(ts) < 2 or ts[0] != 0.0 or abs(ts[-1] - 1.0) > 1e-12:
            raise ValueError("checkpoints must start at 0 and end at 1")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        object.__setattr__(self, "checkpoint_times", ts)
        self.checkpoint_indices  # validates membership in the knots

    @property
    def checkpoint_indices(self) -> tuple:
        return tuple(self.time_grid.index_of(t) for t in self.checkpoint_times)

    @property
    def physical_knots(self) -> np.ndarray:
        s = self.clock(self.time_grid.knots)
        s[0] = 0.0
        return s

    def describe(self) -> dict:
        return {"steps": self.time_grid.steps, "theta": self.theta,
                "checkpoints": list(self.checkpoint_times), "noise_mode": self.noise_mode,
                "clock": self.clock.name}


@dataclass(frozen=True, eq=False)
class Trajectory:
    checkpoints: list  # [(t, Field)]
    path_seed: Optional[int]
    config: dict

    def at(self, t: float) -> Field:
        for s, f in self.checkpoints:
            if abs(s - t) <= 1e-12:
                return f
        raise KeyError(f"{t} is not a checkpoint")

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.checkpoints])


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Checkpointed fields of many paths: values has shape (paths, checkpoints, *grid.shape).

    ``times`` are the physical times of the checkpoints.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    seeds: np.ndarray

    @property
    def paths(self) -> int:
        return self.values.shape[0]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.abs(self.times - t) <= 1e-12)
        if hits.size == 0:
            raise KeyError(f"{t} is not a checkpoint")
        return int(hits[0])

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.index(t)]

    def trajectory(self, i: int, config: Optional[dict] = None) -> Trajectory:
        cps = [(float(t), Field(self.grid, self.values[i, j])) for j, t in enumerate(self.times)]
        seed = None if self.seeds is None else int(self.seeds[i])
        return Trajectory(cps, seed, config or {})

    def subset(self, idx) -> "Ensemble":
        seeds = None if self.seeds is None else self.seeds[idx]
        return Ensemble(self.grid, self.times, self.values[idx], seeds)

    @staticmethod
    def concat(parts: Sequence["Ensemble"]) -> "Ensemble":
        first = parts[0]
        seeds = None if first.seeds is None else np.concatenate([p.seeds for p in parts])
        return Ensemble(first.grid, first.times, np.concatenate([p.values for p in parts]), seeds)


# ---- linear algebra ----

@lru_cache(maxsize=256)
def _thomas_factors(n: int, lam: float) -> tuple:
    """Factorization of tridiag(-lam, 1 + 2 lam, -lam) of size n."""
    diag, off = 1.0 + 2.0 * lam, -lam
    inv = np.empty(n)
    cp = np.empty(n)
    inv[0] = 1.0 / diag
    cp[0] = off * inv[0]
    for i in range(1, n):
        inv[i] = 1.0 / (diag - off * cp[i - 1])
        cp[i] = off * inv[i]
    return off, inv, cp


def _thomas_solve(rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve along axis 0 for every column of rhs (shape (n, paths))."""
    n = rhs.shape[0]
    off, inv, cp = _thomas_factors(n, float(lam))
    y = np.empty_like(rhs)
    tmp = np.empty_like(rhs[0])
    np.multiply(rhs[0], inv[0], out=y[0])
    for i in range(1, n):
        np.multiply(y[i - 1], off, out=tmp)
        np.subtract(rhs[i], tmp, out=y[i])
        y[i] *= inv[i]
    for i in range(n - 2, -1, -1):
        np.multiply(y[i + 1], cp[i], out=tmp)
        y[i] -= tmp
    return y


def _lap_interior_1d(u: np.ndarray, h2: float) -> np.ndarray:
    """Laplacian of interior unknowns (axis 0) with zero Dirichlet neighbours."""
    out = -2.0 * u
    out[1:] += u[:-1]
    out[:-1] += u[1:]
    out /= h2
    return out


def _lap_interior_2d(u: np.ndarray, h2: float) -> np.ndarray:
    """u has shape (paths, n, n)."""
    out = -4.0 * u
    out[:, 1:, :] += u[:, :-1, :]
    out[:, :-1, :] += u[:, 1:, :]
    out[:, :, 1:] += u[:, :, :-1]
    out[:, :, :-1] += u[:, :, 1:]
    out /= h2
    return out


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a.shape[0]
    return np.sum((a * b).reshape(m, -1), axis=1)


def _cg_solve(rhs: np.ndarray, coef: float, h2: float) -> np.ndarray:
    """Batched conjugate gradients for (I - coef*Lap) x = rhs; paths freeze once converged."""
    x = rhs.copy()
    r = rhs - (x - coef * _lap_interior_2d(x, h2))
    p = r.copy()
    rr = _rowdot(r, r)
    bnorm = np.sqrt(_rowdot(rhs, rhs))
    tol = CG_TOL * np.where(bnorm > 0, bnorm, 1.0)
    active = np.sqrt(rr) > tol
    it = 0
    while np.any(active):
        if it >= CG_MAXITER:
            raise SolverError("conjugate gradients did not converge")
        idx = np.flatnonzero(active)
        pa = p[idx]
        Ap = pa - coef * _lap_interior_2d(pa, h2)
        alpha = rr[idx] / _rowdot(pa, Ap)
        x[idx] += alpha[:, None, None] * pa
        r_new = r[idx] - alpha[:, None, None] * Ap
        rr_new = _rowdot(r_new, r_new)
        beta = rr_new / rr[idx]
        r[idx] = r_new
        p[idx] = r_new + beta[:, None, None] * pa
        rr[idx] = rr_new
        active[idx] = np.sqrt(rr_new) > tol[idx]
        it += 1
    return x


# ---- time stepping ----

def _advance_1d(U, V, G, dt, dW, theta, h2):
    """One step for interior unknowns U (n, paths); V, G are (n,), dW is (paths,)."""
    lap = _lap_interior_1d(U, h2)
    rhs = U + ((1.0 - theta) * dt) * lap + (dt * V)[:, None] * U + G[:, None] * U * dW[None, :]
    if theta == 0.0:
        return rhs
    return _thomas_solve(rhs, theta * dt / h2)


def _advance_2d(U, V, G, dt, dW, theta, h2):
    """U has shape (paths, n, n)."""
    lap = _lap_interior_2d(U, h2)
    rhs = U + ((1.0 - theta) * dt) * lap + (dt * V)[None] * U + G[None] * U * dW[:, None, None]
    if theta == 0.0:
        return rhs
    return _cg_solve(rhs, theta * dt, h2)


def _interior_slices(dim):
    return (slice(1, -1),) * dim


def solve_batch(u0: np.ndarray, spec: CoefficientSpec, increments: np.ndarray, grid: Grid,
                cfg: SolverConfig, seeds: Optional[np.ndarray] = None,
                u0_batch: bool = False) -> Ensemble:
    """Advance all rows of ``increments`` (shape (paths, steps)) from u0.

    u0 is one field (shape grid.shape) shared by all paths, or a batch of
    shape (paths, *grid.shape) when ``u0_batch`` is set.
    """
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    M, K = increments.shape
    if K != cfg.time_grid.steps:
        raise SolverError(f"path has {K} increments, time grid has {cfg.time_grid.steps} steps")
    s = cfg.physical_knots
    h2 = grid.spacing**2
    sl = _interior_slices(grid.dim)
    xin = grid.coords[(slice(None),) + sl]
    u0 = np.asarray(u0, dtype=float)
    ck = cfg.checkpoint_indices
    out = np.zeros((M, len(ck)) + grid.shape)

    if grid.dim == 1:
        if u0_batch:
            U = np.ascontiguousarray(u0[:, 1:-1].T)
        else:
            U = np.repeat(u0[1:-1, None], M, axis=1)
        store = lambda j: out.__setitem__((slice(None), j, slice(1, -1)), U.T)
        advance = _advance_1d
        dW_at = lambda k: increments[:, k]
    else:
        U = u0[(slice(None),) + sl].copy() if u0_batch else np.repeat(u0[sl][None], M, axis=0)
        store = lambda j: out.__setitem__((slice(None), j) + sl, U)
        advance = _advance_2d
        dW_at = lambda k: increments[:, k]

    j = 0
    if ck[0] == 0:
        store(0)
        j = 1
    for k in range(K):
        t = float(s[k])
        dt = float(s[k + 1] - s[k])
        V = np.asarray(spec.V(t, xin), dtype=float)
        G = np.asarray(spec.G(t, xin), dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            # blow-up is detected and reported below
            U = advance(U, V, G, dt, dW_at(k), cfg.theta, h2)
        if j < len(ck) and ck[j] == k + 1:
            if not np.all(np.isfinite(U)):
                bad = _first_bad_path(U, grid.dim)
                seed = None if seeds is None else int(seeds[bad])
                raise SolverError(f"non-finite solution at t = {s[k + 1]:.6g} on path {bad} (seed {seed})")
            store(j)
            j += 1
    times = s[list(ck)]
    return Ensemble(grid, times, out, None if seeds is None else np.asarray(seeds))


def _first_bad_path(U, dim):
    if dim == 1:
        bad = ~np.all(np.isfinite(U), axis=0)
    else:
        bad = ~np.all(np.isfinite(U.reshape(U.shape[0], -1)), axis=1)
    return int(np.flatnonzero(bad)[0])


def step(u: Field, t: float, dt: float, dW: float, spec: CoefficientSpec, cfg: SolverConfig) -> Field:
    """A single theta-scheme step of one field."""
    grid = u.grid
    h2 = grid.spacing**2
    sl = _interior_slices(grid.dim)
    xin = grid.coords[(slice(None),) + sl]
    V = np.asarray(spec.V(t, xin), dtype=float)
    G = np.asarray(spec.G(t, xin), dtype=float)
    dWv = np.array([float(dW)])
    if grid.dim == 1:
        U = _advance_1d(u.values[1:-1, None].copy(), V, G, dt, dWv, cfg.theta, h2)[:, 0]
    else:
        U = _advance_2d(u.values[sl][None].copy(), V, G, dt, dWv, cfg.theta, h2)[0]
    if not np.all(np.isfinite(U)):
        raise SolverError("non-finite output")
    out = np.zeros(grid.shape)
    out[sl] = U
    return Field(grid, out)


def solve_path(u0: Field, spec: CoefficientSpec, path: WienerPath, cfg: SolverConfig) -> Trajectory:
    if path.time_grid != cfg.time_grid:
        raise SolverError("path and solver use different time grids")
    ens = solve_batch(u0.values, spec, path.increments[None], u0.grid, cfg, np.array([path.seed], dtype=np.uint64))
    return ens.trajectory(0, cfg.describe())


def solve_paths(u0: Field, spec: CoefficientSpec, paths: Sequence[WienerPath], cfg: SolverConfig) -> Ensemble:
    inc = np.stack([p.increments for p in paths])
    seeds = np.array([p.seed for p in paths], dtype=np.uint64)
    return solve_batch(u0.values, spec, inc, u0.grid, cfg, seeds)


# ---- empirical convergence ----

def _l2(v: np.ndarray, grid: Grid) -> np.ndarray:
    from .grid import quad_array
    return np.sqrt(quad_array(v * v, grid))


def convergence_report(u0: Callable[[np.ndarray], np.ndarray], spec: CoefficientSpec, seed: int,
                       refinements: int, grid: Grid, steps: int, paths: int = 1,
                       refine: str = "time", theta: float = 0.5) -> list:
    """Successive-difference errors at t = 1 over a refinement ladder.

    refine = "time": steps doubles at each level; increments are refined by
    Brownian bridges so every level sees the same path.  refine = "space": the
    spacing halves with a fixed time grid.  Each row reports the RMS over paths
    of the L2 difference between consecutive levels and the observed order.
    """
    ladder = SeedLadder(seed)
    seeds = ladder.derive_many(np.arange(paths))
    levels = []
    g, K = grid, steps
    base_paths = [sample_path(int(s), TimeGrid(steps)) for s in seeds]
    cur_paths = base_paths
    for lev in range(refinements + 1):
        cfg = SolverConfig(TimeGrid(K), theta, (0.0, 1.0))
        inc = np.stack([p.increments for p in cur_paths])
        ens = solve_batch(u0(g.coords), spec, inc, g, cfg)
        levels.append((g, K, ens.values[:, -1]))
        if lev == refinements:
            break
        if refine == "time":
            cur_paths = [bridge_refine(p, lev + 1) for p in cur_paths]
            K *= 2
        elif refine == "space":
            g = g.refined()
        else:
            raise ValueError("refine must be 'time' or 'space'")
    rows = []
    for lev in range(refinements):
        (g0, K0, a), (g1, _, b) = levels[lev], levels[lev + 1]
        if g1 is not g0:
            b = b[(slice(None),) + (slice(None, None, 2),) * g0.dim]
        err = float(np.sqrt(np.mean(_l2(a - b, g0) ** 2)))
        rows.append({"level": lev, "steps": K0, "spacing": g0.spacing, "error": err})
    for i in range(1, len(rows)):
        prev, cur = rows[i - 1]["error"], rows[i]["error"]
        rows[i]["order"] = float(np.log2(prev / cur)) if cur > 0 and prev > 0 else float("nan")
    if rows:
        rows[0]["order"] = float("nan")
    return rows
