"""Path-parallel ensemble runs with deterministic aggregation."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..coefficients import CoefficientSpec
from ..functionals import mean_stderr
from ..grid import Grid, weighted_l2_sq_array
from ..solver import Ensemble, SolverConfig, SolverError, solve_batch
from ..stochastic import SeedLadder, WienerPath, bridge_refine, sample_increments
from .config import EnsembleConfig


class RunError(RuntimeError):
    pass


def _chunks(n: int, workers: int) -> list:
    size = -(-n // workers)
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


def simulate(grid: Grid, spec: CoefficientSpec, u0: np.ndarray, cfg: SolverConfig, master_seed: int,
             paths: int, workers: int = 1, increments: Optional[np.ndarray] = None) -> Ensemble:
    """Solve ``paths`` paths, seeds from the ladder of ``master_seed``.

    Work is split into contiguous path blocks; blocks are reassembled in path
    order, and every path's arithmetic is independent of its block, so the
    result does not depend on ``workers``."""
    seeds = SeedLadder(master_seed).derive_many(np.arange(paths))
    if increments is None:
        increments = sample_increments(seeds, cfg.time_grid, cfg.clock)

    def run(block):
        lo, hi = block
        return solve_batch(u0, spec, increments[lo:hi], grid, cfg, seeds[lo:hi])

    blocks = _chunks(paths, max(1, min(workers, paths)))
    if len(blocks) == 1:
        return run(blocks[0])
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        parts = list(pool.map(run, blocks))
    return Ensemble.concat(parts)


def refined_increments(increments: np.ndarray, seeds: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Halve every step of each path by Brownian-bridge refinement."""
    rows = [bridge_refine(WienerPath(cfg.time_grid, inc, int(s), cfg.clock)).increments
            for inc, s in zip(increments, seeds)]
    return np.array(rows)


@dataclass(frozen=True)
class FunctionalStats:
    name: str
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def rows(self) -> list:
        return [{"functional": self.name, "t": float(t), "mean": float(m), "stderr": float(s),
                 "min": float(lo), "max": float(hi)}
                for t, m, s, lo, hi in zip(self.times, self.mean, self.stderr, self.min, self.max)]


@dataclass(frozen=True)
class EnsembleStats:
    functionals: dict
    paths: int
    wall_clock: float = field(default=0.0, compare=False)

    def rows(self) -> list:
        out = []
        for f in self.functionals.values():
            out.extend(f.rows())
        return out


def functional_stats(name: str, per_path: np.ndarray, times: np.ndarray) -> FunctionalStats:
    m, se = mean_stderr(per_path)
    return FunctionalStats(name, np.asarray(times), m, se, per_path.min(axis=0), per_path.max(axis=0))


def ensemble_stats(ens: Ensemble, registry: dict, wall_clock: float = 0.0) -> EnsembleStats:
    """``registry`` maps a name to a log-weight function (t, coords) -> array."""
    g = ens.grid
    out = {}
    for name, logw_fn in registry.items():
        vals = np.stack([weighted_l2_sq_array(ens.values[:, j], logw_fn(float(t), g.coords), g)
                         for j, t in enumerate(ens.times)], axis=1)
        out[name] = functional_stats(name, vals, ens.times)
    return EnsembleStats(out, ens.paths, wall_clock)


def default_registry(cfg: EnsembleConfig) -> dict:
    gamma = cfg.weight.gamma
    return {
        "norm": lambda t, x: np.zeros(x.shape[1:]),
        "H": lambda t, x: gamma * np.sum(x * x, axis=0),
    }


@dataclass(frozen=True, eq=False)
class RunResult:
    ensemble: Ensemble
    stats: EnsembleStats


def run_ensemble(cfg: EnsembleConfig, registry: Optional[dict] = None) -> RunResult:
    grid = cfg.make_grid()
    u0 = cfg.initial_fn()(grid.coords)
    t0 = time.perf_counter()
    try:
        ens = simulate(grid, cfg.spec(), u0, cfg.solver_config(), cfg.seed, cfg.paths, cfg.workers)
    except SolverError as exc:
        raise RunError(str(exc)) from exc
    stats = ensemble_stats(ens, registry or default_registry(cfg), time.perf_counter() - t0)
    return RunResult(ens, stats)
