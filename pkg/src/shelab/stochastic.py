"""Reproducible Wiener increments.

Randomness comes from a counter-based SplitMix64 stream: output k of a stream
with seed s is mix64(s + (k+1)*GOLDEN) mod 2**64.  Uniforms take the top 53
bits and Gaussians come from the Box-Muller transform of consecutive uniform
pairs.  Only integer arithmetic and IEEE log/sqrt/cos/sin are involved, so
streams are identical across runs and platforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
# separate odd increment for seed derivation so path seeds and stream words differ
LADDER_STEP = 0xD1B54A32D192ED03
BRIDGE_SALT = 0x94D049BB133111EB


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer; a bijection of uint64."""
    z = np.array(x, dtype=np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


def stream_words(seed: int, count: int, offset: int = 0) -> np.ndarray:
    k = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        ctr = np.uint64(seed & MASK64) + k * np.uint64(GOLDEN)
    return mix64(ctr)


def uniforms(seed: int, count: int) -> np.ndarray:
    """Doubles in the open interval (0, 1)."""
    w = stream_words(seed, count)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(seed: int, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    u = uniforms(seed, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    ang = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(ang)
    z[:, 1] = r * np.sin(ang)
    return z.reshape(-1)[:count]


@dataclass(frozen=True)
class SeedLadder:
    """Maps path indices to stream seeds: seed_i = mix64(master + (i+1)*LADDER_STEP)."""

    master_seed: int

    def derive(self, path_index: int) -> int:
        return int(self.derive_many(np.array([path_index]))[0])

    def derive_many(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.uint64)
        with np.errstate(over="ignore"):
            ctr = np.uint64(self.master_seed & MASK64) + (idx + np.uint64(1)) * np.uint64(LADDER_STEP)
        return mix64(ctr)

    def describe(self) -> dict:
        return {"master_seed": int(self.master_seed), "map": "splitmix64(master + (i+1)*0xD1B54A32D192ED03)"}


def derive_seed(ladder: SeedLadder, path_index: int) -> int:
    if path_index < 0:
        raise ValueError("path index must be non-negative")
    return ladder.derive(path_index)


@dataclass(frozen=True)
class TimeGrid:
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("a time grid needs at least one step")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.steps + 1) / self.steps

    def index_of(self, t: float) -> int:
        k = int(round(t * self.steps))
        if abs(k / self.steps - t) > 1e-12 or not 0 <= k <= self.steps:
            raise ValueError(f"t = {t} is not a knot of a {self.steps}-step grid")
        return k

    def refined(self) -> "TimeGrid":
        return TimeGrid(2 * self.steps)


@dataclass(frozen=True)
class Clock:
    """Identity clock when ``fn`` is None, else the time change t -> fn(t)."""

    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "identity"

    @property
    def is_identity(self) -> bool:
        return self.fn is None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return t.copy() if self.fn is None else np.asarray(self.fn(t), dtype=float)


IDENTITY = Clock()


def _clock_variances(time_grid: TimeGrid, clock: Clock) -> np.ndarray:
    if clock.is_identity:
        return np.full(time_grid.steps, time_grid.dt)
    b = clock(time_grid.knots)
    if abs(b[0]) > 1e-14:
        raise ValueError("time change must start at 0")
    var = np.diff(b)
    if np.any(var <= 0):
        raise ValueError("time change must be strictly increasing")
    return var


@dataclass(frozen=True, eq=False)
class WienerPath:
    time_grid: TimeGrid
    increments: np.ndarray
    seed: int
    clock: Clock = field(default=IDENTITY)

    def cumulative(self) -> np.ndarray:
        """W at the (clock-mapped) knots, starting from 0."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    @property
    def variances(self) -> np.ndarray:
        return _clock_variances(self.time_grid, self.clock)


def sample_path(seed: int, time_grid: TimeGrid, clock: Clock = IDENTITY) -> WienerPath:
    var = _clock_variances(time_grid, clock)
    z = standard_normals(seed, time_grid.steps)
    return WienerPath(time_grid, z * np.sqrt(var), int(seed), clock)


def sample_increments(seeds, time_grid: TimeGrid, clock: Clock = IDENTITY) -> np.ndarray:
    """Increment matrix of shape (paths, steps), row i from seeds[i]."""
    var = _clock_variances(time_grid, clock)
    sd = np.sqrt(var)
    out = np.empty((len(seeds), time_grid.steps))
    for i, s in enumerate(seeds):
        out[i] = standard_normals(int(s), time_grid.steps) * sd
    return out


def bridge_refine(path: WienerPath, level: int = 1) -> WienerPath:
    """Split every step in two, conditioning on the coarse increment.

    The midpoint of each step is drawn from the Brownian bridge, so the refined
    path passes through the same values at the coarse knots.
    """
    tg = path.time_grid
    fine = tg.refined()
    var_f = _clock_variances(fine, path.clock)
    v1, v2 = var_f[0::2], var_f[1::2]
    bridge_seed = int(mix64(np.array([(path.seed ^ (BRIDGE_SALT * level)) & MASK64]))[0])
    z = standard_normals(bridge_seed, tg.steps)
    first = path.increments * (v1 / (v1 + v2)) + np.sqrt(v1 * v2 / (v1 + v2)) * z
    inc = np.empty(fine.steps)
    inc[0::2] = first
    inc[1::2] = path.increments - first
    return WienerPath(fine, inc, path.seed, path.clock)
