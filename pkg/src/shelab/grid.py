"""Truncated uniform grids in one or two dimensions.

All operators use the homogeneous Dirichlet convention: boundary nodes hold
zero and the ghost value outside the box is zero.  Array-level helpers act on
the trailing ``dim`` axes so they apply unchanged to batches of paths.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

LOG_MAX = float(np.log(np.finfo(float).max))


class GridError(ValueError):
    pass


class WeightOverflowError(FloatingPointError):
    """A weighted summand would not fit in a double."""


@dataclass(frozen=True)
class Grid:
    dim: int
    half_width: float
    points: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        if not self.half_width > 0:
            raise GridError("half_width must be positive")
        if self.points < 3 or self.points % 2 == 0:
            raise GridError(f"points per axis must be odd and >= 3, got {self.points}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points - 1)

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.dim

    @property
    def origin_index(self) -> tuple:
        return ((self.points - 1) // 2,) * self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        i = np.arange(self.points)
        x = -self.half_width + i * self.spacing
        x[self.points // 2] = 0.0
        # exact symmetry of the node set
        return 0.5 * (x - x[::-1])

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates with shape (dim, *shape)."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(mesh)

    @cached_property
    def radius_sq(self) -> np.ndarray:
        return np.sum(self.coords**2, axis=0)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w1 = np.full(self.points, self.spacing)
        w1[0] = w1[-1] = 0.5 * self.spacing
        w = w1
        for _ in range(self.dim - 1):
            w = np.multiply.outer(w, w1)
        return w

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of non-boundary nodes."""
        m1 = np.ones(self.points, dtype=bool)
        m1[0] = m1[-1] = False
        m = m1
        for _ in range(self.dim - 1):
            m = np.logical_and.outer(m, m1)
        return m

    def refined(self) -> "Grid":
        """Same box with the spacing halved (nodes nest)."""
        return Grid(self.dim, self.half_width, 2 * self.points - 1)


def make_grid(dim: int, L: float, N: int) -> Grid:
    return Grid(dim, float(L), int(N))


@dataclass(frozen=True, eq=False)
class Field:
    """One real-valued function on the grid; boundary nodes are forced to zero."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridError(f"values have shape {v.shape}, grid wants {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("field values must be finite")
        v[~self.grid.interior] = 0.0
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, fn(grid.coords))

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    components: np.ndarray  # (dim, *shape)

    def __post_init__(self):
        c = np.array(self.components, dtype=float)
        if c.shape != (self.grid.dim, *self.grid.shape):
            raise GridError("component array does not match grid")
        if not np.all(np.isfinite(c)):
            raise FloatingPointError("vector field must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "components", c)


# ---- array-level operators (trailing dim axes) ----

def _shift(v: np.ndarray, axis: int, step: int) -> np.ndarray:
    """v shifted by one node along axis with zero ghost fill."""
    out = np.zeros_like(v)
    src = [slice(None)] * v.ndim
    dst = [slice(None)] * v.ndim
    if step > 0:
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
    else:
        src[axis], dst[axis] = slice(None, -1), slice(1, None)
    out[tuple(dst)] = v[tuple(src)]
    return out


def _zero_boundary(v: np.ndarray, dim: int) -> np.ndarray:
    for k in range(1, dim + 1):
        idx = [slice(None)] * v.ndim
        idx[-k] = 0
        v[tuple(idx)] = 0.0
        idx[-k] = -1
        v[tuple(idx)] = 0.0
    return v


def laplacian_array(v: np.ndarray, h: float, dim: int) -> np.ndarray:
    out = np.zeros_like(v, dtype=float)
    for k in range(1, dim + 1):
        ax = v.ndim - k
        out += _shift(v, ax, 1) - 2.0 * v + _shift(v, ax, -1)
    out /= h * h
    return _zero_boundary(out, dim)


def gradient_array(v: np.ndarray, h: float, dim: int) -> np.ndarray:
    """Centered differences; returns shape (dim, *v.shape)."""
    comps = []
    for k in range(dim, 0, -1):
        ax = v.ndim - k
        g = (_shift(v, ax, 1) - _shift(v, ax, -1)) / (2.0 * h)
        comps.append(_zero_boundary(g, dim))
    return np.stack(comps)


def hessian_sq_array(v: np.ndarray, h: float, dim: int) -> np.ndarray:
    """Pointwise squared Frobenius norm of the second-difference Hessian."""
    total = np.zeros_like(v, dtype=float)
    axes = [v.ndim - k for k in range(dim, 0, -1)]
    for i, ai in enumerate(axes):
        d2 = (_shift(v, ai, 1) - 2.0 * v + _shift(v, ai, -1)) / (h * h)
        total += d2**2
        for aj in axes[i + 1:]:
            dij = (_shift(_shift(v, ai, 1), aj, 1) - _shift(_shift(v, ai, 1), aj, -1)
                   - _shift(_shift(v, ai, -1), aj, 1) + _shift(_shift(v, ai, -1), aj, -1))
            total += 2.0 * (dij / (4.0 * h * h)) ** 2
    return _zero_boundary(total, dim)


def dirichlet_energy_array(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Sum of squared forward differences over all edges, scaled to approximate the
    integral of |grad v|^2.  Equals -inner(laplacian(v), v) exactly when the
    boundary nodes vanish."""
    h = grid.spacing
    cell = h ** (grid.dim - 2)
    axes = tuple(range(v.ndim - grid.dim, v.ndim))
    total = 0.0
    for ax in axes:
        d = np.diff(v, axis=ax)
        # edges touching the boundary on the other axes carry the boundary's
        # half weight in the trapezoid rule; those values are zero anyway
        total = total + np.sum(d * d, axis=axes)
    return total * cell


def quad_array(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Trapezoid rule over the trailing dim axes."""
    axes = tuple(range(v.ndim - grid.dim, v.ndim))
    return np.sum(v * grid.quad_weights, axis=axes)


LogWeight = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _resolve_log_weight(w: LogWeight, grid: Grid) -> np.ndarray:
    if callable(w):
        return np.asarray(w(grid.coords), dtype=float)
    return np.broadcast_to(np.asarray(w, dtype=float), grid.shape)


def weighted_exponent_array(v: np.ndarray, logw: np.ndarray) -> np.ndarray:
    """2w + 2log|v| with -inf where v vanishes; raises if any entry overflows."""
    with np.errstate(divide="ignore"):
        expo = 2.0 * logw + 2.0 * np.log(np.abs(v))
    if np.any(expo > LOG_MAX):
        i = np.unravel_index(np.argmax(expo), expo.shape)
        raise WeightOverflowError(f"weighted summand exp({expo[i]:.1f}) overflows at index {i}")
    return expo


def weighted_l2_sq_array(v: np.ndarray, logw: np.ndarray, grid: Grid) -> np.ndarray:
    expo = weighted_exponent_array(v, logw)
    vals = quad_array(np.exp(expo), grid)
    if not np.all(np.isfinite(vals)):
        raise WeightOverflowError("weighted norm overflows")
    return vals


def weighted_field_array(v: np.ndarray, logw: np.ndarray) -> np.ndarray:
    """e^w v computed without forming e^w on its own."""
    expo = weighted_exponent_array(v, logw)
    return np.sign(v) * np.exp(0.5 * expo)


# ---- Field-level API ----

def laplacian(f: Field) -> Field:
    g = f.grid
    return Field(g, laplacian_array(f.values, g.spacing, g.dim))


def gradient(f: Field) -> VectorField:
    g = f.grid
    return VectorField(g, gradient_array(f.values, g.spacing, g.dim))


def weighted_l2_sq(f: Field, w: LogWeight = 0.0) -> float:
    logw = _resolve_log_weight(w, f.grid)
    return float(weighted_l2_sq_array(f.values, logw, f.grid))


def inner(f: Field, g: Field) -> float:
    if f.grid != g.grid:
        raise GridError("fields live on different grids")
    return float(quad_array(f.values * g.values, f.grid))


def dirichlet_energy(f: Field) -> float:
    return float(dirichlet_energy_array(f.values, f.grid))
