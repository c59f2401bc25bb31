"""Experiment configuration: a TOML file validated into EnsembleConfig.

Every key has a default, so a file only needs what differs from them.  See
``docs/config.md`` for the schema.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..coefficients import CoefficientError, CoefficientSpec, coefficient_from_descriptor
from ..grid import Grid, make_grid
from ..solver import SolverConfig
from ..stochastic import TimeGrid


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSection(_Strict):
    dim: Literal[1, 2] = 1
    half_width: float = Field(8.0, gt=0)
    points: int = 257

    @field_validator("points")
    @classmethod
    def _odd(cls, v):
        if v < 3 or v % 2 == 0:
            raise ValueError("points must be odd and at least 3")
        return v


class TimeSection(_Strict):
    steps: int = Field(1000, ge=1)
    theta: float = Field(0.5, ge=0.0, le=1.0)
    checkpoints: int = Field(21, ge=3)

    @model_validator(mode="after")
    def _aligned(self):
        if self.steps % (self.checkpoints - 1):
            raise ValueError("steps must be a multiple of checkpoints - 1")
        return self


class InitialSection(_Strict):
    kind: Literal["gaussian", "zero"] = "gaussian"
    width: float = Field(1.0, gt=0)  # u0 = amplitude exp(-|x|^2 / width^2)
    amplitude: float = 1.0


class WeightSection(_Strict):
    gamma: float = Field(1.0, gt=0)
    epsilon: float = Field(0.5, gt=0, lt=1)  # decay exponent in the noise assumptions
    mu: float = 0.9
    R: List[float] = [2.0, 4.0]
    sweep_R: List[float] = [2.0, 4.0, 8.0, 16.0]
    eps: float = Field(0.25, gt=0, lt=1)  # fraction in the uniqueness window
    mollifier_a: float = Field(0.1, gt=0, lt=1)
    interior_start: float = Field(0.1, gt=0, le=1)


class AppellSection(_Strict):
    alpha: float = Field(1.0, gt=0)
    beta: Optional[float] = Field(None, gt=0)  # default 1 + 4 gamma
    identity_times: List[float] = [0.25, 0.5, 0.75]
    identity_gamma: float = Field(0.0, ge=0)
    endpoint_half_width: float = Field(8.0, gt=0)
    h_gamma: float = Field(0.1, ge=0)  # weight of the H functional in the two-route comparison


class Tolerances(_Strict):
    scale: float = Field(1.0, gt=0)
    energy: float = 1e-3
    energy_stability: float = 0.2
    identity: float = 0.02
    dual_sigma: float = 4.0
    dual_floor: float = 1e-3
    uniqueness: float = 0.0


class EnsembleConfig(_Strict):
    scenario: str = "custom"
    paths: int = Field(400, ge=1)
    seed: int = Field(20240917, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    grid: GridSection = GridSection()
    time: TimeSection = TimeSection()
    initial: InitialSection = InitialSection()
    potential: dict = {"kind": "zero"}
    noise: dict = {"kind": "zero"}
    weight: WeightSection = WeightSection()
    appell: AppellSection = AppellSection()
    tolerances: Tolerances = Tolerances()
    waive_assumptions: bool = False

    @field_validator("potential", "noise")
    @classmethod
    def _resolvable(cls, v):
        try:
            coefficient_from_descriptor(v)
        except (CoefficientError, TypeError, KeyError) as exc:
            raise ValueError(f"unresolvable coefficient descriptor {v}: {exc}") from exc
        return v

    # ---- derived objects ----

    def make_grid(self) -> Grid:
        return make_grid(self.grid.dim, self.grid.half_width, self.grid.points)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.time.steps)

    def checkpoint_times(self) -> tuple:
        return tuple(np.linspace(0.0, 1.0, self.time.checkpoints))

    def solver_config(self, **kw) -> SolverConfig:
        return SolverConfig(self.time_grid(), self.time.theta, self.checkpoint_times(), **kw)

    def spec(self) -> CoefficientSpec:
        return CoefficientSpec(coefficient_from_descriptor(self.potential),
                               coefficient_from_descriptor(self.noise), self.scenario)

    def initial_fn(self):
        if self.initial.kind == "zero":
            return lambda x: np.zeros(x.shape[1:])
        a, w = self.initial.amplitude, self.initial.width
        return lambda x: a * np.exp(-np.sum(x * x, axis=0) / w**2)

    def appell_beta(self) -> float:
        return self.appell.beta if self.appell.beta is not None else 1.0 + 4.0 * self.weight.gamma

    def with_overrides(self, **kw) -> "EnsembleConfig":
        data = self.model_dump()
        for key, val in kw.items():
            if val is None:
                continue
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = val
        return from_dict(data)

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        return config_hash(self.canonical())


def config_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> EnsembleConfig:
    try:
        return EnsembleConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def loads(text: str) -> EnsembleConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_dict(data)


def load_config(path) -> EnsembleConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no config file at {p}")
    if p.suffix == ".json":
        # manifests carry the resolved config
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
        return from_dict(data.get("config", data))
    return loads(p.read_text())


def scenario_names() -> list:
    files = resources.files("shelab.scenarios").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def load_scenario(name: str) -> EnsembleConfig:
    res = resources.files("shelab.scenarios").joinpath(f"{name}.toml")
    if not res.is_file():
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(scenario_names())}")
    return loads(res.read_text())


def resolve(path_or_name: Optional[str]) -> EnsembleConfig:
    """A file path, a built-in scenario name, or the default config."""
    if path_or_name is None:
        return EnsembleConfig()
    if Path(path_or_name).exists():
        return load_config(path_or_name)
    return load_scenario(path_or_name)
