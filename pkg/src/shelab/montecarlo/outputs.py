"""CSV/JSON writers, experiment manifests and replay."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from ..stochastic import SeedLadder
from .config import EnsembleConfig, from_dict

MANIFEST = "manifest.json"
MANIFEST_FORMAT = 1


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def csv_text(rows: list) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_cell(r.get(k, "")) for k in cols})
    return buf.getvalue()


def _csv_cell(v):
    v = _plain(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return v


def write_fields_csv(path: Path, ens) -> None:
    """One row per (path, checkpoint, node): path, t, node_index per axis, value."""
    dim = ens.grid.dim
    idx = np.indices(ens.grid.shape).reshape(dim, -1).T
    head = "path,t," + ",".join(f"node_index_{k}" for k in range(dim)) + ",value"
    with open(path, "w") as fh:
        fh.write(head + "\n")
        for p in range(ens.paths):
            for j, t in enumerate(ens.times):
                vals = ens.values[p, j].reshape(-1)
                lines = [f"{p},{float(t)!r}," + ",".join(map(str, ix)) + f",{float(v)!r}"
                         for ix, v in zip(idx.tolist(), vals.tolist())]
                fh.write("\n".join(lines) + "\n")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def code_version() -> dict:
    """Package version plus a digest of the package sources."""
    from .. import __version__

    h = hashlib.sha256()
    root = resources.files("shelab")
    for p in sorted(Path(str(root)).rglob("*")):
        if p.suffix in (".py", ".toml") and "__pycache__" not in p.parts:
            h.update(str(p.relative_to(Path(str(root)))).encode())
            h.update(p.read_bytes())
    return {"version": __version__, "source_sha256": h.hexdigest()}


def parameter_records(cfg: EnsembleConfig) -> dict:
    return {
        "mollifier": {"blend": "quintic smoothstep", "a": cfg.weight.mollifier_a},
        "interpolation": "cubic spline, zero outside the source grid",
        "quadrature": "trapezoid",
        "summation": "pairwise, fixed path order",
        "normals": "splitmix64 counter stream, Box-Muller",
        "tolerances": cfg.tolerances.model_dump(),
    }


def write_outputs(out: Path, command: dict, cfg: EnsembleConfig, reports: dict, tables: dict,
                  extra_files: Optional[dict] = None, wall_clock: float = 0.0) -> dict:
    """Write JSON reports, CSV tables and the manifest; return the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rep in reports.items():
        p = out / f"{name}.json"
        p.write_text(dumps(rep))
        written.append(p)
    for name, rows in tables.items():
        p = out / f"{name}.csv"
        p.write_text(csv_text(rows))
        written.append(p)
    for name, writer in (extra_files or {}).items():
        p = out / name
        writer(p)
        written.append(p)
    manifest = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "code": code_version(),
        "seed_ladder": SeedLadder(cfg.seed).describe(),
        "parameters": parameter_records(cfg),
        "outputs": {p.name: sha256_file(p) for p in sorted(written)},
        "wall_clock_seconds": round(wall_clock, 3),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / MANIFEST).write_text(dumps(manifest))
    return manifest


def load_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    data = json.loads(p.read_text())
    if data.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"unsupported manifest format {data.get('format')!r}")
    return data


@dataclass(frozen=True)
class ReplayReport:
    matches: dict  # file -> bool
    missing: list
    code_changed: bool

    @property
    def identical(self) -> bool:
        return not self.missing and all(self.matches.values())

    def as_dict(self) -> dict:
        return {"identical": self.identical, "matches": self.matches, "missing": self.missing,
                "code_changed": self.code_changed}


def compare_outputs(manifest: dict, out: Path) -> ReplayReport:
    out = Path(out)
    matches, missing = {}, []
    for name, digest in manifest["outputs"].items():
        p = out / name
        if not p.exists():
            missing.append(name)
        else:
            matches[name] = sha256_file(p) == digest
    return ReplayReport(matches, missing, code_version()["source_sha256"] != manifest["code"]["source_sha256"])


def manifest_config(manifest: dict) -> EnsembleConfig:
    return from_dict(manifest["config"])
