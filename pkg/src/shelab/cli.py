"""Command line entry point: ``shelab simulate|verify|sweep|report``."""
from __future__ import annotations

import argparse
import sys
import tempfile
import time
from pathlib import Path

from .appell import AppellError
from .coefficients import CoefficientError
from .functionals import FAIL, INCONCLUSIVE, PreconditionError
from .grid import GridError, WeightOverflowError
from .montecarlo.checks import CHECK_IDS, UnknownCheck, verify
from .montecarlo.config import ConfigError, EnsembleConfig, resolve
from .montecarlo.outputs import (compare_outputs, load_manifest, manifest_config, write_fields_csv,
                                  write_outputs)
from .montecarlo.runner import RunError, run_ensemble
from .solver import SolverError
from .thresholds import ThresholdError

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_ERROR = 0, 1, 2, 3
RUNTIME_ERRORS = (ConfigError, PreconditionError, RunError, SolverError, WeightOverflowError, GridError,
                  AppellError, ThresholdError, CoefficientError, UnknownCheck, OSError, ValueError)


def exit_code(verdicts) -> int:
    vs = list(verdicts)
    if FAIL in vs:
        return EXIT_FAIL
    if INCONCLUSIVE in vs:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def _field_writers(fields: dict) -> dict:
    def writer(ens):
        return lambda p: write_fields_csv(p, ens)
    return {f"fields_{name}.csv": writer(ens) for name, ens in fields.items()}


def run_command(command: dict, cfg: EnsembleConfig, out: Path) -> tuple:
    """Execute a recorded command; returns (verdicts, manifest)."""
    t0 = time.perf_counter()
    sub = command["subcommand"]
    dump = command.get("dump_fields", False)
    if sub == "simulate":
        res = run_ensemble(cfg)
        reports = {"simulate": {"scenario": cfg.scenario, "paths": res.stats.paths,
                                "times": res.ensemble.times, "config_hash": cfg.config_hash()}}
        tables = {"stats": res.stats.rows()}
        fields = {"ensemble": res.ensemble} if dump else {}
        verdicts = []
    else:
        check = "uniqueness-sweep" if sub == "sweep" else command["check"]
        result = verify(cfg, check, command.get("tolerance_scale", 1.0))
        reports = {check: {"summary": result.summary, **result.report}}
        tables = result.tables
        fields = result.fields if dump else {}
        verdicts = [result.verdict]
        print(result.summary)
    manifest = write_outputs(out, command, cfg, reports, tables, _field_writers(fields), time.perf_counter() - t0)
    return verdicts, manifest


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config file, manifest, or built-in scenario name")
    common.add_argument("--paths", type=int, metavar="M", help="override the path count")
    common.add_argument("--seed", type=int, metavar="S", help="override the master seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--dump-fields", action="store_true", help="also write checkpoint fields as CSV")
    common.add_argument("--tolerance-scale", type=float, default=1.0, metavar="X",
                        help="multiply every check tolerance by X")
    p = argparse.ArgumentParser(prog="shelab", description=__doc__)
    sub = p.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("simulate", parents=[common], help="run an ensemble and write functional statistics")
    v = sub.add_parser("verify", parents=[common], help="run one verification check")
    v.add_argument("check", choices=CHECK_IDS)
    sub.add_parser("sweep", parents=[common], help="R-sweep of the local-mass decay bound")
    sub.add_parser("report", parents=[common], help="replay a manifest and compare output digests")
    return p


def _report(args) -> int:
    if not args.config:
        raise ConfigError("report needs --config pointing at a manifest or output directory")
    manifest = load_manifest(args.config)
    cfg = manifest_config(manifest)
    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="shelab-replay-"))
    verdicts, _ = run_command(manifest["command"], cfg, out)
    rep = compare_outputs(manifest, out)
    for name, ok in sorted(rep.matches.items()):
        print(f"{'identical' if ok else 'DIFFERS  '} {name}")
    for name in rep.missing:
        print(f"missing   {name}")
    if rep.code_changed:
        print("note: package sources differ from the recorded run")
    print(f"replay into {out}: {'identical' if rep.identical else 'NOT identical'}")
    return exit_code(verdicts + ([] if rep.identical else [FAIL]))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.subcommand == "report":
            return _report(args)
        if args.tolerance_scale <= 0:
            raise ConfigError("--tolerance-scale must be positive")
        cfg = resolve(args.config).with_overrides(paths=args.paths, seed=args.seed)
        command = {"subcommand": args.subcommand, "dump_fields": bool(args.dump_fields),
                   "tolerance_scale": args.tolerance_scale}
        if args.subcommand == "verify":
            command["check"] = args.check
        label = args.check if args.subcommand == "verify" else args.subcommand
        out = Path(args.out) if args.out else Path("shelab-out") / label
        verdicts, _ = run_command(command, cfg, out)
        return exit_code(verdicts)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
