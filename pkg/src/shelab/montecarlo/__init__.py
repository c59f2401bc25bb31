"""Ensemble orchestration, verification dispatch and reproducibility."""
from .checks import CHECK_IDS, CheckResult, UnknownCheck, verify
from .config import ConfigError, EnsembleConfig, load_config, load_scenario, resolve, scenario_names
from .outputs import compare_outputs, load_manifest, write_outputs
from .runner import EnsembleStats, RunResult, ensemble_stats, run_ensemble, simulate

__all__ = [
    "CHECK_IDS", "CheckResult", "ConfigError", "EnsembleConfig", "EnsembleStats", "RunResult",
    "UnknownCheck", "compare_outputs", "ensemble_stats", "load_config", "load_manifest",
    "load_scenario", "resolve", "run_ensemble", "scenario_names", "simulate", "verify", "write_outputs",
]
