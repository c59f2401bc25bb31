"""The verify dispatcher: one function per check id."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import appell as ap
from .. import thresholds as th
from ..coefficients import CoefficientBounds, check_assumption_A1, estimate_bounds
from ..functionals import (FAIL, INCONCLUSIVE, PASS, PreconditionError, build_series, convexity_check,
                           energy_check, integrand_positivity, integrated_estimate_check,
                           interior_finiteness_check, relative_change)
from ..grid import make_grid
from ..solver import SolverConfig
from ..stochastic import SeedLadder, sample_increments
from ..weights import QuadraticWeight, TranslatedWeight
from .config import EnsembleConfig
from .runner import refined_increments, simulate

CHECK_IDS = ("energy", "convexity", "convexity-translated", "appell-identity", "appell-dual",
             "integrated", "interior", "thresholds", "hardy", "uniqueness-sweep")

SPACE_INDEPENDENT_KINDS = {"zero", "constant", "time_linear"}
POSITIVITY_FLOOR = -1e-10


class UnknownCheck(KeyError):
    pass


@dataclass
class CheckResult:
    check_id: str
    verdict: str
    report: dict
    tables: dict = field(default_factory=dict)  # name -> list of row dicts
    fields: dict = field(default_factory=dict)  # name -> Ensemble, for --dump-fields

    @property
    def summary(self) -> str:
        return f"{self.check_id}: {self.verdict}"


def combine(verdicts) -> str:
    vs = list(verdicts)
    if FAIL in vs:
        return FAIL
    if INCONCLUSIVE in vs:
        return INCONCLUSIVE
    return PASS


def _noise_space_independent(cfg: EnsembleConfig) -> bool:
    return cfg.noise.get("kind") in SPACE_INDEPENDENT_KINDS


def _base_ensemble(cfg: EnsembleConfig):
    grid = cfg.make_grid()
    return simulate(grid, cfg.spec(), cfg.initial_fn()(grid.coords), cfg.solver_config(),
                    cfg.seed, cfg.paths, cfg.workers)


def _transformed(cfg: EnsembleConfig):
    """Ensemble of the Appell-transformed problem on the configured grid."""
    params = ap.make_params(cfg.appell.alpha, cfg.appell_beta())
    grid = cfg.make_grid()
    tp = ap.transform_coefficients(cfg.spec(), params, grid)
    u0 = ap.transformed_initial(cfg.initial_fn(), params, grid)
    ens = simulate(grid, tp.spec, u0, cfg.solver_config(), cfg.seed, cfg.paths, cfg.workers)
    return params, tp, ens


# ---- energy ----

def check_energy(cfg: EnsembleConfig, scale: float) -> CheckResult:
    spec = cfg.spec()
    grid = cfg.make_grid()
    bounds = estimate_bounds(spec, grid)
    scfg = cfg.solver_config()
    seeds = SeedLadder(cfg.seed).derive_many(np.arange(cfg.paths))
    inc = sample_increments(seeds, scfg.time_grid)
    u0 = cfg.initial_fn()
    ens = simulate(grid, spec, u0(grid.coords), scfg, cfg.seed, cfg.paths, cfg.workers, inc)
    tol = cfg.tolerances.energy * scale
    base = energy_check(ens, cfg.weight.gamma, bounds, tol)
    rows = [{"resolution": "base", "points": grid.points, "steps": scfg.time_grid.steps, **base.as_dict()}]
    report = {"base": base.as_dict(), "bounds": bounds.as_dict()}
    verdicts = [base.verdict]
    if bounds.MGV > 0:
        fine = grid.refined()
        fcfg = SolverConfig(scfg.time_grid.refined(), scfg.theta, scfg.checkpoint_times)
        finc = refined_increments(inc, seeds, scfg)
        fens = simulate(fine, spec, u0(fine.coords), fcfg, cfg.seed, cfg.paths, cfg.workers, finc)
        fine_rep = energy_check(fens, cfg.weight.gamma, estimate_bounds(spec, fine), tol)
        change = relative_change(base.C_min, fine_rep.C_min)
        limit = cfg.tolerances.energy_stability * scale
        stable = bool(np.isfinite(fine_rep.C_min) and change <= limit)
        rows.append({"resolution": "refined", "points": fine.points, "steps": fcfg.time_grid.steps,
                     **fine_rep.as_dict()})
        report.update(refined=fine_rep.as_dict(), C_relative_change=change, stability_limit=limit, stable=stable)
        verdicts += [fine_rep.verdict, PASS if stable else FAIL]
    verdict = combine(verdicts)
    report["verdict"] = verdict
    return CheckResult("energy", verdict, report, {"energy": rows}, {"ensemble": ens})


# ---- convexity ----

def convexity_preconditions(cfg: EnsembleConfig, bounds: CoefficientBounds):
    gamma = cfg.weight.gamma
    if not gamma > bounds.M0**2 / 4.0:
        raise PreconditionError(f"gamma = {gamma} must exceed M0^2/4 = {bounds.M0**2 / 4.0:.6g}")
    if _noise_space_independent(cfg) or cfg.waive_assumptions:
        return None
    rep = check_assumption_A1(cfg.spec(), gamma, cfg.weight.epsilon, cfg.make_grid())
    if not rep.passed:
        raise PreconditionError(f"noise violates the decay assumption at gamma={gamma}, "
                                f"epsilon={cfg.weight.epsilon} (worst excess {rep.worst_violation:.3g})")
    return rep


def check_convexity(cfg: EnsembleConfig, scale: float) -> CheckResult:
    spec = cfg.spec()
    grid = cfg.make_grid()
    bounds = estimate_bounds(spec, grid)
    a1 = convexity_preconditions(cfg, bounds)
    ens = _base_ensemble(cfg)
    gamma = cfg.weight.gamma
    series = build_series(ens, spec, QuadraticWeight(gamma), bounds)
    rep = convexity_check(series, 0.0, scale)
    report = rep.as_dict()
    verdicts = [rep.verdict]
    if not _noise_space_independent(cfg):
        lo1, lo2 = integrand_positivity(ens, gamma, bounds.M0)
        ok = lo1 >= POSITIVITY_FLOOR and lo2 >= POSITIVITY_FLOOR
        report["integrand_positivity"] = {"gradient_term_min": lo1, "moment_term_min": lo2,
                                          "floor": POSITIVITY_FLOOR, "verdict": PASS if ok else FAIL}
        verdicts.append(PASS if ok else FAIL)
    if a1 is not None:
        report["assumption"] = {"id": a1.assumption_id, "passed": a1.passed, "worst_violation": a1.worst_violation}
    verdict = combine(verdicts)
    report["verdict"] = verdict
    return CheckResult("convexity", verdict, report, {"convexity": rep.rows()}, {"ensemble": ens})


def translated_floor(alpha: float, R: float, tb: CoefficientBounds) -> float:
    return -2.0 * alpha * R**2 * tb.M0**2 - 4.0 * tb.M1**2


def check_convexity_translated(cfg: EnsembleConfig, scale: float) -> CheckResult:
    mu = cfg.weight.mu
    alpha = th.alpha_root(mu)
    params, tp, ens = _transformed(cfg)
    report = {"alpha": alpha, "mu": mu, "appell": params.describe(), "bounds": tp.bounds.as_dict(), "R": {}}
    tables = {}
    verdicts = []
    for R in cfg.weight.R:
        series = build_series(ens, tp.spec, TranslatedWeight(mu, R), tp.bounds)
        rep = convexity_check(series, translated_floor(alpha, R, tp.bounds), scale)
        report["R"][str(R)] = rep.as_dict()
        tables[f"translated_R{R:g}"] = rep.rows()
        verdicts.append(rep.verdict)
    verdict = combine(verdicts)
    report["verdict"] = verdict
    return CheckResult("convexity-translated", verdict, report, tables, {"transformed": ens})


# ---- Appell ----

def five_point(fn, t, h: float = 1e-4):
    return (fn(t - 2 * h) - 8 * fn(t - h) + 8 * fn(t + h) - fn(t + 2 * h)) / (12 * h)


def appell_invariants(params: ap.AppellParams, seed: int, count: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.01, 0.99, count)
    da = five_point(params.a, t)
    db = five_point(params.b, t)
    inv = params.inverse()
    recip = params.a(t) * inv.a(params.b(t))
    mesh = np.linspace(0.0, 1.0, 10001)
    out = {
        "b0": float(abs(params.b(0.0))),
        "b1": float(abs(params.b(1.0) - 1.0)),
        "a_prime": float(np.max(np.abs(da - params.a_prime(t)))),
        "b_prime": float(np.max(np.abs(db - params.b_prime(t)))),
        "reciprocity": float(np.max(np.abs(recip - 1.0))),
        "kappa_antisymmetry": float(abs(params.kappa + inv.kappa)),
        "b_increasing": bool(np.all(np.diff(params.b(mesh)) > 0)),
    }
    ok = (out["b0"] <= 1e-8 and out["b1"] <= 1e-8 and out["a_prime"] <= 1e-8 and out["b_prime"] <= 1e-8
          and out["reciprocity"] <= 1e-10 and out["kappa_antisymmetry"] <= 1e-15 and out["b_increasing"])
    out["verdict"] = PASS if ok else FAIL
    return out


def _u_on_clock(cfg: EnsembleConfig, params, grid, seed_offset: int = 0):
    clock = params.clock()
    scfg = SolverConfig(cfg.time_grid(), cfg.time.theta, cfg.checkpoint_times(), clock=clock)
    return simulate(grid, cfg.spec(), cfg.initial_fn()(grid.coords), scfg, cfg.seed + seed_offset,
                    cfg.paths, cfg.workers)


def check_appell_identity(cfg: EnsembleConfig, scale: float) -> CheckResult:
    params = ap.make_params(cfg.appell.alpha, cfg.appell_beta())
    inv = appell_invariants(params, cfg.seed)
    target = cfg.make_grid()
    tol = cfg.tolerances.identity * scale
    verdicts = [inv["verdict"]]
    rows = []

    src = ap.source_grid_for(target, params)
    u_wide = _u_on_clock(cfg, params, src)
    for t in cfg.appell.identity_times:
        rep = ap.norm_identity_check(u_wide, params, cfg.appell.identity_gamma, t, target, tol)
        rows.append({"kind": "identity", **rep.as_dict()})
        verdicts.append(rep.verdict)

    # endpoint bookkeeping: nodes mapped exactly, weights up to the Hardy rate
    gamma = cfg.weight.gamma
    delta = 1.0 / (2.0 * gamma)
    end_src = make_grid(target.dim, cfg.appell.endpoint_half_width, target.points)
    u_end = _u_on_clock(cfg, params, end_src)
    exp0 = ap.gaussian_exponent(params, gamma, 0.0)
    exp1 = ap.gaussian_exponent(params, gamma, 1.0)
    algebra = {"exponent_t0": exp0, "exponent_t1": exp1, "expected_t1": 1.0 / delta**2}
    standard_pair = abs(cfg.appell.alpha - 1.0) < 1e-15 and abs(cfg.appell_beta() - (1 + 4 * gamma)) < 1e-12
    if standard_pair:
        ok = abs(exp0) <= 1e-10 and abs(exp1 - 1.0 / delta**2) <= 1e-10
        algebra["verdict"] = PASS if ok else FAIL
        verdicts.append(algebra["verdict"])
    for t in (0.0, 1.0):
        rep = ap.norm_identity_check(u_end, params, gamma, t, ap.aligned_grid(end_src, params, t), tol)
        rows.append({"kind": "endpoint", **rep.as_dict()})
        verdicts.append(rep.verdict)

    verdict = combine(verdicts)
    report = {"verdict": verdict, "invariants": inv, "endpoint_algebra": algebra, "rows": rows,
              "source_grid": {"half_width": src.half_width, "points": src.points},
              "interpolation": "cubic spline"}
    return CheckResult("appell-identity", verdict, report, {"appell_identity": rows}, {"u": u_wide})


def check_appell_dual(cfg: EnsembleConfig, scale: float) -> CheckResult:
    params = ap.make_params(cfg.appell.alpha, cfg.appell_beta())
    rep = ap.dual_simulation_check(cfg.spec(), params, cfg.initial_fn(), cfg.make_grid(), cfg.time.steps,
                                   cfg.paths, cfg.seed, h_gamma=cfg.appell.h_gamma, theta=cfg.time.theta,
                                   n_sigma=cfg.tolerances.dual_sigma * scale, rel_floor=cfg.tolerances.dual_floor)
    report = rep.as_dict()
    return CheckResult("appell-dual", rep.verdict, report, {"appell_dual": rep.rows})


# ---- integrated / interior ----

def check_integrated(cfg: EnsembleConfig, scale: float) -> CheckResult:
    spec = cfg.spec()
    bounds = estimate_bounds(spec, cfg.make_grid())
    if cfg.waive_assumptions and not cfg.weight.gamma > bounds.M0**2 / 4.0:
        raise PreconditionError("gamma must exceed M0^2/4 even when assumptions are waived")
    ens = _base_ensemble(cfg)
    rep = integrated_estimate_check(ens, cfg.weight.gamma, spec, bounds, cfg.weight.epsilon)
    verdict = PASS if np.isfinite(rep.N_min) else FAIL
    report = {"verdict": verdict, **rep.as_dict()}
    return CheckResult("integrated", verdict, report, {"integrated": [rep.as_dict()]}, {"ensemble": ens})


def check_interior(cfg: EnsembleConfig, scale: float) -> CheckResult:
    ens = _base_ensemble(cfg)
    rep = interior_finiteness_check(ens, cfg.weight.gamma, cfg.weight.mollifier_a, cfg.weight.interior_start)
    ok = np.isfinite(rep.gradient_sup) and np.isfinite(rep.hessian_integral)
    verdict = PASS if ok else FAIL
    return CheckResult("interior", verdict, {"verdict": verdict, **rep.as_dict()},
                       {"interior": [rep.as_dict()]}, {"ensemble": ens})


# ---- closed forms ----

def threshold_algebra(gamma: float, mus, seed: int) -> dict:
    b1, b2 = th.alpha_gamma_branches(th.BRANCH_POINT)
    m1, m2 = th.m_mu_branches(th.BRANCH_POINT)
    rng = np.random.default_rng(seed)
    rand_mu = rng.uniform(0.5001, 10.0, 100)
    brute = max(abs(th.m_mu(m) - th.m_mu_bruteforce(m)) for m in rand_mu)
    resid = max(abs(th.root_residual(m)) for m in list(rand_mu) + list(mus))
    above = all(th.alpha_root(m) > th.m_mu(m) for m in rand_mu)
    rand_g = rng.uniform(0.5001, 10.0, 100)
    comparison = all(a > b for a, b in (th.final_comparison(g) for g in rand_g))
    out = {
        "alpha_gamma_continuity": abs(b1 - b2),
        "m_mu_continuity": abs(m1 - m2),
        "m_mu_bruteforce_max_error": brute,
        "root_residual_max": resid,
        "root_above_m_mu": above,
        "final_comparison_holds": comparison,
    }
    ok = (out["alpha_gamma_continuity"] <= 1e-12 and out["m_mu_continuity"] <= 1e-12 and brute <= 1e-6
          and resid <= 1e-12 and above and comparison)
    out["verdict"] = PASS if ok else FAIL
    return out


def check_thresholds(cfg: EnsembleConfig, scale: float) -> CheckResult:
    gamma, mu = cfg.weight.gamma, cfg.weight.mu
    if not gamma > 0.5:
        raise PreconditionError("threshold table needs gamma > 1/2")
    table = th.ThresholdTable(gamma, (mu,))
    algebra = threshold_algebra(gamma, (mu,), cfg.seed)
    spec = cfg.spec()
    grid = cfg.make_grid()
    bounds = estimate_bounds(spec, grid)
    tp = ap.transform_coefficients(spec, ap.make_params(cfg.appell.alpha, cfg.appell_beta()), grid)
    alpha = th.alpha_root(mu)
    gc = th.g_condition_check(mu, alpha, th.m_mu(mu), tp.bounds.M0)
    scenario = {
        "M0_sq": bounds.M0**2, "noise_bound": table.noise_bound,
        "qualifies": bounds.M0**2 < table.noise_bound,
        "M0_tilde_sq": tp.bounds.M0**2, "g_condition": gc.__dict__ | {"implication_holds": gc.implication_holds},
    }
    verdict = PASS if algebra["verdict"] == PASS and gc.implication_holds else FAIL
    report = {"verdict": verdict, "table": table.as_dict(), "algebra": algebra, "scenario": scenario}
    return CheckResult("thresholds", verdict, report, {"thresholds": [table.as_dict() | {"verdict": verdict}]})


HARDY_BETAS = (1.0, 1.5, 2.0, 2.5)
HARDY_DELTAS = (1.0, 2.0, 5.0, 8.0, 12.0)


def check_hardy(cfg: EnsembleConfig, scale: float) -> CheckResult:
    rows = []
    ok = True
    for beta in HARDY_BETAS:
        for delta in HARDY_DELTAS:
            rule = th.FINITE if delta**2 > beta**2 + 4 else th.DIVERGENT
            if rule == th.DIVERGENT:
                r = th.hardy_heat_oracle(beta, delta, L=4.0, dim=cfg.grid.dim)
                numeric_ok = r.growth >= 10.0
            else:
                r = th.hardy_heat_oracle(beta, delta, L=6.0, dim=cfg.grid.dim)
                numeric_ok = abs(r.growth - 1.0) <= 0.01
            row_ok = numeric_ok and r.verdict == rule
            ok &= row_ok
            rows.append({"beta": beta, "delta": delta, "verdict": r.verdict, "rule": rule, "L": r.L,
                         "norm_L": r.norm_L, "norm_2L": r.norm_2L, "growth": r.growth,
                         "check": PASS if row_ok else FAIL})
    verdict = PASS if ok else FAIL
    return CheckResult("hardy", verdict, {"verdict": verdict, "lattice": rows}, {"hardy": rows})


def check_uniqueness_sweep(cfg: EnsembleConfig, scale: float) -> CheckResult:
    mu, eps = cfg.weight.mu, cfg.weight.eps
    table = th.ThresholdTable(cfg.weight.gamma, (mu,))
    th.check_mu_window(mu, eps, table.gamma)
    alpha = th.alpha_root(mu)
    params, tp, ens = _transformed(cfg)
    calib = {}
    for R in cfg.weight.sweep_R:
        series = build_series(ens, tp.spec, TranslatedWeight(mu, R), tp.bounds)
        rep = convexity_check(series, translated_floor(alpha, R, tp.bounds), scale)
        S = tp.bounds.interpolation_scale
        with np.errstate(over="ignore"):
            C = float(np.exp(rep.calibrated_N * S) * np.sqrt(series.H[0] * series.H[-1]))
        calib[R] = {"N": rep.calibrated_N, "S": S, "C": C}
    sweep = th.uniqueness_sweep(ens, mu, eps, table, tp.bounds.M0, lambda R: calib[R]["C"],
                                cfg.weight.sweep_R, cfg.tolerances.uniqueness * scale)
    report = sweep.as_dict()
    report.update(calibration={str(k): v for k, v in calib.items()}, mu=mu, eps=eps, alpha=alpha,
                  M0_tilde_sq=tp.bounds.M0**2, appell=params.describe())
    return CheckResult("uniqueness-sweep", sweep.verdict, report, {"sweep": sweep.rows()}, {"transformed": ens})


DISPATCH: dict = {
    "energy": check_energy,
    "convexity": check_convexity,
    "convexity-translated": check_convexity_translated,
    "appell-identity": check_appell_identity,
    "appell-dual": check_appell_dual,
    "integrated": check_integrated,
    "interior": check_interior,
    "thresholds": check_thresholds,
    "hardy": check_hardy,
    "uniqueness-sweep": check_uniqueness_sweep,
}


def verify(cfg: EnsembleConfig, check_id: str, tolerance_scale: float = 1.0) -> CheckResult:
    if check_id not in DISPATCH:
        raise UnknownCheck(f"unknown check {check_id!r}; expected one of {', '.join(CHECK_IDS)}")
    scale = tolerance_scale * cfg.tolerances.scale
    return DISPATCH[check_id](cfg, scale)
