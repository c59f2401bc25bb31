import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shelab.functionals import PASS, PreconditionError
from shelab.montecarlo.checks import CHECK_IDS, UnknownCheck, combine, verify
from shelab.montecarlo.config import (ConfigError, EnsembleConfig, config_hash, from_dict, load_config,
                                      load_scenario, loads, resolve, scenario_names)
from shelab.montecarlo.outputs import (compare_outputs, csv_text, dumps, load_manifest, manifest_config,
                                       write_fields_csv)
from shelab.montecarlo.runner import ensemble_stats, run_ensemble, simulate
from shelab.grid import Field
from shelab.solver import solve_path
from shelab.stochastic import SeedLadder, TimeGrid, WienerPath

SMALL = {"grid": {"points": 65}, "time": {"steps": 200, "checkpoints": 21}}


def small(scenario="standard-noisy", **kw):
    cfg = load_scenario(scenario)
    data = cfg.model_dump()
    for sec, vals in SMALL.items():
        data[sec].update(vals)
    data.update(kw)
    return from_dict(data)


# ---- config ----

def test_scenarios_load():
    names = scenario_names()
    for n in ("standard-noisy", "standard-free-heat", "space-independent", "space-dependent", "energy-noisy"):
        assert n in names
        assert load_scenario(n).scenario == n


def test_hash_stable_under_reordering():
    a = loads('paths = 3\nseed = 5\n[grid]\npoints = 33\nhalf_width = 4.0\n[time]\nsteps = 40\n')
    b = loads('[time]\nsteps = 40\n[grid]\nhalf_width = 4.0\npoints = 33\n').with_overrides(paths=3, seed=5)
    c = loads('seed = 5\npaths = 3\n[time]\nsteps = 40\n[grid]\nhalf_width = 4.0\npoints = 33\n')
    assert a.config_hash() == b.config_hash() == c.config_hash()


@given(st.permutations(["x", "y", "z", "w"]))
def test_hash_of_dict_ignores_key_order(keys):
    data = {k: i for i, k in enumerate(sorted(keys))}
    shuffled = {k: data[k] for k in keys}
    assert config_hash(shuffled) == config_hash(data)


def test_hash_changes_with_values():
    assert EnsembleConfig().config_hash() != EnsembleConfig(paths=2).config_hash()


@pytest.mark.parametrize("text, needle", [
    ("paths = 0", "paths"),
    ("[grid]\npoints = 64", "odd"),
    ("[time]\nsteps = 1001", "multiple"),
    ("[noise]\nkind = 'nonsense'", "unresolvable"),
    ("bogus = 1", "bogus"),
    ("paths = ", "malformed"),
    ("[weight]\nepsilon = 1.5", "epsilon"),
])
def test_loader_rejects(text, needle):
    with pytest.raises(ConfigError, match=needle):
        loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    with pytest.raises(ConfigError, match="unknown scenario"):
        resolve("no-such-scenario")


def test_defaults_and_overrides():
    cfg = EnsembleConfig()
    assert cfg.paths == 400 and cfg.grid.points == 257 and cfg.time.steps == 1000
    assert cfg.appell_beta() == 1 + 4 * cfg.weight.gamma
    o = cfg.with_overrides(paths=7, seed=None)
    assert o.paths == 7 and o.seed == cfg.seed


# ---- runner ----

def test_single_path_without_noise_matches_deterministic_run():
    cfg = small("standard-free-heat", paths=1)
    res = run_ensemble(cfg)
    for f in res.stats.functionals.values():
        assert np.all(f.stderr == 0)
    grid = cfg.make_grid()
    seed = int(SeedLadder(cfg.seed).derive(0))
    tg = TimeGrid(cfg.time.steps)
    path = WienerPath(tg, np.zeros(cfg.time.steps), seed)
    traj = solve_path(Field.from_function(grid, cfg.initial_fn()), cfg.spec(), path, cfg.solver_config())
    assert np.array_equal(res.ensemble.values[0], np.stack([f.values for _, f in traj.checkpoints]))


def test_stats_invariants():
    res = run_ensemble(small(paths=16))
    for f in res.stats.functionals.values():
        assert np.all(f.min <= f.mean + 1e-15) and np.all(f.mean <= f.max + 1e-15)
    ens = res.ensemble
    per = ensemble_stats(ens, {"norm": lambda t, x: np.zeros(x.shape[1:])}).functionals["norm"]
    vals = np.stack([np.sum(ens.values[:, j] ** 2 * ens.grid.quad_weights, axis=-1)
                     for j in range(len(ens.times))], axis=1)
    np.testing.assert_allclose(per.stderr, vals.std(axis=0, ddof=1) / np.sqrt(16), rtol=1e-9, atol=1e-15)


def test_stderr_halves_when_paths_quadruple():
    # doubling M shrinks the stderr by sqrt(2); compare M and 4M for a factor 2
    m1 = run_ensemble(small(paths=50)).stats.functionals["H"].stderr[-1]
    m4 = run_ensemble(small(paths=200)).stats.functionals["H"].stderr[-1]
    assert 2 / 1.5 <= m1 / m4 <= 2 * 1.5


def test_stderr_doubling_paths():
    m1 = run_ensemble(small(paths=100)).stats.functionals["H"].stderr[-1]
    m2 = run_ensemble(small(paths=200)).stats.functionals["H"].stderr[-1]
    assert np.sqrt(2) / 1.5 <= m1 / m2 <= np.sqrt(2) * 1.5


def test_bit_identical_reruns():
    cfg = small(paths=6)
    a, b = run_ensemble(cfg), run_ensemble(cfg)
    assert np.array_equal(a.ensemble.values, b.ensemble.values)
    assert a.stats.rows() == b.stats.rows()


@pytest.mark.parametrize("workers", [2, 3, 7])
def test_worker_count_independent(workers):
    cfg = small(paths=7)
    grid = cfg.make_grid()
    u0 = cfg.initial_fn()(grid.coords)
    one = simulate(grid, cfg.spec(), u0, cfg.solver_config(), cfg.seed, 7, 1)
    many = simulate(grid, cfg.spec(), u0, cfg.solver_config(), cfg.seed, 7, workers)
    assert np.array_equal(one.values, many.values)
    assert np.array_equal(one.seeds, many.seeds)


def test_path_prefix_is_stable():
    # path i depends only on its own seed, not on the ensemble size
    a = run_ensemble(small(paths=3)).ensemble.values
    b = run_ensemble(small(paths=5)).ensemble.values
    assert np.array_equal(a, b[:3])


# ---- outputs ----

def test_dumps_handles_numpy_and_nonfinite():
    d = json.loads(dumps({"a": np.float64(1.5), "b": np.arange(2), "c": np.bool_(True), "d": float("inf")}))
    assert d == {"a": 1.5, "b": [0, 1], "c": True, "d": "inf"}


def test_csv_round_trip_floats():
    text = csv_text([{"t": 0.1, "v": 1 / 3}, {"t": 0.2, "w": "x"}])
    lines = text.splitlines()
    assert lines[0] == "t,v,w"
    assert float(lines[1].split(",")[1]) == 1 / 3


def test_field_csv(tmp_path):
    cfg = small(paths=2)
    ens = run_ensemble(cfg).ensemble
    write_fields_csv(tmp_path / "f.csv", ens)
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "path,t,node_index_0,value"
    assert len(rows) == 1 + 2 * len(ens.times) * ens.grid.points
    p, t, i, v = rows[1 + len(ens.times) * ens.grid.points + 5 * 0 + 40].split(",")
    assert (int(p), int(i)) == (1, 40) and float(v) == ens.values[1, 0, 40]


# ---- verify dispatch ----

def test_unknown_check():
    with pytest.raises(UnknownCheck):
        verify(small(), "nope")
    assert len(CHECK_IDS) == 10


def test_combine():
    assert combine(["PASS", "PASS"]) == "PASS"
    assert combine(["PASS", "INCONCLUSIVE"]) == "INCONCLUSIVE"
    assert combine(["INCONCLUSIVE", "FAIL"]) == "FAIL"


def test_convexity_precondition_before_running():
    cfg = small(paths=2)
    data = cfg.model_dump()
    data["weight"]["gamma"] = 0.005  # M0^2/4 = 0.0225/4
    with pytest.raises(PreconditionError, match="M0"):
        verify(from_dict(data), "convexity")


def test_free_heat_energy_small():
    r = verify(small("standard-free-heat", paths=1), "energy")
    assert r.verdict == PASS
    assert r.summary == "energy: PASS"


def test_thresholds_check_values():
    r = verify(load_scenario("standard-noisy"), "thresholds")
    assert r.verdict == PASS
    t = r.report["table"]
    assert t["gamma"] == 1.0
    assert t["alpha_gamma"] == pytest.approx(3 / 8 + np.sqrt(11) / 16, abs=1e-14)
    assert t["noise_bound"] == pytest.approx(0.12880, abs=1e-5)
    assert t["mu"][0]["m_mu"] == pytest.approx((4 * 0.9 + 1) / (16 * 0.81), abs=1e-14)
    assert r.report["scenario"]["M0_sq"] == pytest.approx(0.0225, rel=1e-5)
    assert r.report["scenario"]["qualifies"]


def test_hardy_check_small():
    assert verify(small(), "hardy").verdict == PASS


# ---- manifests ----

def test_manifest_replay(tmp_path):
    from shelab.cli import run_command

    cfg = small(paths=3)
    command = {"subcommand": "simulate", "dump_fields": True, "tolerance_scale": 1.0}
    run_command(command, cfg, tmp_path / "a")
    man = load_manifest(tmp_path / "a")
    assert set(man["outputs"]) == {"simulate.json", "stats.csv", "fields_ensemble.csv"}
    assert man["config_hash"] == cfg.config_hash()
    replay = manifest_config(man)
    assert replay == cfg
    run_command(man["command"], replay, tmp_path / "b")
    rep = compare_outputs(man, tmp_path / "b")
    assert rep.identical and not rep.code_changed


def test_manifest_detects_changes(tmp_path):
    from shelab.cli import run_command

    cfg = small(paths=2)
    run_command({"subcommand": "simulate", "dump_fields": False}, cfg, tmp_path)
    man = load_manifest(tmp_path)
    (tmp_path / "stats.csv").write_text("tampered\n")
    rep = compare_outputs(man, tmp_path)
    assert not rep.identical and rep.matches["stats.csv"] is False


def test_manifest_as_config(tmp_path):
    from shelab.cli import run_command

    cfg = small(paths=2)
    run_command({"subcommand": "simulate"}, cfg, tmp_path)
    assert load_config(tmp_path / "manifest.json") == cfg
