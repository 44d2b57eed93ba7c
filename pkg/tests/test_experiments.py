import json

import numpy as np
import pytest

from lgpolymer.experiments import (
    EXPERIMENTS,
    ConfigError,
    ExperimentReport,
    Tolerances,
    brute_force_logZ,
    exp_boundary_free_endpoint,
    exp_burke,
    exp_chi,
    exp_clt_offchar,
    exp_duality,
    exp_exit_beta,
    exp_fixed_point,
    exp_free_endpoint,
    exp_lln_bulk,
    exp_mean_logz,
    exp_var_identity,
    exp_zeta,
    lattice_selftest,
    run_replicas,
)
from lgpolymer.randenv import RngStream, build_env, sample_gamma
from lgpolymer.specfun import ModelParams

from oracles import brute_log_z

# small configurations: fast, and exercise every code path
SMALL = {
    "mean-logz": lambda **k: exp_mean_logz(dims=(6, 8), reps=300, **k),
    "burke": lambda **k: exp_burke(dims=(8, 8), reps=300, **k),
    "fixed-point": lambda **k: exp_fixed_point(reps=5000, **k),
    "var-identity": lambda **k: exp_var_identity(N=12, reps=400, **k),
    "chi": lambda **k: exp_chi(N_list=(8, 16, 32), reps=200, reps_min=100, **k),
    "zeta": lambda **k: exp_zeta(N_list=(8, 16, 32), reps=100, **k),
    "clt-offchar": lambda **k: exp_clt_offchar(N=32, reps=200, **k),
    "lln-bulk": lambda **k: exp_lln_bulk(N=32, reps=50, coupled_reps=5, coupled_N=12, **k),
    "free-endpoint": lambda **k: exp_free_endpoint(N_list=(8, 16, 32), reps=50, **k),
    "boundary-free-endpoint": lambda **k: exp_boundary_free_endpoint(N=16, reps=100, ref_draws=2000, **k),
    "exit-beta": lambda **k: exp_exit_beta(dims=(6, 6), reps=200, **k),
    "duality": lambda **k: exp_duality(dims=(6, 6), reps=200, n_identity=5, **k),
}


@pytest.fixture(scope="module")
def small_reports():
    return {name: fn(seed=11, workers=1) for name, fn in SMALL.items()}


def test_registry_covers_small_runs():
    assert set(SMALL) | {"lattice-selftest"} == set(EXPERIMENTS)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_report_schema(small_reports, name):
    rep = small_reports[name]
    assert isinstance(rep, ExperimentReport) and rep.name == name
    d = json.loads(rep.to_json())
    assert d["schema"] == 1
    for key in ("parameters", "seeds", "estimates", "targets", "tolerances", "checks", "passed", "timing"):
        assert key in d
    assert d["seeds"]["master_seed"] == 11
    assert d["checks"] and all(1 <= c["criterion"] <= 14 for c in d["checks"])
    assert d["passed"] == all(c["passed"] for c in d["checks"])
    assert "timing" not in rep.to_dict(include_timing=False)


@pytest.mark.parametrize("name", ["mean-logz", "chi", "zeta", "duality", "free-endpoint", "boundary-free-endpoint"])
def test_worker_count_invariance(small_reports, name):
    again = SMALL[name](seed=11, workers=3)
    assert again.to_dict(include_timing=False) == small_reports[name].to_dict(include_timing=False)


def test_seed_changes_results(small_reports):
    other = SMALL["mean-logz"](seed=12, workers=1)
    assert other.estimates != small_reports["mean-logz"].estimates


def test_robust_small_checks(small_reports):
    # deterministic identities hold at any size
    dual = small_reports["duality"]
    assert [c.passed for c in dual.checks if "identit" in c.name] == [True]
    assert small_reports["mean-logz"].passed


@pytest.mark.parametrize("name,header", [
    ("chi", ["N", "var_logZ", "stderr"]),
    ("zeta", ["N", "sd_crossing", "stderr"]),
])
def test_csv_tables(small_reports, tmp_path, name, header):
    rep = small_reports[name]
    rep.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == header and len(lines) == 4
    assert [int(r.split(",")[0]) for r in lines[1:]] == [8, 16, 32]


def test_csv_missing(small_reports, tmp_path):
    with pytest.raises(ValueError):
        small_reports["burke"].write_csv(tmp_path / "x.csv")


class TestConfigErrors:
    @pytest.mark.parametrize("call", [
        lambda: exp_mean_logz(theta=2.0, mu=1.5, reps=10),
        lambda: exp_mean_logz(theta=-1.0, reps=10),
        lambda: exp_chi(N_list=(16, 8, 32), reps=10),
        lambda: exp_chi(N_list=(8, 16), reps=10),
        lambda: exp_zeta(tau=1.5, reps=10),
        lambda: exp_lln_bulk(s=0.0),
        lambda: exp_mean_logz(reps=1),
    ])
    def test_rejected(self, call):
        with pytest.raises(ConfigError):
            call()


class TestRunReplicas:
    def test_order_and_streams(self):
        out = run_replicas(lambda r: r.stream_id, 5, seed=3, block=7, workers=2)
        assert out == [(7 << 32) | r for r in range(5)]

    def test_values_independent_of_workers(self):
        f = lambda r: sample_gamma(1.0, r)
        assert run_replicas(f, 20, 1, 0, workers=1) == run_replicas(f, 20, 1, 0, workers=4)


class TestSelftest:
    def test_passes(self):
        rep = lattice_selftest(n_brute=20)
        assert rep.passed, [c.name for c in rep.checks if not c.passed]

    def test_brute_force_matches_oracle(self):
        env = build_env(4, 5, ModelParams(0.7, 1.5), RngStream(5))
        assert brute_force_logZ(env) == pytest.approx(brute_log_z(env.full_log_weights()), abs=1e-12)


def test_tolerances_default():
    t = Tolerances()
    assert t.sigma == 4.0 and t.p_min == 1e-3
    strict = exp_mean_logz(dims=(4, 4), reps=100, seed=2, workers=1, tol=Tolerances(sigma=1e-9))
    assert not strict.passed
    assert np.isfinite(strict.estimates["mean_logZ"])
