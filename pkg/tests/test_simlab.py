import csv
import math

import numpy as np
import pytest

from fvtest import simlab
from fvtest.datamodel import validate
from fvtest.errors import InvalidSetting
from fvtest.simlab import (
    METHODS,
    TABLE_COLUMNS,
    DgpSpec,
    PipelineSettings,
    build_grid,
    gen_example1,
    gen_example2,
    gen_example3,
    monte_carlo,
    replicate_seeds,
    rho_example3,
    run_manifest,
)

BIG = 100_000
FAST = PipelineSettings(D=20, K=5, B=60)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_example1_null_uncorrelated():
    ds = gen_example1(1, BIG, rng(1))
    assert abs(np.corrcoef(ds.conditioning[:, 0], ds.outcome)[0, 1]) < 0.01


def test_example1_slope():
    ds = gen_example1(2, BIG, rng(2))
    slope = np.polyfit(ds.conditioning[:, 0], ds.outcome, 1)[0]
    assert abs(slope - 0.25) < 0.02


def test_example1_even_alternative_has_zero_covariance():
    ds = gen_example1(3, BIG, rng(3))
    x, y = ds.conditioning[:, 0], ds.outcome
    assert abs(np.cov(x, y)[0, 1]) < 0.02
    # but the mean does depend on x
    assert np.mean(y[np.abs(x) > 0.4]) - np.mean(y[np.abs(x) < 0.1]) > 0.5


def test_example2_constant_effect():
    ds = gen_example2(1, BIG, rng(4))
    t, y = ds.treatment, ds.outcome
    assert abs(y[t == 1].mean() - y[t == 0].mean() - 1.0) < 0.02
    assert ds.known_propensity == 0.5


def test_example2_linear_effect_ols():
    ds = gen_example2(2, BIG, rng(5))
    w, t, y = ds.conditioning[:, 0], ds.treatment, ds.outcome
    X = np.column_stack([np.ones_like(w), w, t, w * t])
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    assert abs(coef[3] - 1.0) < 0.05


def test_example2_noise_reading():
    def resid_var(noise):
        ds = gen_example2(1, BIG, rng(6), {"beta1": 0.0, "gamma0": 0.0}, noise=noise)
        return ds.outcome.var()

    assert resid_var("variance") == pytest.approx(0.5, rel=0.03)
    assert resid_var("sd") == pytest.approx(0.25, rel=0.03)


def test_example3_null():
    ds = gen_example3(1, BIG, rng(7))
    assert abs(np.cov(ds.outcome, ds.secondary_outcome)[0, 1]) < 0.01


def test_example3_rho_in_top_bin():
    ds = gen_example3(2, BIG, rng(8))
    z = ds.conditioning[:, 0]
    m = z >= 0.9
    r = np.corrcoef(ds.outcome[m], ds.secondary_outcome[m])[0, 1]
    target = (math.exp(0.9025) - 1) / (math.exp(0.9025) + 1)
    assert rho_example3(0.95) == pytest.approx(target, rel=1e-14)
    assert target == pytest.approx(0.42292596466040255, rel=1e-14)  # mpmath, 30 digits
    assert abs(r - target) < 0.05


def test_example3_printed_setting3_constant_covariance():
    ds = gen_example3(3, BIG, rng(9))
    z, y, x = ds.conditioning[:, 0], ds.outcome, ds.secondary_outcome
    assert z.min() >= 0
    lo, hi = z < 0.5, z >= 0.5
    for m in (lo, hi):
        assert abs(np.mean(y[m] * x[m]) - 0.5) < 0.03


def test_example3_symmetric_variant():
    ds = gen_example3(3, BIG, rng(10), z_support="symmetric")
    z, y, x = ds.conditioning[:, 0], ds.outcome, ds.secondary_outcome
    assert abs(np.mean(y[z <= 0] * x[z <= 0])) < 0.03
    assert abs(np.mean(y[z > 0] * x[z > 0]) - 0.5) < 0.03


@pytest.mark.parametrize("example", [1, 2, 3])
@pytest.mark.parametrize("setting", [1, 2, 3])
def test_generated_datasets_validate(example, setting):
    ds = DgpSpec(example, setting, 50).generate(rng(example * 10 + setting))
    assert validate(ds) is ds and ds.n == 50


def test_dgp_validation():
    with pytest.raises(InvalidSetting):
        DgpSpec(1, 4, 100)
    with pytest.raises(InvalidSetting):
        DgpSpec(4, 1, 100)
    with pytest.raises(InvalidSetting):
        DgpSpec(1, 1, 24)
    with pytest.raises(InvalidSetting):
        gen_example1(0, 10, rng())


def test_params_echo():
    assert DgpSpec(2, 1, 100, {"gamma1": 2.0}).params_text() == "beta0=0.0;beta1=1.0;gamma0=1.0;gamma1=2.0;noise=variance"
    assert DgpSpec(1, 2, 100).params_text() == ""
    assert "z_support=symmetric" in DgpSpec(3, 3, 100, z_support="symmetric").params_text()


def test_replicate_streams_distinct():
    a = replicate_seeds(1, DgpSpec(1, 1, 100), 0)
    b = replicate_seeds(1, DgpSpec(1, 1, 100), 1)
    c = replicate_seeds(1, DgpSpec(1, 2, 100), 0)
    draws = [np.random.default_rng(s[0]).random(4) for s in (a, b, c)]
    assert not np.array_equal(draws[0], draws[1]) and not np.array_equal(draws[0], draws[2])
    assert len({a[1], b[1], c[1]}) == 3


def test_single_rep_gives_binary_rates():
    table = monte_carlo([DgpSpec(1, 2, 60)], n_reps=1, settings=FAST, master_seed=3)
    assert [r.method for r in table.rows] == list(METHODS)
    assert all(r.rejection_rate in (0.0, 1.0) for r in table.rows)


def test_table_invariants_and_determinism():
    grid = build_grid([1, 3], [1], [60])
    t1 = monte_carlo(grid, n_reps=12, settings=FAST, master_seed=4)
    t2 = monte_carlo(grid, n_reps=12, settings=FAST, master_seed=4)
    for a, b in zip(t1.rows, t2.rows):
        assert a.rejection_rate == b.rejection_rate
        assert 0 <= a.rejection_rate <= 1
        assert a.mc_stderr == pytest.approx(math.sqrt(a.rejection_rate * (1 - a.rejection_rate) / 12))
        assert a.status == "ok"
    for key in t1.pvalues:
        np.testing.assert_array_equal(t1.pvalues[key], t2.pvalues[key])


def test_grid_order_and_chunking_irrelevant():
    grid = build_grid([1, 2], [2], [60])
    t1 = monte_carlo(grid, ["indicator", "aggregate"], n_reps=10, settings=FAST, master_seed=5, chunk_size=3)
    t2 = monte_carlo(grid[::-1], ["indicator", "aggregate"], n_reps=10, settings=FAST, master_seed=5, chunk_size=25)
    for key in t1.pvalues:
        np.testing.assert_array_equal(t1.pvalues[key], t2.pvalues[key])


def test_error_cell_does_not_abort(monkeypatch):
    real = simlab.run_replicate

    def flaky(dgp, rep, *a, **k):
        if dgp.example == 3:
            raise InvalidSetting("boom")
        return real(dgp, rep, *a, **k)

    monkeypatch.setattr(simlab, "run_replicate", flaky)
    table = monte_carlo(build_grid([1, 3], [1], [60]), ["indicator"], n_reps=3, settings=FAST)
    ok, bad = table.row("indicator", 1, 1, 60), table.row("indicator", 3, 1, 60)
    assert ok.status == "ok"
    assert bad.status.startswith("error") and math.isnan(bad.rejection_rate)


def test_csv_columns(tmp_path):
    table = monte_carlo([DgpSpec(2, 1, 60)], ["cauchy"], n_reps=2, settings=FAST)
    table.to_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TABLE_COLUMNS
    assert len(rows) == 2 and rows[1][8].startswith("beta0=")
    table.to_csv(tmp_path / "w.csv", include_timing=True)
    assert open(tmp_path / "w.csv").readline().strip().endswith("wall_time")


def test_manifest_contents():
    table = monte_carlo([DgpSpec(1, 1, 60)], ["indicator"], n_reps=2, settings=FAST, master_seed=9)
    man = run_manifest({"seed": 9}, table)
    assert man["config"]["seed"] == 9
    assert set(man["versions"]) >= {"fvtest", "numpy", "scipy", "python"}
    assert "ex1-s1-n60" in man["wall_time_seconds"]


def test_class_specs_layout():
    specs = PipelineSettings(D=10, K=3).class_specs()
    assert specs[0].label == "indicator"
    assert [s.gamma for s in specs[1:]] == pytest.approx([1e-3, 1e-4, 1e-5, 1.0])
