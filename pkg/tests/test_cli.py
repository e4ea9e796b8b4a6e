import json
import subprocess
import sys

import numpy as np
import pytest

from fvtest.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from fvtest.datamodel import to_csv
from fvtest.simlab import gen_example1

FAST = ["--D", "20", "--K", "5", "--B", "100"]


@pytest.fixture
def ex1_csv(tmp_path):
    ds = gen_example1(2, 500, np.random.default_rng(31))
    to_csv(ds, tmp_path / "ex1.csv")
    return tmp_path / "ex1.csv"


def _report(out_dir):
    return json.loads((out_dir / "report.json").read_text())


def _strip_time(text):
    return "\n".join(line for line in text.splitlines() if '"created"' not in line)


def test_test_command_report(tmp_path, ex1_csv):
    args = ["test", "--input", str(ex1_csv), "--schema", "outcome=y,conditioning=v1", "--estimand", "cond_mean",
            "--class", "aggregate", "--seed", "7", *FAST]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    first_run = (tmp_path / "a" / "report.json").read_text()
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    rep = _report(tmp_path / "a")
    assert 0 < rep["p_aggregate"] <= 1
    assert rep["p_value"] == rep["p_aggregate"]
    assert rep["seed"] == 7 and rep["n"] == 500
    assert len(rep["classes"]) == 1 + 5 + 1
    first = rep["classes"][0]
    assert {"statistic", "p_alg1", "p_plus_one", "argmax"} <= set(first)
    assert "threshold" in first["argmax"] and len(rep["classes"][1]["argmax"]["a_hat"]) == 20
    assert 0 < rep["p_cauchy"] <= 1
    assert _strip_time(first_run) == _strip_time((tmp_path / "a" / "report.json").read_text())


@pytest.mark.parametrize("cls", ["indicator", "rkhs", "cauchy"])
def test_class_selection(tmp_path, ex1_csv, cls):
    assert main(["test", "--input", str(ex1_csv), "--schema", "outcome=y,conditioning=v1", "--class", cls,
                 "--out-dir", str(tmp_path), *FAST]) == EXIT_OK
    rep = _report(tmp_path)
    expect = {"indicator": rep["classes"][0]["p_plus_one"], "rkhs": rep["p_combined_rkhs"], "cauchy": rep["p_cauchy"]}
    assert rep["p_value"] == expect[cls]


def test_schema_missing_outcome(tmp_path, ex1_csv, capsys):
    code = main(["test", "--input", str(ex1_csv), "--schema", "conditioning=v1", "--out-dir", str(tmp_path)])
    assert code == EXIT_DATA
    assert "MissingColumn" in capsys.readouterr().err


def test_outcome_column_absent_from_file(tmp_path, ex1_csv, capsys):
    code = main(["test", "--input", str(ex1_csv), "--schema", "outcome=zz,conditioning=v1", "--out-dir", str(tmp_path)])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert "MissingColumn" in err and err.startswith("fvtest: [datamodel]")


def test_constant_conditioning(tmp_path, capsys):
    p = tmp_path / "c.csv"
    y = np.random.default_rng(0).normal(size=40)
    p.write_text("y,x\n" + "".join(f"{float(v)!r},1.0\n" for v in y))
    code = main(["test", "--input", str(p), "--schema", "outcome=y,conditioning=x", "--out-dir", str(tmp_path), *FAST])
    assert code == EXIT_NUMERIC
    assert "DegenerateConditioning" in capsys.readouterr().err


def test_seed_env_fallback(tmp_path, ex1_csv, monkeypatch):
    monkeypatch.setenv("FVTEST_SEED", "4242")
    assert main(["test", "--input", str(ex1_csv), "--schema", "outcome=y,conditioning=v1",
                 "--out-dir", str(tmp_path), *FAST]) == EXIT_OK
    assert _report(tmp_path)["seed"] == 4242


def test_config_file_overridden_by_flags(tmp_path, ex1_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# settings\ninput = {ex1_csv}\nschema = outcome=y,conditioning=v1\nB = 50\nK = 3\nD = 10\n"
                   "seed = 1\nclass = indicator\n")
    assert main(["test", "--config", str(cfg), "--B", "70", "--out-dir", str(tmp_path)]) == EXIT_OK
    rep = _report(tmp_path)
    assert rep["config"]["B"] == 70 and rep["config"]["K"] == 3 and rep["class"] == "indicator"
    assert len(rep["classes"]) == 5


def test_simulate_one_cell(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--example", "1", "--setting", "1", "--n", "60", "--reps", "2", "--methods", "indicator",
                 "--seed", "3", "--out-dir", str(out), *FAST])
    assert code == EXIT_OK
    lines = (out / "rejection_table.csv").read_text().splitlines()
    assert len(lines) == 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == 3 and man["config"]["reps"] == 2


def test_simulate_invalid_setting(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--setting", "4", "--out-dir", str(out)])
    assert code == EXIT_DATA
    assert "InvalidSetting" in capsys.readouterr().err
    assert not out.exists()


def test_full_profile_dry_run(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--profile", "full", "--dry-run", "--out-dir", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    # 3 examples x 3 settings x 5 sample sizes x 500 replicates
    assert "cells=45" in text and "replicates=22500" in text
    assert not out.exists()


def test_manifest_rerun_reproduces(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--example", "2", "--setting", "2", "--n", "60", "--reps", "4", "--coef", "gamma1=0.5",
                 "--seed", "11", "--out-dir", str(a), *FAST]) == EXIT_OK
    assert main(["simulate", "--manifest", str(a / "manifest.json"), "--out-dir", str(b)]) == EXIT_OK
    assert (a / "rejection_table.csv").read_bytes() == (b / "rejection_table.csv").read_bytes()
    assert "gamma1=0.5" in (a / "rejection_table.csv").read_text()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fvtest", "simulate", "--dry-run"], capture_output=True, text=True)
    assert r.returncode == 0 and "replicates=" in r.stdout
