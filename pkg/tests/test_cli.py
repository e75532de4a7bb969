import json
import subprocess
import sys

import numpy as np
import pytest

from crbart import io
from crbart.cli import main
from crbart.evaluation import MetricTable

TINY_INI = "[mcmc]\nm = 10\nburn_in = 20\nthin = 1\nn_draws = 30\n[run]\ngrid_points = 15\n"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    summary = json.loads(out) if code == 0 else None
    return code, summary, err


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "tiny.ini").write_text(TINY_INI)
    return tmp_path


def test_simulate_fit_predict_pipeline(capsys, workdir):
    cohort, model, pred = workdir / "c.csv", workdir / "m.json", workdir / "p.csv"
    code, s, _ = run(capsys, "simulate", "--scenario", "3.2", "--n", 250, "--censor", 0.2, "--seed", 1,
                     "--out", cohort, "--truth", workdir / "truth.csv")
    assert code == 0 and s["n"] == 250 and s["status"] == "ok"
    truth = io.read_columns(workdir / "truth.csv")
    np.testing.assert_allclose(truth["F1"] + truth["F2"] + truth["S"], 1.0, atol=1e-12)

    code, s, _ = run(capsys, "fit", "--data", cohort, "--config", workdir / "tiny.ini", "--seed", 2, "--out", model)
    assert code == 0 and s["n_draws"] == 30 and s["seed"] == 2

    (workdir / "new.csv").write_text("x1\n0\n1\n")
    code, s, _ = run(capsys, "predict", "--model", model, "--covariates", workdir / "new.csv", "--out", pred)
    assert code == 0 and s["subjects"] == 2
    cols = io.read_columns(pred)
    assert cols["S_mean"].size == 2 * s["times"]
    for key in ("S", "F1", "F2"):
        assert np.all((cols[f"{key}_mean"] >= 0) & (cols[f"{key}_mean"] <= 1))
        assert np.all(cols[f"{key}_lower"] <= cols[f"{key}_upper"])
    np.testing.assert_allclose(cols["S_mean"] + cols["F1_mean"] + cols["F2_mean"], 1.0, atol=1e-12)

    code, s, _ = run(capsys, "pd", "--model", model, "--data", cohort, "--var", "x1", "--a", 0, "--b", 1,
                     "--out", workdir / "pd.csv")
    assert code == 0 and s["variable"] == "x1"
    pd = io.read_columns(workdir / "pd.csv")
    np.testing.assert_allclose(pd["diff_mean"], pd["pd_a_mean"] - pd["pd_b_mean"], atol=1e-12)

    code, s, _ = run(capsys, "varsel", "--model", model, "--out", workdir / "vs.csv")
    assert code == 0 and set(s["ranking"]) == {"t", "x1"}
    vs = io.read_columns(workdir / "vs.csv")
    assert set(vs["subfit"]) == {"any_event", "cause1_given_event", "pooled"}
    assert np.all((vs["used"] >= 0) & (vs["used"] <= 1))


def test_fit_is_byte_identical_for_a_seed(capsys, workdir):
    run(capsys, "simulate", "--scenario", "1.2", "--n", 100, "--out", workdir / "c.csv")
    for name in ("a.json", "b.json"):
        code, _, _ = run(capsys, "fit", "--data", workdir / "c.csv", "--config", workdir / "tiny.ini",
                         "--method", "m2", "--seed", 7, "--out", workdir / name)
        assert code == 0
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
    art = io.load_model(workdir / "a.json")
    assert art.fit.method == "m2" and art.config.seed == 7 and art.run["grid_points"] == 15


def test_bench_row_count(capsys, workdir):
    code, s, _ = run(capsys, "bench", "--scenario", "1.1", "--n", 250, "-R", 10, "--methods", "m1,aj",
                     "--config", workdir / "tiny.ini", "--grid-points", 15, "--seed", 3,
                     "--out", workdir / "b.csv", "--long-out", workdir / "long.csv")
    assert code == 0 and s["replicates"] == 10 and s["failures"] == 0
    table = MetricTable.from_csv(workdir / "b.csv")
    assert len(table) == s["rows"] == 2 * 5 * 2
    assert {r["method"] for r in table.rows} == {"m1", "aj"}


def test_env_overrides(capsys, workdir, monkeypatch):
    monkeypatch.setenv("CRBART_SEED", "11")
    _, s, _ = run(capsys, "simulate", "--scenario", "2.1", "--n", 20, "--out", workdir / "c.csv")
    assert s["seed"] == 11
    _, s, _ = run(capsys, "simulate", "--scenario", "2.1", "--n", 20, "--seed", 4, "--out", workdir / "c.csv")
    assert s["seed"] == 4
    monkeypatch.setenv("CRBART_SEED", "eleven")
    code, _, err = run(capsys, "simulate", "--scenario", "2.1", "--out", workdir / "c.csv")
    assert code == 2 and "CRBART_SEED" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--scenario", "7.7", "--out", "{d}/c.csv"],
        ["fit", "--data", "{d}/missing.csv", "--out", "{d}/m.json"],
        ["fit", "--data", "{d}/bad.csv", "--out", "{d}/m.json"],
        ["predict", "--model", "{d}/bad.csv", "--covariates", "{d}/bad.csv", "--out", "{d}/p.csv"],
        ["bench", "--scenario", "1.1", "--methods", "cox", "--out", "{d}/b.csv"],
        ["fit", "--data", "{d}/bad.csv", "--config", "{d}/bad.ini", "--out", "{d}/m.json"],
    ],
)
def test_validation_errors_exit_2(capsys, workdir, argv):
    (workdir / "bad.csv").write_text("time,status,cause\n1,1,0\n")
    (workdir / "bad.ini").write_text("[mcmc]\nbogus = 1\n")
    code, _, err = run(capsys, *[a.format(d=workdir) for a in argv])
    assert code == 2
    assert len(err.strip().splitlines()) == 1 and "error" in err


def test_module_entry_point(workdir):
    res = subprocess.run(
        [sys.executable, "-m", "crbart.cli", "simulate", "--scenario", "1.1", "--n", "5", "--out", str(workdir / "c.csv")],
        capture_output=True, text=True,
    )
    assert res.returncode == 0 and json.loads(res.stdout)["command"] == "simulate"
    res = subprocess.run([sys.executable, "-m", "crbart.cli", "fit", "--data", str(workdir / "nope.csv"),
                          "--out", str(workdir / "m.json")], capture_output=True, text=True)
    assert res.returncode == 2
