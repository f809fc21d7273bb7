import json
import subprocess
import sys

import numpy as np
import pytest

from edgram.cli import main
from edgram.gramian import lti_gramian_oracle
from edgram.io import read_json, read_matrix_csv, read_trajectory_csv, write_matrix_csv

GRID = ["--t0", "0", "--tf", "4", "--dt", "0.01"]
U = ["--input", "sin(t)+sin(3*t)"]

A = [[-1.0, 0.5, 0.0], [0.0, -2.0, 1.0], [0.2, 0.0, -1.5]]
B = [[1.0], [0.0], [0.5]]
C = [[1.0, 1.0, 0.0]]


@pytest.fixture
def lti_file(tmp_path):
    path = tmp_path / "lti.json"
    path.write_text(json.dumps({"builtin": "lti", "A": A, "B": B, "C": C}))
    return str(path)


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("EDGRAM_OUT_DIR", raising=False)
    monkeypatch.delenv("EDGRAM_THREADS", raising=False)


def test_simulate_zero_input_gives_zero_trajectory(lti_file, tmp_path):
    assert main(["simulate", "--model", lti_file, "--x0", "zeros", "--input", "zero", *GRID,
                 "--out", "z.csv"]) == 0
    traj = read_trajectory_csv(tmp_path / "z.csv")
    assert traj["X"].shape == (401, 3) and not traj["X"].any() and not traj["Y"].any()
    manifest = read_json(tmp_path / "z.manifest.json")
    assert manifest["schema_version"] == 1
    assert "z.csv" in manifest["artifacts"]
    assert manifest["grid"] == {"t0": 0.0, "tf": 4.0, "dt": 0.01}


def test_dt_not_dividing_interval_exits_2(capsys):
    code = main(["simulate", "--model", "rl:3", "--t0", "0", "--tf", "1", "--dt", "0.3"])
    assert code == 2
    err = capsys.readouterr().err
    assert "--dt" in err and "--tf" in err and "--t0" in err


@pytest.mark.parametrize("argv", [
    ["simulate", "--model", "rl:3", *GRID, "--x0", "1,2"],
    ["simulate", "--model", "rl:3", *GRID, "--input", "sin(t);cos(t)"],
    ["simulate", "--model", "rl:3", *GRID, "--input", "sin(x1)"],
    ["simulate", "--model", "missing.json", *GRID],
    ["gramian", "--model", "rl:3", *GRID, "--kind", "reach", "--threads", "0"],
    ["gramian", "--model", "rl:3", *GRID, "--kind", "dual", "--method", "frechet"],
    ["balance", "--wr", "only.csv"],
])
def test_config_errors_exit_2(argv):
    assert main(argv) == 2


def test_divergence_exits_3(tmp_path, capsys):
    path = tmp_path / "blow.json"
    path.write_text(json.dumps({"n": 1, "m": 1, "p": 1, "B": [[1]], "f": ["x1^2"], "h": ["x1"]}))
    assert main(["simulate", "--model", str(path), "--x0", "1", "--t0", "0", "--tf", "2", "--dt", "0.01",
                 "--scheme", "euler"]) == 3
    assert "step" in capsys.readouterr().err


def test_dual_without_certificate_exits_4(tmp_path, capsys):
    write_matrix_csv(tmp_path / "S.csv", np.diag([1.0, 2.0, 3.0]))
    code = main(["gramian", "--model", "rl:3", *GRID, *U, "--kind", "dual", "--S", str(tmp_path / "S.csv")])
    assert code == 4
    assert "res_dyn" in capsys.readouterr().err


def test_observability_matches_oracle(lti_file, tmp_path):
    assert main(["gramian", "--model", lti_file, "--t0", "0", "--tf", "5", "--dt", "0.001",
                 "--kind", "obs", "--method", "exact", "--out", "wo.csv"]) == 0
    W = read_matrix_csv(tmp_path / "wo.csv")
    _, Wo = lti_gramian_oracle(A, B, C, (0, 5))
    assert np.linalg.norm(W - Wo.W) <= 1e-6 * np.linalg.norm(Wo.W)
    side = read_json(tmp_path / "wo.json")
    assert side["kind"] == "observability"
    assert side["eigenvalues"] == sorted(side["eigenvalues"], reverse=True)


def test_pipeline_full_order_and_rank_error(tmp_path):
    base = ["--model", "rl:6", *GRID, *U]
    assert main(["simulate", *base, "--out", "full.csv"]) == 0
    assert main(["gramian", *base, "--kind", "reach", "--out", "wr.csv"]) == 0
    assert main(["gramian", *base, "--kind", "obs", "--out", "wo.csv"]) == 0
    assert main(["balance", "--wr", "wr.csv", "--wo", "wo.csv", "--out", "bal.json"]) == 0
    doc = read_json(tmp_path / "bal.json")
    assert (tmp_path / "bal_T.csv").is_file() and (tmp_path / "bal_Tinv.csv").is_file()
    assert doc["sigma"] == sorted(doc["sigma"], reverse=True)
    assert main(["reduce", *base, "--transform", "bal.json", "--k", "6", "--out", "red6.csv"]) == 0
    assert main(["compare", "--full", "full.csv", "--reduced", "red6.csv", "--out", "cmp.json"]) == 0
    assert read_json(tmp_path / "cmp.json")["rel_l2"] <= 1e-10

    # a rank-deficient pair only supports small k
    write_matrix_csv(tmp_path / "thin.csv", np.diag([1.0, 0.5, 0, 0, 0, 0]))
    assert main(["balance", "--wr", "thin.csv", "--wo", "wo.csv", "--out", "thin.json"]) == 0
    assert read_json(tmp_path / "thin.json")["effective_rank"] == 2
    assert main(["reduce", *base, "--transform", "thin.json", "--k", "3"]) == 5
    assert main(["reduce", *base, "--transform", "thin.json", "--k", "7"]) == 2


def test_balance_matches_hankel_values(lti_file, tmp_path):
    Wc, Wo = lti_gramian_oracle(A, B, C, (0, 10))
    write_matrix_csv(tmp_path / "wc.csv", Wc.W)
    write_matrix_csv(tmp_path / "wo.csv", Wo.W)
    assert main(["balance", "--wr", "wc.csv", "--wo", "wo.csv"]) == 0
    sigma = np.array(read_json(tmp_path / "balance.json")["sigma"])
    # eigenvalues of L' Wc L with Wo = L L' equal those of Wo Wc but come
    # from a symmetric problem, which resolves the smallest value better
    L = np.linalg.cholesky(Wo.W)
    hankel = np.sqrt(np.linalg.eigvalsh(L.T @ Wc.W @ L)[::-1])
    np.testing.assert_allclose(sigma, hankel, rtol=1e-11)


def test_checks(tmp_path):
    base = ["--model", "rl:10", *GRID, *U]
    assert main(["check", "symmetry", *base, "--S", "identity", "--out", "sym.json"]) == 0
    cert = read_json(tmp_path / "sym.json")
    assert cert["verdict"] is True and cert["res_dyn"] == 0.0 and cert["res_out"] == 0.0
    blocked = tmp_path / "blocked.json"
    blocked.write_text(json.dumps({"builtin": "lti", "A": [[-1, 0], [0, -2]], "B": [[1], [0]],
                                   "C": [[1, 1]]}))
    assert main(["check", "pd", "--model", str(blocked), *GRID, "--kind", "reach",
                 "--subintervals", "4", "--out", "pd.json"]) == 0
    rep = read_json(tmp_path / "pd.json")
    assert rep["verdict"] is False and not any(e["verdict"] for e in rep["subintervals"])
    assert main(["check", "pd", "--model", "rl:3", *GRID, "--kind", "reach", "--subintervals", "0"]) == 2


def test_outputs_are_deterministic_and_rerunnable(tmp_path):
    argv = ["gramian", "--model", "rl:5", *GRID, *U, "--kind", "reach", "--method", "frechet",
            "--threads", "1", "--out", "w.csv"]
    assert main(argv) == 0
    first = (tmp_path / "w.csv").read_bytes(), (tmp_path / "w.json").read_bytes()
    assert main(argv) == 0
    assert ((tmp_path / "w.csv").read_bytes(), (tmp_path / "w.json").read_bytes()) == first
    assert main(["rerun", "w.manifest.json"]) == 0
    # a tampered artifact is detected
    (tmp_path / "w.manifest.json").write_text(
        (tmp_path / "w.manifest.json").read_text().replace(
            read_json(tmp_path / "w.manifest.json")["artifacts"]["w.csv"], "0" * 64))
    assert main(["rerun", "w.manifest.json"]) == 1


def test_threaded_frechet_matches_sequential(tmp_path):
    argv = ["gramian", "--model", "rl:5", *GRID, *U, "--kind", "obs", "--method", "frechet"]
    assert main([*argv, "--threads", "1", "--out", "a.csv"]) == 0
    assert main([*argv, "--threads", "4", "--out", "b.csv"]) == 0
    np.testing.assert_allclose(read_matrix_csv(tmp_path / "a.csv"), read_matrix_csv(tmp_path / "b.csv"),
                               rtol=0, atol=1e-15)


def test_environment_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("EDGRAM_OUT_DIR", str(tmp_path / "envout"))
    (tmp_path / "envout").mkdir()
    assert main(["simulate", "--model", "rl:3", *GRID]) == 0
    assert (tmp_path / "envout" / "trajectory.csv").is_file()
    monkeypatch.setenv("EDGRAM_THREADS", "many")
    assert main(["gramian", "--model", "rl:3", *GRID, "--kind", "reach", "--method", "frechet"]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edgram.cli", "simulate", "--model", "rl:2",
                           "--t0", "0", "--tf", "1", "--dt", "0.3"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "edgram.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip().endswith("0.1.0")
