import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cci_lab.cli import fmt, main, parse_behavior, parse_mdp


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def grid_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "grid.jsonl"
    assert run("gen", "--mdp", "gridworld:5x5", "--behavior", "eps-greedy:0.2", "--n", 5000,
               "--seed", 0, "--out", path) == 0
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- specs ------------------------------------------------------------------------


def test_parse_specs(tmp_path):
    assert parse_mdp("gridworld:3x4").n_states == 12
    assert parse_mdp("chain:6").n_states == 6
    assert parse_mdp("random:4x2:7").n_actions == 2
    mdp = parse_mdp("random:3x2:1")
    mdp.save(tmp_path / "m.json")
    np.testing.assert_array_equal(parse_mdp(str(tmp_path / "m.json")).reward, mdp.reward)
    pi = parse_behavior("eps-greedy:0.2", parse_mdp("gridworld:5x5"))
    assert abs(pi.probs.max() - 0.85) < 1e-12


def test_bad_spec_exit_code(tmp_path):
    assert run("gen", "--mdp", "torus:3", "--out", tmp_path / "x.jsonl") == 2
    assert run("gen", "--behavior", "eps-greedy:2", "--out", tmp_path / "x.jsonl") == 2


def test_fmt_roundtrip():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, 363.73636363636365):
        assert float(fmt(x)) == x


# -- gen ---------------------------------------------------------------------------


def test_gen_counts_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert run("gen", "--mdp", "gridworld:5x5", "--behavior", "uniform", "--n", 10_000,
                   "--seed", 7, "--out", p) == 0
    lines = a.read_text().splitlines()
    assert len(lines) == 10_001
    assert "meta" in json.loads(lines[0])
    assert a.read_bytes() == b.read_bytes()
    assert "10000 transitions" in capsys.readouterr().out
    man = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert man["seed"] == 7 and "config_hash" in man and "numpy" in man["versions"]


def test_gen_zero(tmp_path):
    p = tmp_path / "z.jsonl"
    assert run("gen", "--n", 0, "--out", p) == 0
    assert len(p.read_text().splitlines()) == 1


def test_gen_unwritable(tmp_path, capsys):
    assert run("gen", "--n", 10, "--out", tmp_path / "missing" / "dir" / "x.jsonl") == 2
    assert "cannot write" in capsys.readouterr().err


# -- train ---------------------------------------------------------------------------


def test_train_outputs(grid_data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_steps": 600, "eval_every": 200, "seed": 3}))
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--data", grid_data, "--out", out) == 0
    rows = read_csv(out / "trace.csv")
    assert list(rows[0]) == ["step", "lambda", "constraint", "J_pi", "J_beta"]
    assert [int(r["step"]) for r in rows] == [0, 200, 400, 600]
    assert all(float(r["lambda"]) >= 0 for r in rows)
    ck = json.loads((out / "checkpoint.json").read_text())
    assert np.asarray(ck["logits"]).shape == (25, 4)
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["args"]["config"]["n_steps"] == 600


def test_train_reproducible_from_manifest(grid_data, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run("train", "--data", grid_data, "--out", out1, "--n-steps", 300) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(json.loads((out1 / "manifest.json").read_text())["args"]["config"]))
    assert run("train", "--config", cfg, "--data", grid_data, "--out", out2) == 0
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()


def test_train_malformed_config(grid_data, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"alpha": -1, "unknown_field": 1}))
    assert run("train", "--config", cfg, "--data", grid_data, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "unknown_field" in err


def test_train_missing_dataset(tmp_path):
    assert run("train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "o") == 2


# -- verify ----------------------------------------------------------------------------


def test_verify_pdl_passes(tmp_path, capsys):
    assert run("verify", "--suite", "pdl", "--n", 100, "--seed", 1, "--out", tmp_path / "v") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert json.loads(lines[-1])["summary"]["passed"]
    assert len((tmp_path / "v" / "reports.jsonl").read_text().splitlines()) == 200


def test_verify_all_emits_every_check(capsys):
    assert run("verify", "--suite", "all", "--n", 3, "--seed", 0) == 0
    reports = [json.loads(ln) for ln in capsys.readouterr().out.strip().splitlines()[:-1]]
    checks = {r["check"] for r in reports}
    assert checks == {"pdl_standard", "pdl_maxent", "prop1_monotone", "prop1_derivative", "theorem1",
                      "theorem2_shaped", "theorem2_original", "occupancy_bound", "advantage_bound"}


def test_verify_fault_injection_fails():
    assert run("verify", "--suite", "pdl", "--n", 3, "--inject-fault", "--quiet") == 1


def test_verify_unknown_suite():
    with pytest.raises(SystemExit) as exc:
        run("verify", "--suite", "lemma9")
    assert exc.value.code == 2


# -- spectrum ---------------------------------------------------------------------------


def test_spectrum_rows(grid_data, tmp_path):
    out = tmp_path / "spec.csv"
    assert run("spectrum", "--data", grid_data, "--alpha", 0.1, "--lambdas", "0,0.1,1", "--out", out) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["lambda", "regime", "g", "dg_dlambda", "wbc_threshold"]
    assert [r["regime"] for r in rows[:2]] == ["Support", "KlDensity"]
    assert rows[2]["regime"] in {"DensityToWbc", "PracticalWbc"}


def test_spectrum_monotone(grid_data, tmp_path):
    out = tmp_path / "spec.csv"
    grid = ",".join(str(x) for x in np.linspace(0, 2, 21))
    assert run("spectrum", "--data", grid_data, "--lambdas", grid, "--out", out) == 0
    g = [float(r["g"]) for r in read_csv(out)]
    dg = [float(r["dg_dlambda"]) for r in read_csv(out)]
    assert np.all(np.diff(g) >= -1e-12)
    assert min(dg) >= 0.0


def test_spectrum_empty_grid(grid_data, tmp_path):
    assert run("spectrum", "--data", grid_data, "--lambdas", "", "--out", tmp_path / "s.csv") == 2


# -- sweep -------------------------------------------------------------------------------


def test_sweep_deterministic_order(grid_data, tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    args = ["sweep", "--data", grid_data, "--lambdas", "0,0.1", "--seeds", "0,1", "--n-steps", 100]
    assert run(*args, "--out", out1) == 0
    assert run(*args, "--out", out2, "--workers", 2) == 0
    rows = read_csv(out1 / "sweep.csv")
    assert [(float(r["lambda_init"]), int(r["seed"])) for r in rows] == [(0, 0), (0, 1), (0.1, 0), (0.1, 1)]
    assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()


# -- entry points ------------------------------------------------------------------------


def test_module_entry_point_and_log_env():
    env = {**os.environ, "ACPO_LOG": "INFO"}
    proc = subprocess.run([sys.executable, "-m", "cci_lab", "verify", "--suite", "thm1", "--n", "2", "--quiet"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert json.loads(proc.stdout.strip().splitlines()[-1])["summary"]["passed"]


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "cci_lab", "train", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
