import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hypergrad import cli
from hypergrad import config as cfgmod
from hypergrad.problems import build_problem

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def without_wallclock(path):
    rows = read_rows(path)
    idx = rows[0].index("wallclock_s")
    return [r[:idx] + r[idx + 1:] for r in rows]


TOY = {
    "problem": {"name": "toy", "seed": 0, "init_lambda": [2.8, -2.8]},
    "engine": {"mode": "k_rmd", "K": 1},
    "unroll": {"T": 100, "gamma": 0.1},
    "outer": {"optimizer": "gd", "eta0": 1.0, "schedule": "decay_sqrt", "iters": 500, "normalize_first_update": 0.6},
    "diagnostics": {"record_full_gradient_every": 1},
}


def test_run_writes_trace_and_summary(tmp_path):
    path = write_config(tmp_path, TOY)
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "b")]) == 0
    rows = read_rows(tmp_path / "a" / "trace.csv")
    assert tuple(rows[0]) == cli.TRACE_COLUMNS
    assert len(rows) == 501
    assert without_wallclock(tmp_path / "a" / "trace.csv") == without_wallclock(tmp_path / "b" / "trace.csv")
    raw = (tmp_path / "a" / "trace.csv").read_bytes()
    assert b"\r" not in raw
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    for key in ("final_f_value", "final_true_grad_norm", "final_f1", "iterations", "total_wallclock_s",
                "peak_states_stored", "config", "seed"):
        assert key in summary
    assert summary["iterations"] == 500 and summary["peak_states_stored"] == 2


def test_summary_round_trips_through_echo(tmp_path):
    path = write_config(tmp_path, {**TOY, "outer": {**TOY["outer"], "iters": 50}})
    cli.main(["run", "--config", str(path), "--out", str(tmp_path / "a")])
    first = json.loads((tmp_path / "a" / "summary.json").read_text())
    echo = write_config(tmp_path, first["config"], "echo.json")
    cli.main(["run", "--config", str(echo), "--out", str(tmp_path / "b")])
    second = json.loads((tmp_path / "b" / "summary.json").read_text())
    for s in (first, second):
        for key in ("total_wallclock_s", "sec_per_iter"):
            s.pop(key)
    assert first == second


def test_absent_and_undefined_cells(tmp_path):
    cfg = {**TOY, "outer": {**TOY["outer"], "iters": 12}, "diagnostics": {"record_full_gradient_every": 5}}
    cli.main(["run", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")])
    rows = read_rows(tmp_path / "o" / "trace.csv")
    col = rows[0].index("true_grad_norm")
    assert [r[col] == "" for r in rows[1:]] == [i not in (1, 5, 10, 12) for i in range(1, 13)]
    assert cli.fmt(cli.UNDEFINED) == "undefined"
    assert cli.fmt(None) == ""
    assert cli.fmt(0.1) == "0.1"


def test_schema_error_names_field(tmp_path, capsys):
    cfg = {**TOY, "engine": {"mode": "k_rmd", "K": 0}}
    assert cli.main(["run", "--config", str(write_config(tmp_path, cfg))]) != 0
    assert "engine.K" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = {**TOY, "unroll": {"T": 10, "horizon": 3}}
    assert cli.main(["run", "--config", str(write_config(tmp_path, cfg))]) != 0
    assert "unroll.horizon" in capsys.readouterr().err


def test_k_above_horizon_rejected(tmp_path, capsys):
    cfg = {**TOY, "engine": {"mode": "k_rmd", "K": 50}, "unroll": {"T": 10}}
    assert cli.main(["run", "--config", str(write_config(tmp_path, cfg))]) != 0
    assert "engine.K" in capsys.readouterr().err


def test_fmd_cap_exit(tmp_path, capsys):
    cfg = {"problem": {"name": "hypercleaning"}, "engine": {"mode": "fmd", "fmd_cap": 1000},
           "outer": {"iters": 3}}
    code = cli.main(["run", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code != 0
    assert "fmd_cap" in err and "hyper-iteration 1" in err


def test_gradcheck_toy(capsys):
    assert cli.main(["gradcheck", "--problem", "toy", "--lambda", "1,1", "--horizon", "100"]) == 0
    out = capsys.readouterr().out
    assert "k_rmd(K=1)" in out and "not gated" in out


def test_gradcheck_rows_values():
    rows = {r[0]: r for r in cli.gradcheck_rows(build_problem("toy", T=100), np.ones(2), 100)}
    for name in ("full_rmd", "fmd", "checkpointed_rmd"):
        assert rows[name][1] <= 1e-4 and rows[name][2]
    assert rows["k_rmd(K=1)"][1] > 0.5 and not rows["k_rmd(K=1)"][2]
    scalar = cli.gradcheck_rows(build_problem("counterexample", T=20), np.array([0.3]), 20)
    for name, err, gated, _ in scalar:
        if gated:
            assert err <= 1e-10


def test_gradcheck_unknown_problem(capsys):
    assert cli.main(["gradcheck", "--problem", "mnist", "--lambda", "1", "--horizon", "5"]) != 0
    err = capsys.readouterr().err
    assert "toy_tilde" in err and "hypercleaning" in err


def test_gradcheck_lambda_length(capsys):
    assert cli.main(["gradcheck", "--problem", "toy", "--lambda", "1,2,3", "--horizon", "5"]) != 0


def test_sweep_toy_tilde_gradient_norm_decreases(tmp_path):
    cfg = json.loads((CONFIGS / "toy_tilde_sweep.json").read_text())
    path = write_config(tmp_path, cfg)
    assert cli.main(["sweep-k", "--config", str(path), "--ks", "1,5,25,100", "--out", str(tmp_path / "s")]) == 0
    rows = read_rows(tmp_path / "s" / "sweep.csv")
    assert tuple(rows[0]) == cli.SWEEP_COLUMNS
    g = [float(r[2]) for r in rows[1:]]
    assert all(a > b for a, b in zip(g, g[1:]))
    for k in (1, 5, 25, 100):
        assert (tmp_path / "s" / f"K{k}" / "trace.csv").exists()


def test_sweep_hypercleaning_trends(tmp_path):
    cfg = json.loads((CONFIGS / "hypercleaning.json").read_text())
    path = write_config(tmp_path, cfg)
    assert cli.main(["sweep-k", "--config", str(path), "--ks", "1,5,full", "--out", str(tmp_path / "s")]) == 0
    rows = read_rows(tmp_path / "s" / "sweep.csv")[1:]
    assert [int(r[0]) for r in rows] == [1, 5, 101]
    f1 = [float(r[3]) for r in rows]
    assert all(b >= a - 0.05 for a, b in zip(f1, f1[1:]))
    sec = [float(r[5]) for r in rows]
    assert sec[0] < sec[1] < sec[2]
    peaks = [int(r[6]) for r in rows]
    assert peaks == [2, 6, 101]


def test_sweep_threads_match_serial(tmp_path, monkeypatch):
    cfg = {**TOY, "outer": {**TOY["outer"], "iters": 40}}
    path = write_config(tmp_path, cfg)
    cli.main(["sweep-k", "--config", str(path), "--ks", "1,3,7", "--out", str(tmp_path / "serial")])
    monkeypatch.setenv("HYPERGRAD_THREADS", "3")
    assert cli.thread_cap() == 3
    cli.main(["sweep-k", "--config", str(path), "--ks", "1,3,7", "--out", str(tmp_path / "par")])
    for k in (1, 3, 7):
        a = without_wallclock(tmp_path / "serial" / f"K{k}" / "trace.csv")
        b = without_wallclock(tmp_path / "par" / f"K{k}" / "trace.csv")
        assert a == b


def test_parse_ks():
    assert cli.parse_ks("1, 5,full", 100) == [1, 5, 101]
    with pytest.raises(cfgmod.ConfigError):
        cli.parse_ks("0", 10)
    with pytest.raises(cfgmod.ConfigError):
        cli.parse_ks("", 10)


def test_schema_shipped_in_docs():
    pkg = json.loads((ROOT / "src" / "hypergrad" / "config.schema.json").read_text())
    docs = json.loads((ROOT / "docs" / "config.schema.json").read_text())
    assert pkg == docs == cfgmod.load_schema()


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_example_configs_validate(path):
    cfg = cfgmod.load(path)
    problem, lam0 = cli.build(cfg)
    assert lam0 is None or lam0.shape == (problem.N,)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hypergrad", "gradcheck", "--problem", "counterexample",
                          "--lambda", "0.5", "--horizon", "20"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "full_rmd" in out.stdout
