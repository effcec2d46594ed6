import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gfdetect import cli, harness as hs
from gfdetect.matio import read_basis, read_channel_dump, read_matrix
from gfdetect.pilots import read_plan_csv

SMALL = ["--set", "K=40", "--set", "M=8", "--set", "activity_prob=0.3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_simulate_writes_dumps(tmp_path, capsys):
    assert run("simulate", *SMALL, "--out", tmp_path) == 0
    sc = hs.DESK.replace(K=40, M=8, activity_prob=0.3)
    sig = hs.simulate_trial(sc, 0)
    H = read_channel_dump(tmp_path / "channels.bin")
    assert H.shape == (sig.active.size, 8, sc.T, sc.F)
    for p in range(sc.n_detect_blocks):
        assert np.array_equal(read_matrix(tmp_path / f"received_block{p}.bin"), sig.Y_blocks[p])
    assert np.array_equal(read_plan_csv(tmp_path / "plan.csv").z, sig.plan.z)
    truth = np.loadtxt(tmp_path / "truth.csv", delimiter=",", skiprows=1, dtype=int)
    assert np.array_equal(truth[:, 1].astype(bool), sig.truth)
    assert "active users" in capsys.readouterr().out


def test_learn_basis_then_detect(tmp_path, capsys):
    basis = tmp_path / "basis.bin"
    assert run("learn-basis", *SMALL, "--kind", "bwl", "--out", basis) == 0
    B = read_basis(basis)
    assert B.G.shape == (18, 3)
    out = tmp_path / "scores.csv"
    trace = tmp_path / "trace.csv"
    assert run("detect", *SMALL, "--basis", basis, "--out", out, "--trace", trace) == 0
    assert "objective per sweep" in capsys.readouterr().out
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 40 and rows[0].keys() == {"trial", "user", "score", "truth"}
    obj = np.loadtxt(trace, delimiter=",", skiprows=1)[:, 1]
    assert np.all(np.diff(obj) <= 1e-9 * (1 + np.abs(obj[:-1])))


def test_campaign_and_roc(tmp_path, capsys):
    camp = tmp_path / "camp"
    assert run("campaign", *SMALL, "--trials", 3, "--seed", 9, "--out", camp) == 0
    summary = json.loads((camp / "summary.json").read_text())
    assert summary["scenario"]["master_seed"] == 9 and summary["n_trials"] == 3
    assert (camp / "roc.png").exists()
    capsys.readouterr()
    assert run("roc", camp / "scores.csv", "--out", tmp_path / "r", "--n-thresholds", 50) == 0
    assert capsys.readouterr().out.startswith("pAUC[0.001, 0.1]")
    assert len((tmp_path / "r" / "roc.csv").read_text().splitlines()) == 53
    assert (tmp_path / "r" / "roc.png").exists()


def test_gen_patterns(tmp_path, capsys):
    path = tmp_path / "plan.csv"
    assert run("gen-patterns", "--K", 100, "--P", 4, "--J", 25, "--D", 2, "--out", path) == 0
    plan = read_plan_csv(path)
    assert plan.z.shape == (100, 4) and np.all(plan.degrees == 2)
    assert "0 collisions" in capsys.readouterr().out


def test_wlrma_bench(tmp_path, capsys):
    assert run("wlrma-bench", "--M", 30, "--users", 8, "--stages", 2, "--em-iterations", 3,
               "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "wlrma_trace.csv")))
    assert [r["method"] for r in rows].count("em") == 4
    assert (tmp_path / "wlrma_errors.png").exists() and (tmp_path / "wlrma_trace.png").exists()
    assert "all-one" in capsys.readouterr().out


def test_bad_input_exits_with_code_2(tmp_path, capsys):
    assert run("simulate", "--set", "bogus=1", "--out", tmp_path) == 2
    assert "unknown key" in capsys.readouterr().err
    assert run("simulate", "--scenario", "nowhere", "--out", tmp_path) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gfdetect.cli", "gen-patterns", "--K", "8", "--P", "2",
                          "--J", "4", "--out", str(tmp_path / "p.csv")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        cli.main([])
