import json
import shutil
import subprocess

import pytest

from fracblow.cli import EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERIC, EXIT_OK, main

CFG = """
label = cli
d = 1
s = 0.6
mass_critical = true
n = 256
box = 16
initial = 0.8*Q
t_end = 0.2
sample_every = 5
keep_every = 2
profile_n = 256
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(CFG)
    return p


def test_ground_state(tmp_path, capsys):
    out = tmp_path / "q.fld"
    assert main(["ground-state", "--d", "1", "--s", "0.6", "--n", "256", "--box", "16", "--out", str(out)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["params"]["alpha"] == pytest.approx(2.4)
    assert rep["residual_l2"] < 1e-8
    assert out.exists()


def test_ground_state_warm_start(tmp_path, capsys):
    out = tmp_path / "q.fld"
    args = ["ground-state", "--d", "1", "--s", "0.6", "--n", "256", "--box", "16"]
    assert main(args + ["--out", str(out)]) == EXIT_OK
    cold = json.loads(capsys.readouterr().out)["iterations"]
    assert main(args + ["--init", str(out)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["iterations"] < cold
    assert main(["ground-state", "--d", "1", "--s", "0.6", "--n", "128", "--box", "16", "--init", str(out)]) == EXIT_CONFIG


def test_ground_state_non_convergence(capsys):
    code = main(["ground-state", "--d", "1", "--s", "0.6", "--n", "256", "--box", "16", "--max-iter", "3"])
    assert code == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_and_report(tmp_path, cfg_file, capsys):
    run = tmp_path / "run"
    cache = tmp_path / "cache"
    assert main(["simulate", "--config", str(cfg_file), "--run-dir", str(run), "--cache", str(cache)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "Completed" in text
    assert main(["report", "--run", str(run), "--format", "text"]) == EXIT_OK
    assert capsys.readouterr().out == text
    assert main(["report", "--run", str(run), "--format", "csv"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("t,hs,")
    assert main(["report", "--run", str(run), "--format", "json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["label"] == "cli"


def test_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("d = 1\ns = x\nwhat = 1\n")
    assert main(["simulate", "--config", str(p)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 2" in err and "line 3" in err and "MissingKey" in err


def test_missing_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG


def test_fatal_hypothesis(tmp_path, capsys):
    p = tmp_path / "h.cfg"
    p.write_text(CFG.replace("s = 0.6", "s = 0.5"))
    code = main(["simulate", "--config", str(p), "--fatal-hypothesis", "--run-dir", str(tmp_path / "r")])
    assert code == EXIT_HYPOTHESIS


def test_decompose(tmp_path, capsys):
    from fracblow.decomposition import synth_sequence
    from fracblow.snapshot import write_field
    from fracblow.spectral import Field, ModelParams, make_grid
    import numpy as np

    g = make_grid(1, 512, 32.0)
    prof = Field(g, 1 / np.cosh(g.axis))
    seq_dir = tmp_path / "seq"
    seq_dir.mkdir()
    for k, m in enumerate(synth_sequence([prof], [4], 12).members):
        write_field(seq_dir / f"{k:03d}.fld", m, ModelParams.critical(1, 0.6))
    rep_path = tmp_path / "dec.json"
    assert main(["decompose", "--seq", str(seq_dir), "--report", str(rep_path)]) == EXIT_OK
    rep = json.loads(rep_path.read_text())
    assert rep["bubbles"] == 1
    assert (tmp_path / "dec_bubbles" / "bubble_00.fld").exists()


def test_sweep(tmp_path, cfg_file, capsys):
    code = main(["sweep", "--config", str(cfg_file), "--key", "normalize", "--values", "0.5,0.7",
                 "--out", str(tmp_path / "sw"), "--cache", str(tmp_path / "c")])
    assert code == EXIT_OK
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [r["normalize"] for r in rows] == ["0.5", "0.7"]


def test_diagnose_unknown_output(tmp_path, cfg_file, capsys):
    run = tmp_path / "run"
    main(["simulate", "--config", str(cfg_file), "--run-dir", str(run)])
    assert main(["diagnose", "--run", str(run), "--emit", "weird.out"]) == EXIT_CONFIG


@pytest.mark.skipif(shutil.which("fracblow") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["fracblow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "simulate" in res.stdout
