import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from critsob import ConfigError, Grid3D, UnitBall
from critsob.cli import (EXIT_CONFIG, EXIT_ERROR, EXIT_FAIL, EXIT_OK, config_hash, eval_number,
                         fmt, load_config, read_grid_file, read_radial_table, run)


def _write(path, text):
    path.write_text(text)
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(ln for ln in fh if not ln.startswith("#")))


def _kv(path):
    return {k: v for k, v in _rows(path)[1:]}


# value parsing ---------------------------------------------------------------

def test_eval_number():
    assert eval_number("-pi^2/4") == -math.pi ** 2 / 4
    assert eval_number("2*e") == 2 * math.e
    assert eval_number("1e-3") == 1e-3
    for bad in ("__import__('os')", "x", "1/0", "inf", "[1]"):
        with pytest.raises(ConfigError):
            eval_number(bad)


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "true" and fmt(False) == "false"
    assert fmt(float("nan")) == "nan" and fmt(-math.inf) == "-inf"
    assert fmt(None) == ""
    assert fmt(7) == "7"


def test_grid_file_is_z_major(tmp_path):
    nx, ny, nz = 2, 3, 4
    vals = [100 * k + 10 * j + i for k in range(nz) for j in range(ny) for i in range(nx)]
    p = _write(tmp_path / "v.txt", f"{nx} {ny} {nz}\n" + "\n".join(map(str, vals)))
    arr = read_grid_file(p)
    assert arr.shape == (2, 3, 4)
    assert arr[1, 2, 3] == 321
    with pytest.raises(ConfigError):
        read_grid_file(_write(tmp_path / "w.txt", "2 2 2\n1 2 3"))


def test_radial_table(tmp_path):
    r, v = read_radial_table(_write(tmp_path / "t.txt", "# r v\n0 1\n0.5 2\n1 3\n"))
    assert np.array_equal(r, [0, 0.5, 1]) and np.array_equal(v, [1, 2, 3])
    with pytest.raises(ConfigError):
        read_radial_table(_write(tmp_path / "u.txt", "0 1\n0 2\n"))


# configuration ---------------------------------------------------------------

def test_defaults():
    cfg = load_config(None, "qv")
    assert cfg.kind == "ball" and cfg.method == "radial" and cfg.radial_n == 256
    assert cfg.a.value == -math.pi ** 2 / 4 and cfg.V.value == -1.0
    assert load_config(None, "minimize").radial_n == 512


def test_config_errors(tmp_path):
    cases = ["[domain]\nkind = torus\n",
             "[domain]\nshape = ball\n",
             "[extra]\nx = 1\n",
             "[potential]\na = foo\n",
             "[discretization]\nradial_n = 0\n",
             "[run]\nlam = -1\n",
             "[run]\ngtol = 0\n",
             "[potential]\nv = radial:missing.txt\n",
             "not an ini file"]
    for k, text in enumerate(cases):
        p = _write(tmp_path / f"c{k}.ini", text)
        with pytest.raises(ConfigError):
            load_config(p, "qv")


def test_config_hash_depends_on_content_and_seed():
    a = load_config(None, "qv")
    assert config_hash(a, 0) == config_hash(load_config(None, "qv"), 0)
    assert config_hash(a, 0) != config_hash(a, 1)


# commands --------------------------------------------------------------------

def test_qv_command(tmp_path):
    assert run("qv", out=str(tmp_path)) == EXIT_OK
    text = (tmp_path / "qv.csv").read_text().splitlines()
    assert text[0].startswith("# artifact-version=0.1.0, config-hash=")
    assert text[1] == "x,y,z,q_v"
    assert float(text[2].split(",")[3]) == pytest.approx(-2 * math.pi, abs=1e-5)


def test_malformed_config_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    for k, text in enumerate(("[potential]\nA = 1\nbogus = 2\n", "[run]\nlam = -50\n")):
        cfg = _write(tmp_path / f"bad{k}.ini", text)
        assert run("greens", config=str(cfg), out=str(out)) == EXIT_CONFIG
    assert not out.exists()
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "config" and rec["type"] == "ConfigError"


def test_solver_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path / "c.ini", "[potential]\na = -20\n")
    assert run("greens", config=str(cfg), out=str(tmp_path)) == EXIT_ERROR
    rows = _rows(tmp_path / "error.csv")
    assert rows[0] == ["command", "error_type", "message"]
    assert rows[1][1] == "NonCoercive"
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["type"] == "NonCoercive"


def test_criticality_fail_exit_code(tmp_path):
    cfg = _write(tmp_path / "c.ini", "[potential]\na = 0\n")
    assert run("criticality", config=str(cfg), out=str(tmp_path)) == EXIT_FAIL
    kv = _kv(tmp_path / "criticality.csv")
    assert kv["verdict"] == "Supercritical-like"


def test_greens_radial_outputs(tmp_path):
    assert run("greens", out=str(tmp_path)) == EXIT_OK
    rows = _rows(tmp_path / "greens.csv")
    assert rows[0] == ["r", "H", "G"]
    assert _kv(tmp_path / "greens_summary.csv")["solver"] == "RadialShooting"


def test_greens_grid_with_potential_file(tmp_path):
    n = 9
    g = Grid3D(UnitBall(), n)
    vals = np.full(g.shape, -1.0).transpose(2, 1, 0).ravel()
    _write(tmp_path / "a.txt", f"{n} {n} {n}\n" + "\n".join(map(str, vals)))
    cfg = _write(tmp_path / "c.ini", "[discretization]\nmethod = grid\ngrid_n = 9\n"
                                     "[potential]\na = grid:a.txt\n")
    assert run("greens", config=str(cfg), out=str(tmp_path / "o")) == EXIT_OK
    assert _rows(tmp_path / "o" / "greens.csv")[0] == ["x", "y", "z", "H", "G"]
    bad = _write(tmp_path / "d.ini", "[discretization]\nmethod = grid\ngrid_n = 11\n"
                                     "[potential]\na = grid:a.txt\n")
    assert run("greens", config=str(bad), out=str(tmp_path / "p")) == EXIT_CONFIG
    assert not (tmp_path / "p").exists()


def test_determinism(tmp_path):
    for k in range(2):
        assert run("trial-sweep", out=str(tmp_path / f"r{k}")) == EXIT_OK
    for name in ("trial_sweep.csv", "trial_sweep_summary.csv"):
        assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes()


def test_lemma_validate(tmp_path):
    assert run("lemma-validate", "lem-uh", out=str(tmp_path)) == EXIT_OK
    assert (tmp_path / "lemma_lem-uh.csv").exists()
    assert _rows(tmp_path / "lemma_summary.csv")[1][0] == "lem-uh"
    assert run("lemma-validate", "nope", out=str(tmp_path / "x")) == EXIT_CONFIG
    assert run("lemma-validate", out=str(tmp_path / "y")) == EXIT_CONFIG


def test_minimize_then_blowup(tmp_path):
    cfg = _write(tmp_path / "c.ini", "[potential]\neps = 0.02\n"
                                     "[run]\nminimizer = out/minimizer.csv\n")
    assert run("minimize", config=str(cfg), out=str(tmp_path / "out")) == EXIT_OK
    kv = _kv(tmp_path / "out" / "minimize.csv")
    assert kv["status"] == "converged" and float(kv["S_minus_S_est"]) > 0
    assert run("blowup", config=str(cfg), out=str(tmp_path / "b")) == EXIT_OK
    kv = _kv(tmp_path / "b" / "blowup.csv")
    assert float(kv["eps_lambda"]) == pytest.approx(math.pi ** 3 / 2, rel=0.3)


def test_blowup_rejects_mismatched_minimizer(tmp_path):
    cfg = _write(tmp_path / "c.ini", "[potential]\neps = 0.02\n"
                                     "[run]\nminimizer = out/minimizer.csv\n")
    assert run("minimize", config=str(cfg), out=str(tmp_path / "out")) == EXIT_OK
    bad = _write(tmp_path / "d.ini", "[discretization]\nradial_n = 128\n[potential]\neps = 0.02\n"
                                     "[run]\nminimizer = out/minimizer.csv\n")
    assert run("blowup", config=str(bad), out=str(tmp_path / "b")) == EXIT_CONFIG


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CSL_THREADS", "zero")
    assert run("qv", out=str(tmp_path / "a")) == EXIT_CONFIG
    monkeypatch.setenv("CSL_THREADS", "2")
    assert run("qv", out=str(tmp_path / "b")) == EXIT_OK


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "critsob", "qv", "--out", str(tmp_path),
                          "--threads", "1"], capture_output=True, text=True)
    assert res.returncode == 0
    assert (tmp_path / "qv.csv").exists()
    res = subprocess.run([sys.executable, "-m", "critsob", "nope"], capture_output=True)
    assert res.returncode != 0
