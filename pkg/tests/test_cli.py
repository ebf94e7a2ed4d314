import csv
import json
import socket
import subprocess
import sys
import time

import pytest

from fsclb.cli import main

SMALL = ["--T", "120"]


@pytest.fixture
def cfg_file(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text('d = 8\nl = 3\nM = 3\nK = 5\nT = 120\n\n[env]\narm_rank = 2\n\n'
                 '[sweep]\nl = [2, 3]\nalpha = [0.5, 1.0]\n')
    return f


def test_run(tmp_path, cfg_file, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg_file), "--out", str(out), "--seed", "3",
                 "--algo", "fedlinucb", "--trials", "2"]) == 0
    data = json.loads((out / "summary.json").read_text())
    assert data["config"]["algo"] == "fedlinucb" and data["config"]["seed"] == 3
    assert [t["seed"] for t in data["trials"]] == [3, 4]
    assert (out / "rounds_1.csv").exists() and (out / "curves.csv").exists()
    assert "cum_regret" in capsys.readouterr().out


def test_run_theory(tmp_path, cfg_file, capsys):
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path), "--theory"]) == 0
    assert "theory checks: PASS" in capsys.readouterr().out
    data = json.loads((tmp_path / "summary.json").read_text())
    assert data["theory"][0]["passed"]


def test_check_default(capsys):
    assert main(["check", "--seed", "1"]) == 0
    text = capsys.readouterr().out
    lines = [ln for ln in text.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert lines and all(ln.startswith("PASS") for ln in lines)
    assert "communications" in text


def test_check_writes_report(tmp_path, cfg_file):
    assert main(["check", "--config", str(cfg_file), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "check.json").read_text())
    assert rep["checks"]["zero_truncation_regime"]["passed"]


def test_sweep(tmp_path, cfg_file):
    assert main(["sweep", "--config", str(cfg_file), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and {"l", "alpha", "cum_regret_mean", "com_T_mean"} <= set(rows[0])


def test_sweep_flags_skip_invalid(tmp_path, cfg_file):
    assert main(["sweep", "--config", str(cfg_file), "--out", str(tmp_path),
                 "--d", "6", "--l", "2,6"]) == 0
    with open(tmp_path / "sweep.csv") as fh:
        # alpha grid from the file still applies; l=6 points are skipped
        assert len(list(csv.DictReader(fh))) == 2


def test_sweep_nothing(tmp_path, capsys):
    assert main(["sweep", "--out", str(tmp_path)]) == 2


def test_plotdata(tmp_path, cfg_file):
    main(["run", "--config", str(cfg_file), "--out", str(tmp_path), "--trials", "2"])
    (tmp_path / "curves.csv").unlink()
    assert main(["plotdata", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 120 and "cum_scalars_mean" in rows[0]
    assert main(["plotdata", "--out", str(tmp_path / "empty")]) == 2


def test_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("d = 4\nl = 9\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_and_agent_processes(tmp_path, cfg_file):
    port = _free_port()
    srv = subprocess.Popen([sys.executable, "-m", "fsclb", "serve", "--port", str(port),
                            "--sessions", "1"])
    try:
        for _ in range(100):
            try:
                socket.create_connection(("127.0.0.1", port), timeout=0.2).close()
                break
            except OSError:
                time.sleep(0.1)
        # the probe connection counts as a session only if it says goodbye; it does not
        out = tmp_path / "tcp"
        agent = subprocess.run([sys.executable, "-m", "fsclb", "agent", "--config", str(cfg_file),
                                "--out", str(out), "--port", str(port)],
                               capture_output=True, text=True, timeout=120)
        assert agent.returncode == 0, agent.stderr
        assert srv.wait(timeout=30) == 0
    finally:
        srv.kill()
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "inproc")]) == 0
    a = json.loads((out / "summary.json").read_text())["trials"][0]
    b = json.loads((tmp_path / "inproc/summary.json").read_text())["trials"][0]
    assert a["cum_regret"] == b["cum_regret"] and a["total_scalars"] == b["total_scalars"]
