import json
import subprocess
import sys

import numpy as np
import pytest

from podsur.cli import main

TINY = "configs/tiny.cfg"


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    assert main(["run", "--config", TINY, "--out", str(out)]) == 0
    return out


def test_run_prints_step_status(tiny_run, capsys):
    assert main(["run", "--config", TINY, "--out", str(tiny_run)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == [f"{s}: skipped" for s in ("generate", "pod", "train", "evaluate", "benchmark")]


def test_predict_writes_field(tiny_run, capsys, tmp_path):
    path = tmp_path / "field.csv"
    args = ["predict", "--config", TINY, "--out", str(tiny_run),
            "--kappa", "0.05", "--beta", "0.5", "--qin", "0.6", "--field", str(path)]
    assert main(args) == 0
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (21 * 11, 3)
    assert np.all(np.isfinite(data))
    assert "warning" not in capsys.readouterr().err


def test_predict_warns_on_extrapolation(tiny_run, capsys, tmp_path):
    args = ["predict", "--config", TINY, "--out", str(tiny_run),
            "--kappa", "0.5", "--beta", "0.5", "--qin", "0.6", "--field", str(tmp_path / "f.csv")]
    assert main(args) == 0
    assert "outside the training range" in capsys.readouterr().err


def test_snapshots_export(tiny_run, tmp_path):
    path = tmp_path / "params.csv"
    assert main(["snapshots", "export", "--config", TINY, "--out", str(tiny_run), "--csv", str(path)]) == 0
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (30, 3)


def test_error_line_and_exit_code(tmp_path, capsys):
    assert main(["train", "--config", TINY, "--out", str(tmp_path / "empty")]) == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error: ")
    payload = json.loads(err[len("error: "):])
    assert payload["step"] == "train"
    assert "missing input" in payload["message"]


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("eta = 2.0\n")
    assert main(["pod", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    payload = json.loads(capsys.readouterr().err.strip()[len("error: "):])
    assert payload["type"] == "ValueError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "podsur", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "predict" in proc.stdout
