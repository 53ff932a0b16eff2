import json

import numpy as np
import pytest

from hecnn.cli import main
from hecnn.fileio import read_public_key, write_tensor


def test_keygen_deterministic(tmp_path, capsys):
    assert main(["keygen", "--params", "desk", "--seed", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["keygen", "--params", "desk", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    for name in ("secret.key", "public.key"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read_public_key(tmp_path / "a" / "public.key").params.N == 1024


def test_cost_report(tmp_path, capsys):
    assert main(["cost-report", "--report", str(tmp_path / "c.json")]) == 0
    out = capsys.readouterr().out
    assert "GC ReLU bandwidth" in out and "proposed" in out
    rep = json.loads((tmp_path / "c.json").read_text())
    assert all(cell["match"] for row in rep["relu_bandwidth"] for k, cell in row.items()
               if isinstance(cell, dict))


def test_cost_report_single_scheme(capsys):
    assert main(["cost-report", "--scheme", "gazelle"]) == 0
    assert "cheetah" not in capsys.readouterr().out


def test_run_conv(tmp_path, capsys):
    rc = main(["run-conv", "--params", "desk", "--seed", "1", "--shape", "4", "2", "8", "3",
               "--report", str(tmp_path / "r.json")])
    assert rc == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["pass"] and rep["counters"]["rotations_server"] == 0


def test_run_fc_with_files(tmp_path, capsys):
    write_tensor(tmp_path / "w.bin", np.eye(4)[:3] * 0.5)
    write_tensor(tmp_path / "x.bin", np.array([0.1, 0.2, 0.3, 0.4]))
    rc = main(["run-fc", "--params", "desk", "--n-i", "4", "--n-o", "3", "--sequential",
               "--weights", str(tmp_path / "w.bin"), "--input", str(tmp_path / "x.bin")])
    assert rc == 0
    row = json.loads(capsys.readouterr().out)["layers"][0]
    assert row["max_error"] <= row["tolerance"] < 1e-3


def test_run_net_and_errors(tmp_path, capsys):
    cfg = tmp_path / "net.json"
    cfg.write_text(json.dumps({"params": "desk", "layers": [
        {"type": "conv", "c_i": 4, "c_o": 4, "w": 8, "f": 2}, {"type": "relu"},
        {"type": "fc", "n_o": 5}]}))
    assert main(["run-net", "--config", str(cfg)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"params": "desk", "layers": [{"type": "conv", "c_i": 3, "c_o": 4, "w": 8, "f": 2}]}))
    assert main(["run-net", "--config", str(bad)]) == 2
    assert "layer 0 (conv)" in capsys.readouterr().err
    (tmp_path / "junk.json").write_text("{")
    assert main(["run-net", "--config", str(tmp_path / "junk.json")]) == 2
    assert main(["run-net", "--config", str(tmp_path / "missing.json")]) == 2


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["run-conv", "--shape", "1", "2"])
