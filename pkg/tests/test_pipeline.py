import json

import numpy as np
import pytest

from hecnn.errors import ParameterError
from hecnn.fileio import write_tensor
from hecnn.pipeline import build_network, reference_chain, resolve_params, run_config, run_network

NET = {"params": "desk", "seed": 11, "layers": [
    {"type": "conv", "c_i": 4, "c_o": 4, "w": 8, "f": 2},
    {"type": "relu"},
    {"type": "fc", "n_o": 10, "bias": True},
]}


@pytest.fixture(scope="module")
def threaded_report():
    return run_config(NET)


def test_three_layer_run(threaded_report):
    rep = threaded_report
    assert rep["pass"] and rep["zero_rotations"]
    assert [r["type"] for r in rep["layers"]] == ["conv", "relu", "fc"]
    for row in rep["layers"]:
        assert row["max_error"] <= row["tolerance"]
    assert all(rep["layers"][i]["reconciliation"]["pass"] for i in (0, 2))
    json.dumps(rep)


def test_sequential_matches_threaded(threaded_report):
    seq = run_config(NET, threaded=False)
    assert seq["pass"]
    assert [r["max_error"] for r in seq["layers"]] == [r["max_error"] for r in threaded_report["layers"]]
    assert seq["counters"] == threaded_report["counters"]


def test_socket_transport():
    rep = run_network(build_network(NET), use_socket=True)
    assert rep["pass"]


def test_deterministic_weights():
    a, b = build_network(NET), build_network(NET)
    assert np.array_equal(a.layers[0].weights, b.layers[0].weights)
    assert np.array_equal(a.image, b.image)
    assert not np.array_equal(build_network(NET, seed=12).image, a.image)


def test_reference_relu():
    net = build_network(NET)
    ref = reference_chain(net)
    assert np.array_equal(ref[1], np.maximum(ref[0], 0))


def test_weight_files(tmp_path):
    W = np.full((3, 8), 0.25)
    write_tensor(tmp_path / "w.bin", W)
    write_tensor(tmp_path / "x.bin", np.arange(8) / 8)
    cfg = {"params": "desk", "input": {"file": "x.bin"},
           "layers": [{"type": "fc", "n_i": 8, "n_o": 3, "weights": "w.bin"}]}
    net = build_network(cfg, base_dir=tmp_path)
    assert np.allclose(reference_chain(net)[0], W @ (np.arange(8) / 8))
    assert run_network(net)["pass"]


@pytest.mark.parametrize("cfg, msg", [
    ({"layers": []}, "no layers"),
    ({"layers": [{"type": "pool"}]}, "layer 0 (pool)"),
    ({"layers": [{"type": "relu"}]}, "layer 0 (relu)"),
    ({"layers": [{"type": "conv", "c_i": 3, "c_o": 4, "w": 8, "f": 2}]}, "layer 0 (conv)"),
    ({"layers": [{"type": "conv", "c_i": 4, "c_o": 4, "w": 8, "f": 2},
                 {"type": "fc", "n_i": 7, "n_o": 2}]}, "layer 1 (fc)"),
    ({"layers": [{"type": "fc", "n_i": 8, "n_o": 2}, {"type": "relu"}]}, "relu"),
    ({"layers": [{"type": "fc", "n_o": 2}]}, "layer 0 (fc)"),
])
def test_config_errors(cfg, msg):
    with pytest.raises(ParameterError, match=msg.replace("(", r"\(").replace(")", r"\)")):
        build_network({"params": "desk", **cfg})


def test_presets():
    assert resolve_params("paper").N == 8192
    assert resolve_params("paper16").N == 1 << 16
    assert resolve_params({"N": 64, "qbits": 60, "qpbits": 35}).delta == 1 << 25
    with pytest.raises(ParameterError):
        resolve_params("huge")
