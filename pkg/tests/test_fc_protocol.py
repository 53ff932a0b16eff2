import math

import numpy as np
import pytest

from hecnn import fc_protocol as fp
from hecnn.cost_model import CostCounters, fc_cost
from hecnn.errors import ProtocolError, StateError
from hecnn.fc_pack import FcShape
from hecnn.oracle import fixed_point
from hecnn.transport import MsgType, WireMessage, duplex_channel


def fc_tolerance(p, W, k=6.0):
    # noise grows with the energy of the whole packed tile, not one row
    sq = float((np.asarray(W) ** 2).sum())
    return k * p.sigma * math.sqrt(p.h * p.N / 2 + (p.N / 2 + 1) * sq) / p.delta + 4 / p.delta


def run(desk, keys, n_i, n_o, seed=0, bias=True):
    sk, pk = keys
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1, 1, (n_o, n_i))
    I = rng.uniform(-1, 1, n_i)
    B = rng.uniform(-1, 1, n_o) if bias else None
    c = CostCounters()
    out = fp.run_fc_local(I, W, B, FcShape(n_i, n_o), sk, pk, rng, c)
    d = desk.delta
    want = fixed_point(W, d) @ fixed_point(I, d) + (fixed_point(B, d * d) if bias else 0)
    return out, want, W, c


@pytest.mark.parametrize("n_i,n_o", [(16, 8), (32, 32), (64, 4), (1, 1), (1024, 1)])
def test_single_tile(desk, desk_keys, n_i, n_o):
    out, want, W, c = run(desk, desk_keys, n_i, n_o, seed=n_i + n_o)
    assert np.max(np.abs(out - want)) <= fc_tolerance(desk, W)
    assert c.coeff_outputs_server == c.coeff_outputs_client == n_o
    assert c.rotations == 0
    assert c.residues_c2s + c.residues_s2c == desk.N + n_o
    assert c.bytes_c2s == 14 + desk.N * 8 and c.bytes_s2c == 14 + n_o * 5


@pytest.mark.parametrize("n_i,n_o", [(10, 300), (2048, 2), (1500, 7)])
def test_tiled(desk, desk_keys, n_i, n_o):
    out, want, W, c = run(desk, desk_keys, n_i, n_o, seed=n_i)
    cols = -(-n_i // desk.N)
    assert np.max(np.abs(out - want)) <= math.sqrt(cols) * fc_tolerance(desk, W)
    assert c.coeff_outputs_server == cols * n_o
    assert c.residues_c2s == cols * desk.N


def test_bias_shift(desk, desk_keys):
    a, _, _, _ = run(desk, desk_keys, 16, 4, seed=3, bias=False)
    b, _, _, _ = run(desk, desk_keys, 16, 4, seed=3, bias=True)
    B = np.random.default_rng(3)
    B.uniform(size=(4, 16))
    B.uniform(size=16)
    bias = B.uniform(-1, 1, 4)
    assert np.max(np.abs((b - a) - bias)) < 1e-3


def test_client_memory(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(4)
    sh = FcShape(64, 40)
    W = rng.uniform(-1, 1, (40, 64))
    ce, se = duplex_channel(desk)
    sctx, init = fp.fc_server_init(W, None, sh, pk, rng)
    cctx = fp.fc_client_init(init, sh, sk)
    msg, vids = fp.fc_client_round1(rng.uniform(-1, 1, 64), pk, cctx, rng)
    fp.fc_client_round2(fp.fc_server_eval(msg, sctx), cctx, vids)
    memory = fc_cost("proposed", sh, desk.N).memory
    assert cctx.memory_coeffs == memory[1]


def test_fc_state_errors(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(5)
    sh = FcShape(8, 8)
    sctx, init = fp.fc_server_init(np.zeros((8, 8)), None, sh, pk, rng)
    cctx = fp.fc_client_init(init, sh, sk)
    msg, vids = fp.fc_client_round1(np.zeros(8), pk, cctx, rng)
    with pytest.raises(StateError):
        fp.fc_server_eval(msg, None)
    with pytest.raises(StateError):
        fp.fc_server_eval(WireMessage(MsgType.CONV_C0, msg.payload), sctx)
    res = fp.fc_server_eval(msg, sctx)
    with pytest.raises(ProtocolError):
        fp.fc_client_round2(res, cctx, [999])
