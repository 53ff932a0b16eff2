import numpy as np
import pytest

from hecnn import ckks
from hecnn import relu_bridge as rb
from hecnn.acceptance import fresh_tolerance
from hecnn.errors import ProtocolError
from hecnn.ring import LEVEL_QP, Poly


def masked_poly(r_ints, masks, params):
    return Poly.from_ints(params, np.asarray(r_ints, dtype=object) + masks.phi1.centered(), LEVEL_QP)


def test_mask_range_and_support(desk):
    reg = rb.MaskRegistry()
    m = reg.sample(desk, np.random.default_rng(0), support=np.arange(0, desk.N, 4))
    phi1, phi2 = m.phi1.centered(), m.phi2.centered()
    assert max(abs(int(x)) for x in phi1) <= desk.delta
    assert max(abs(int(x)) for x in phi2) <= desk.delta
    assert set(np.flatnonzero(phi1)) <= set(range(0, desk.N, 4))


def test_mask_coverage(desk):
    reg = rb.MaskRegistry()
    rng = np.random.default_rng(1)
    vals = np.concatenate([reg.sample(desk, rng).phi2.centered().astype(float) for _ in range(20)])
    hist, _ = np.histogram(vals, bins=100, range=(-desk.delta, desk.delta))
    assert np.mean(hist > 0) >= 0.99


def test_stub_cases(desk):
    reg = rb.MaskRegistry()
    rng = np.random.default_rng(2)
    m = reg.sample(desk, rng)
    neg = -np.arange(1, desk.N + 1) * 1000
    assert rb.gc_stub_relu(masked_poly(neg, m, desk), m) == m.phi2
    pos = np.arange(1, desk.N + 1) * 1000
    assert rb.gc_stub_relu(masked_poly(pos, m, desk), m) == Poly.from_ints(desk, pos) + m.phi2
    r = rng.integers(-10 ** 6, 10 ** 6, desk.N)
    out = rb.gc_stub_relu(masked_poly(r, m, desk), m) - m.phi2
    assert out.centered().astype(np.int64).tolist() == np.maximum(r, 0).tolist()


def test_zero_masks_degenerate(desk):
    zero = rb.MaskPair(Poly.zero(desk, LEVEL_QP), Poly.zero(desk), 0)
    r = np.random.default_rng(3).integers(-99, 99, desk.N)
    out = rb.gc_stub_relu(Poly.from_ints(desk, r, LEVEL_QP), zero)
    assert out.centered().astype(np.int64).tolist() == np.maximum(r, 0).tolist()


def test_roundtrip_and_nonce_rules(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(4)
    reg, gc = rb.MaskRegistry(), rb.TrustedGC()
    pos = np.arange(desk.N)
    r = rng.integers(-desk.delta, desk.delta, desk.N)
    m = reg.sample(desk, rng, pos)
    gc.receive_masks(m)
    share = rb.server_mask(np.asarray(r, dtype=object) % desk.Qp, m, pos, reg)
    nonce, vals = rb.read_masked(rb.masked_message(share, m, desk), desk)
    assert nonce == m.nonce
    ct, _ = rb.client_reencrypt(gc.evaluate(Poly(desk, vals, LEVEL_QP), nonce), pk, rng)
    dec = ckks.decrypt(rb.server_unmask(ct, m, reg), sk)
    assert np.max(np.abs(dec - np.maximum(r, 0) / desk.delta)) <= fresh_tolerance(desk)
    with pytest.raises(ProtocolError):
        rb.server_unmask(ct, m, reg)
    with pytest.raises(ProtocolError):
        rb.server_mask(share, m, pos, reg)
    with pytest.raises(ProtocolError):
        gc.evaluate(Poly(desk, vals, LEVEL_QP), nonce)


def test_zero_layer_stays_zero(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(5)
    reg = rb.MaskRegistry()
    m = reg.sample(desk, rng)
    ct, _ = rb.client_reencrypt(rb.gc_stub_relu(masked_poly(np.zeros(desk.N, dtype=int), m, desk), m), pk, rng)
    assert np.max(np.abs(ckks.decrypt(rb.server_unmask(ct, m, reg), sk))) <= fresh_tolerance(desk)


def test_repack_hook(desk):
    reg = rb.MaskRegistry()
    m = reg.sample(desk, np.random.default_rng(6))
    r = np.arange(desk.N) - desk.N // 2
    out = rb.gc_stub_relu(masked_poly(r, m, desk), m, repack=lambda x: np.roll(x, 1)) - m.phi2
    assert out.centered().astype(np.int64).tolist() == np.roll(np.maximum(r, 0), 1).tolist()


def test_reenc_message_carries_c0_only(desk, desk_keys):
    _, pk = desk_keys
    ct, _ = ckks.encrypt(np.zeros(4), pk, np.random.default_rng(7))
    assert len(rb.reenc_message(ct).payload) == desk.N * desk.width("Q")
