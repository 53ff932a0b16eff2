import math

import numpy as np
import pytest

from hecnn import ckks
from hecnn.errors import EncodingError, ParameterError, ProtocolError, StateError
from hecnn.ring import Poly, RingParams


def fresh_bound(p, k=6.0):
    return k * p.sigma * math.sqrt(p.N / 2 + 1 + p.h) / p.delta


def test_keygen_error_is_small(desk, desk_keys):
    sk, pk = desk_keys
    e = ckks.public_error(sk, pk).astype(float)
    assert np.max(np.abs(e)) <= 6 * desk.sigma
    assert np.count_nonzero(sk.s.centered()) == desk.h


def test_keygen_deterministic(desk):
    a = ckks.keygen(desk, np.random.default_rng(5))
    b = ckks.keygen(desk, np.random.default_rng(5))
    assert a[0].s == b[0].s and a[1].b == b[1].b and a[1].a == b[1].a


def test_keygen_refuses_integer_ring():
    with pytest.raises(ParameterError):
        ckks.keygen(RingParams.integer(8), np.random.default_rng(0))


def test_roundtrip(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(10)
    m = rng.uniform(-1, 1, desk.N)
    ct, rnd = ckks.encrypt(m, pk, rng)
    assert np.max(np.abs(ckks.decrypt(ct, sk) - m)) <= fresh_bound(desk)
    assert set(np.unique(rnd.v.centered().astype(int))) <= {-1, 0, 1}


def test_short_message_is_zero_padded(desk, desk_keys):
    sk, pk = desk_keys
    ct, _ = ckks.encrypt([0.5, -0.25], pk, np.random.default_rng(1))
    out = ckks.decrypt(ct, sk)
    assert abs(out[0] - 0.5) < 1e-4 and abs(out[1] + 0.25) < 1e-4
    assert np.max(np.abs(out[2:])) < 1e-4


def test_c0_only_matches_full_encryption(desk, desk_keys):
    _, pk = desk_keys
    m = np.linspace(-1, 1, desk.N)
    ct, rnd = ckks.encrypt(m, pk, np.random.default_rng(42))
    store = ckks.RandomnessStore()
    half = ckks.encrypt_c0_only(m, pk, np.random.default_rng(42), store)
    assert half.c0 == ct.c0
    assert store.get(half.v_id).v == rnd.v


def test_c0_only_reconstructs_with_v(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(3)
    m = rng.uniform(-1, 1, desk.N)
    store = ckks.RandomnessStore()
    half = ckks.encrypt_c0_only(m, pk, rng, store)
    v = store.pop(half.v_id).v
    # c0 + v*a*s = delta*m + v*e + e0
    dec = (half.c0 + v * pk.a * sk.s).centered()
    err = ckks.to_reals(dec, desk.delta) - m
    assert np.max(np.abs(err)) <= fresh_bound(desk)
    with pytest.raises(ProtocolError):
        store.pop(half.v_id)


def test_encode_overflow(desk):
    with pytest.raises(EncodingError):
        ckks.encode([2.0 ** 40], desk)
    with pytest.raises(ParameterError):
        ckks.encode(np.zeros(desk.N + 1), desk)


def test_addition_is_homomorphic(desk, desk_keys):
    sk, pk = desk_keys
    rng = np.random.default_rng(11)
    x, y = rng.uniform(-0.5, 0.5, (2, desk.N))
    cx, _ = ckks.encrypt(x, pk, rng)
    cy, _ = ckks.encrypt(y, pk, rng)
    assert np.max(np.abs(ckks.decrypt(ckks.ct_add(cx, cy), sk) - (x + y))) <= 2 * fresh_bound(desk)


def test_plaintext_monomial_multiplication(small, small_keys):
    sk, pk = small_keys
    rng = np.random.default_rng(12)
    m = rng.uniform(-1, 1, small.N)
    ct, _ = ckks.encrypt(m, pk, rng)
    x2 = Poly.monomial(small, 2, small.delta)
    out = ckks.decrypt(ckks.rescale_ct(ckks.ct_pt_mul(ct, x2)), sk)
    want = np.concatenate([-m[-2:], m[:-2]])
    assert np.max(np.abs(out - want)) < 1e-4


def test_scale_mismatch_and_rescale_state(small, small_keys):
    _, pk = small_keys
    ct, _ = ckks.encrypt(np.zeros(4), pk, np.random.default_rng(0))
    prod = ckks.ct_pt_mul(ct, Poly.monomial(small, 0, small.delta))
    with pytest.raises(ParameterError):
        ckks.ct_add(ct, prod)
    with pytest.raises(StateError):
        ckks.rescale_ct(ct)


def test_partial_ct_pt_mul_only_fills_indices(small, small_keys):
    _, pk = small_keys
    rng = np.random.default_rng(13)
    ct, _ = ckks.encrypt(rng.uniform(-1, 1, small.N), pk, rng)
    p = Poly.from_ints(small, rng.integers(-9, 10, small.N))
    full = ckks.ct_pt_mul(ct, p, p_scale=0)
    part = ckks.ct_pt_mul(ct, p, p_scale=0, indices=[1, 4])
    assert part.c0.coeffs[1] == full.c0.coeffs[1] and part.c1.coeffs[4] == full.c1.coeffs[4]
    assert part.c0.coeffs[0] == 0


def test_synthetic_ciphertext_is_exact_and_flagged(small, small_keys):
    sk, _ = small_keys
    ct = ckks.noiseless_ciphertext([0.25, -0.5], small)
    assert ckks.decrypt(ct, sk)[:2].tolist() == [0.25, -0.5]
    with pytest.raises(StateError):
        ckks.reject_synthetic(ct)
