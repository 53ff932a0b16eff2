import numpy as np
import pytest

from conftest import naive_negacyclic, random_poly
from hecnn import ring
from hecnn.errors import ParameterError, StateError
from hecnn.ring import LEVEL_QP, Poly, RingParams


class Tally:
    def __init__(self):
        self.outputs = self.mults = 0

    def add_products(self, outputs, mults):
        self.outputs += outputs
        self.mults += mults


@pytest.mark.parametrize("modulus", [97, 1 << 60, 1 << 104, (1 << 61) - 1])
def test_mul_matches_naive(modulus):
    rng = np.random.default_rng(modulus % 1000)
    for n in (8, 16, 32):
        p = RingParams.integer(n, Q=modulus)
        a, b = random_poly(p, rng), random_poly(p, rng)
        assert [int(x) for x in (a * b).coeffs] == naive_negacyclic(a.coeffs, b.coeffs, modulus)


def test_mul_wide_modulus():
    rng = np.random.default_rng(5)
    p = RingParams(N=16, Q=1 << 104, Qp=1 << 55, delta=1 << 49, h=8)
    a, b = random_poly(p, rng), random_poly(p, rng)
    assert [int(x) for x in (a * b).coeffs] == naive_negacyclic(a.coeffs, b.coeffs, p.Q)


def test_x_to_the_n_is_minus_one(small):
    x = Poly.monomial(small, 1)
    xn1 = Poly.monomial(small, small.N - 1)
    assert (x * xn1).centered().tolist() == [-1] + [0] * (small.N - 1)


def test_ring_laws(small):
    rng = np.random.default_rng(0)
    a, b, c = (random_poly(small, rng) for _ in range(3))
    assert a * b == b * a
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    assert a - a == Poly.zero(small)
    assert -a + a == Poly.zero(small)


def test_partial_matches_full_and_counts(small):
    rng = np.random.default_rng(1)
    a, b = random_poly(small, rng), random_poly(small, rng)
    idx = [0, 5, 63, 17]
    t = Tally()
    part = ring.negacyclic_mul_partial(a, b, idx, t)
    full = a * b
    assert list(part) == [full.coeffs[i] for i in idx]
    assert (t.outputs, t.mults) == (4, 4 * small.N)


def test_partial_rejects_out_of_range(small):
    a = Poly.zero(small)
    with pytest.raises(ParameterError):
        ring.negacyclic_mul_partial(a, a, [small.N])


def test_mismatched_rings_rejected(small, desk):
    with pytest.raises(ParameterError):
        Poly.zero(small) * Poly.zero(desk)


def test_monomial_shift_is_multiplication(small):
    rng = np.random.default_rng(2)
    a = random_poly(small, rng, bound=100)
    for t in (0, 1, 7, small.N - 1, small.N, small.N + 3, -1, -small.N - 5):
        e = t % (2 * small.N)
        sign = -1 if e >= small.N else 1
        mono = Poly.monomial(small, e % small.N, sign)
        assert ring.monomial_shift(a, t) == a * mono


def test_embed_power_odd_is_homomorphic(small):
    rng = np.random.default_rng(3)
    a, b = random_poly(small, rng, bound=50), random_poly(small, rng, bound=50)
    assert ring.embed_power(a * b, 3) == ring.embed_power(a, 3) * ring.embed_power(b, 3)


def test_embed_power_places_coefficients(small):
    a = Poly.from_ints(small, [1, 2, 3] + [0] * (small.N - 3))
    out = ring.embed_power(a, 4).centered()
    assert (out[0], out[4], out[8]) == (1, 2, 3)
    assert np.count_nonzero(out) == 3


def test_center_range():
    vals = np.array([0, 1, 49, 50, 51, 99], dtype=object)
    assert ring.center(vals, 100).tolist() == [0, 1, 49, 50, -49, -1]


def test_div_round_half_even():
    vals = np.array([5, 7, -5, 3, -3, 4, -7, 1], dtype=object)
    assert ring.div_round_half_even(vals, 2).tolist() == [2, 4, -2, 2, -2, 2, -4, 0]


def test_rescale_divides_by_delta(small):
    d = small.delta
    vals = [3 * d, -2 * d, d // 2, 3 * d // 2, 7]
    a = Poly.from_ints(small, vals + [0] * (small.N - len(vals)))
    r = ring.rescale(a)
    assert r.level == LEVEL_QP
    assert r.centered()[:5].tolist() == [3, -2, 0, 2, 0]
    with pytest.raises(StateError):
        ring.rescale(r)


def test_serialization_roundtrip(small):
    rng = np.random.default_rng(4)
    a = random_poly(small, rng)
    data = a.to_bytes()
    assert len(data) == small.N * 8
    assert Poly.from_bytes(small, data) == a


def test_residue_width():
    assert ring.residue_width(1 << 55) == 7
    assert ring.residue_width(1 << 104) == 13
    assert ring.residue_width(1 << 64) == 8


def test_gaussian_statistics(desk):
    rng = np.random.default_rng(6)
    draws = np.concatenate([ring.sample_gaussian(desk, rng).centered().astype(float) for _ in range(20)])
    assert abs(draws.mean()) < 0.1
    assert 0.95 * desk.sigma < draws.std() < 1.05 * desk.sigma


def test_ternary_v_distribution(desk):
    rng = np.random.default_rng(7)
    v = np.concatenate([ring.sample_ternary_v(desk, rng).centered().astype(int) for _ in range(10)])
    assert set(np.unique(v)) <= {-1, 0, 1}
    assert abs(np.mean(v == 0) - 0.5) < 0.03
    assert abs(np.mean(v == 1) - 0.25) < 0.03


def test_sparse_secret_weight(desk):
    s = ring.sample_sparse_secret(desk, np.random.default_rng(8)).centered()
    assert np.count_nonzero(s) == desk.h
    assert set(np.unique(s.astype(int))) <= {-1, 0, 1}


def test_uniform_covers_wide_modulus():
    p = RingParams.paper(N=64)
    u = ring.sample_uniform(p, np.random.default_rng(9)).coeffs
    assert max(u) > 1 << 100
    assert all(0 <= x < p.Q for x in u)


@pytest.mark.parametrize("kw", [
    dict(N=12, Q=1 << 60, Qp=1 << 35, delta=1 << 25),
    dict(N=64, Q=1 << 60, Qp=1 << 30, delta=1 << 25),
    dict(N=64, Q=1 << 60, Qp=1 << 35, delta=1 << 25, h=0),
    dict(N=64, Q=1 << 60, Qp=1 << 35, delta=1 << 25, sigma=0.0),
])
def test_bad_params(kw):
    with pytest.raises(ParameterError):
        RingParams(**kw)


def test_presets():
    p = RingParams.paper()
    assert (p.N, p.Q, p.Qp, p.delta) == (8192, 1 << 104, 1 << 55, 1 << 49)
    d = RingParams.desk()
    assert (d.N, d.Q, d.Qp, d.delta) == (1024, 1 << 60, 1 << 35, 1 << 25)
    assert RingParams.integer(7).N == 7
