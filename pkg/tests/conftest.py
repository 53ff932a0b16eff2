import numpy as np
import pytest

from hecnn import ckks
from hecnn.ring import Poly, RingParams


@pytest.fixture(scope="session")
def desk():
    return RingParams.desk()


@pytest.fixture(scope="session")
def small():
    """Tiny ring used for fast algebra checks."""
    return RingParams(N=64, Q=1 << 60, Qp=1 << 35, delta=1 << 25, h=16)


@pytest.fixture(scope="session")
def desk_keys(desk):
    return ckks.keygen(desk, np.random.default_rng(1234))


@pytest.fixture(scope="session")
def small_keys(small):
    return ckks.keygen(small, np.random.default_rng(99))


def naive_negacyclic(a, b, modulus):
    """Textbook O(N^2) product mod X^N + 1, on Python ints."""
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            if k < n:
                out[k] += int(a[i]) * int(b[j])
            else:
                out[k - n] -= int(a[i]) * int(b[j])
    return [x % modulus for x in out]


def random_poly(params, rng, bound=None, level="Q"):
    m = params.modulus(level)
    if bound is None:
        vals = [int(x) for x in rng.integers(0, 1 << 62, params.N)]
        vals = [(v * (1 << 62) + int(rng.integers(0, 1 << 62))) % m for v in vals]
    else:
        vals = rng.integers(-bound, bound + 1, params.N)
    return Poly.from_ints(params, vals, level)
