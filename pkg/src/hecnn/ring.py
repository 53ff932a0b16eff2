"""Arithmetic in the negacyclic ring Z_M[X]/(X^N + 1).

Coefficients are Python integers held in numpy ``object`` arrays so that
moduli up to 128 bits stay exact.  Multiplication is the schoolbook
product written as a negacyclic Toeplitz matrix times a vector; to keep it
exact on float64 BLAS, both operands are split into signed 16-bit limbs so
every partial dot product stays below 2**53.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, StateError

LIMB_BITS = 16
_LIMB_MASK = (1 << LIMB_BITS) - 1
# rows * N float64 entries per Toeplitz block (~32 MB)
_BLOCK_ENTRIES = 1 << 22

LEVEL_Q = "Q"
LEVEL_QP = "Qp"


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class RingParams:
    """Ring degree, moduli and noise parameters.

    ``Q`` is the fresh-ciphertext modulus and ``Qp`` the modulus after one
    rescale by ``delta``; ``Q == delta * Qp`` always holds.  With
    ``integer_mode`` the ring is used for exact algebra only: any degree
    N >= 1 is accepted and no encryption is possible.
    """

    N: int
    Q: int
    Qp: int
    delta: int
    sigma: float = 3.2
    h: int = 64
    integer_mode: bool = False

    def __post_init__(self):
        if self.integer_mode:
            if self.N < 1:
                raise ParameterError(f"N must be positive, got {self.N}")
        elif not _is_pow2(self.N) or self.N < 8:
            raise ParameterError(f"N must be a power of two >= 8, got {self.N}")
        if self.Q < 2 or self.Qp < 2 or self.delta < 1:
            raise ParameterError("moduli must be >= 2 and delta >= 1")
        if self.Q != self.delta * self.Qp:
            raise ParameterError(
                f"Q must equal delta * Qp exactly (Q={self.Q}, delta={self.delta}, Qp={self.Qp})")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.h <= self.N:
            raise ParameterError(f"Hamming weight h must lie in (0, N], got {self.h}")
        if self.N * 8 >= 1 << (53 - 2 * LIMB_BITS):
            raise ParameterError(f"N={self.N} too large for exact limb products")

    # presets -------------------------------------------------------------
    @classmethod
    def paper(cls, N: int = 1 << 13, **kw) -> "RingParams":
        """104-bit Q, 55-bit Q' and delta = 2**49."""
        return cls(N=N, Q=1 << 104, Qp=1 << 55, delta=1 << 49, **kw)

    @classmethod
    def desk(cls, N: int = 1 << 10, **kw) -> "RingParams":
        """Small 60-bit modulus for fast tests: delta = 2**25, Q' = 2**35."""
        return cls(N=N, Q=1 << 60, Qp=1 << 35, delta=1 << 25, **kw)

    @classmethod
    def integer(cls, N: int, Q: int = 1 << 64) -> "RingParams":
        """Exact integer ring with no scaling, for algebraic identities."""
        return cls(N=N, Q=Q, Qp=Q, delta=1, h=1, integer_mode=True)

    def modulus(self, level: str) -> int:
        if level == LEVEL_Q:
            return self.Q
        if level == LEVEL_QP:
            return self.Qp
        raise ParameterError(f"unknown modulus level {level!r}")

    def width(self, level: str) -> int:
        """Bytes per serialized residue at ``level``."""
        return -(-(self.modulus(level) - 1).bit_length() // 8)


def _as_objects(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object:
        return np.array([int(v) for v in arr.ravel()], dtype=object).reshape(arr.shape)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(object)
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(arr == np.rint(arr)):
            raise ParameterError("non-integral coefficient values")
        return np.array([int(v) for v in arr.ravel()], dtype=object).reshape(arr.shape)
    return np.array([int(v) for v in arr.ravel()], dtype=object).reshape(arr.shape)


def center(values: np.ndarray, modulus: int) -> np.ndarray:
    """Map residues in [0, M) to the signed range (-M/2, M/2]."""
    return np.where(values > modulus // 2, values - modulus, values)


@dataclass(frozen=True, eq=False)
class Poly:
    """A length-N polynomial with residues in [0, modulus)."""

    params: RingParams
    coeffs: np.ndarray
    level: str = LEVEL_Q

    def __post_init__(self):
        if len(self.coeffs) != self.params.N:
            raise ParameterError(f"expected {self.params.N} coefficients, got {len(self.coeffs)}")

    @property
    def modulus(self) -> int:
        return self.params.modulus(self.level)

    @classmethod
    def from_ints(cls, params: RingParams, values, level: str = LEVEL_Q) -> "Poly":
        """Build a poly from arbitrary (possibly negative) integers, reducing mod M."""
        vals = _as_objects(values)
        if vals.shape != (params.N,):
            raise ParameterError(f"expected shape ({params.N},), got {vals.shape}")
        return cls(params, vals % params.modulus(level), level)

    @classmethod
    def zero(cls, params: RingParams, level: str = LEVEL_Q) -> "Poly":
        return cls(params, np.zeros(params.N, dtype=np.int64).astype(object), level)

    @classmethod
    def monomial(cls, params: RingParams, exponent: int, coeff: int = 1,
                 level: str = LEVEL_Q) -> "Poly":
        """``coeff * X**exponent`` for any integer exponent."""
        base = cls.zero(params, level)
        base.coeffs[0] = coeff % base.modulus
        return monomial_shift(base, exponent)

    def centered(self) -> np.ndarray:
        return center(self.coeffs, self.modulus)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs != 0)

    def __eq__(self, other):
        if not isinstance(other, Poly):
            return NotImplemented
        return (self.params == other.params and self.level == other.level
                and bool(np.all(self.coeffs == other.coeffs)))

    __hash__ = None

    def __add__(self, other):
        return poly_add(self, other)

    def __sub__(self, other):
        return poly_sub(self, other)

    def __neg__(self):
        return poly_neg(self)

    def __mul__(self, other):
        return negacyclic_mul(self, other)

    def __repr__(self):
        head = ", ".join(str(c) for c in self.coeffs[:4])
        return f"Poly(N={self.params.N}, level={self.level}, [{head}{', ...' if self.params.N > 4 else ''}])"

    # serialization -------------------------------------------------------
    def to_bytes(self) -> bytes:
        return residues_to_bytes(self.coeffs, self.modulus)

    @classmethod
    def from_bytes(cls, params: RingParams, data: bytes, level: str = LEVEL_Q) -> "Poly":
        vals = residues_from_bytes(data, params.modulus(level))
        if len(vals) != params.N:
            raise ParameterError(f"expected {params.N} residues, got {len(vals)}")
        if np.any(vals >= params.modulus(level)):
            raise ParameterError("serialized residue exceeds modulus")
        return cls(params, vals, level)


def residue_width(modulus: int) -> int:
    return -(-(modulus - 1).bit_length() // 8)


def residues_to_bytes(values: Iterable[int], modulus: int) -> bytes:
    """Fixed-width little-endian encoding, one field per residue."""
    w = residue_width(modulus)
    return b"".join(int(v).to_bytes(w, "little") for v in values)


def residues_from_bytes(data: bytes, modulus: int) -> np.ndarray:
    w = residue_width(modulus)
    if len(data) % w:
        raise ParameterError(f"payload of {len(data)} bytes is not a multiple of width {w}")
    return np.array([int.from_bytes(data[i:i + w], "little") for i in range(0, len(data), w)],
                    dtype=object)


def _check_pair(a: Poly, b: Poly):
    if a.params != b.params:
        raise ParameterError("polynomials belong to different rings")
    if a.level != b.level:
        raise ParameterError(f"modulus mismatch: {a.level} vs {b.level}")


def poly_add(a: Poly, b: Poly) -> Poly:
    _check_pair(a, b)
    return Poly(a.params, (a.coeffs + b.coeffs) % a.modulus, a.level)


def poly_sub(a: Poly, b: Poly) -> Poly:
    _check_pair(a, b)
    return Poly(a.params, (a.coeffs - b.coeffs) % a.modulus, a.level)


def poly_neg(a: Poly) -> Poly:
    return Poly(a.params, (-a.coeffs) % a.modulus, a.level)


def scalar_mul(a: Poly, k: int) -> Poly:
    return Poly(a.params, (a.coeffs * int(k)) % a.modulus, a.level)


# -- multiplication ----------------------------------------------------------

def _signed_limbs(values: np.ndarray, modulus: int) -> np.ndarray:
    """Split centered residues into signed base-2**16 limbs, shape (L, N)."""
    signed = center(values, modulus)
    negative = signed < 0
    mag = np.where(negative, -signed, signed)
    top = max((int(v) for v in mag), default=0)
    count = max(1, -(-top.bit_length() // LIMB_BITS))
    sign = np.where(negative, -1.0, 1.0)
    out = np.empty((count, len(values)))
    for i in range(count):
        out[i] = ((mag >> (LIMB_BITS * i)) & _LIMB_MASK).astype(np.int64) * sign
    return out


def _toeplitz_windows(b_limb: np.ndarray) -> np.ndarray:
    """View W with W[N-1-k, i] = signed coefficient of b multiplying a_i in c_k."""
    n = len(b_limb)
    ext = np.concatenate([-b_limb[1:], b_limb])
    return sliding_window_view(ext[::-1], n)


def _mul_rows(a: Poly, b: Poly, rows: np.ndarray) -> np.ndarray:
    modulus = a.modulus
    n = a.params.N
    A = _signed_limbs(a.coeffs, modulus)
    B = _signed_limbs(b.coeffs, modulus)
    if A.shape[0] < B.shape[0]:
        A, B = B, A
    At = np.ascontiguousarray(A.T)
    la, lb = A.shape[0], B.shape[0]
    if _is_pow2(modulus):
        shifts = min(la + lb - 1, -(-(modulus.bit_length() - 1) // LIMB_BITS))
    else:
        shifts = la + lb - 1
    acc = np.zeros((shifts, len(rows)))
    windows = [_toeplitz_windows(B[j]) for j in range(lb)]
    block = max(1, _BLOCK_ENTRIES // n)
    for start in range(0, len(rows), block):
        sel = n - 1 - rows[start:start + block]
        for j in range(lb):
            if j >= shifts:
                break
            prod = windows[j][sel] @ At
            for i in range(min(la, shifts - j)):
                acc[i + j, start:start + block] += prod[:, i]
    total = np.zeros(len(rows), dtype=np.int64).astype(object)
    for t in range(shifts):
        total = total + (acc[t].astype(np.int64).astype(object) << (LIMB_BITS * t))
    return total % modulus


def negacyclic_mul(a: Poly, b: Poly) -> Poly:
    """Full product mod (X^N + 1, M)."""
    _check_pair(a, b)
    rows = np.arange(a.params.N)
    return Poly(a.params, _mul_rows(a, b, rows), a.level)


def negacyclic_mul_partial(a: Poly, b: Poly, indices, tally=None) -> np.ndarray:
    """Only the requested coefficients of ``a * b``, in the order given.

    ``tally``, when supplied, is charged ``len(indices)`` coefficient
    outputs and ``len(indices) * N`` coefficient multiplications.
    """
    _check_pair(a, b)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    n = a.params.N
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ParameterError(f"coefficient index out of range [0, {n})")
    if tally is not None:
        tally.add_products(int(idx.size), int(idx.size) * n)
    if idx.size == 0:
        return np.zeros(0, dtype=object)
    return _mul_rows(a, b, idx)


def embed_power(a: Poly, s: int) -> Poly:
    """Send the coefficient of X^j to X^(s*j), reduced with X^N = -1.

    This is a ring homomorphism only for odd ``s``; callers that need
    negative exponents must shift them non-negative first.
    """
    if s < 1:
        raise ParameterError(f"power must be positive, got {s}")
    n = a.params.N
    m = a.modulus
    out = [0] * n
    for j in np.flatnonzero(a.coeffs != 0):
        q, r = divmod(s * int(j), n)
        out[r] += -a.coeffs[j] if q & 1 else a.coeffs[j]
    return Poly(a.params, np.array(out, dtype=object) % m, a.level)


def monomial_shift(a: Poly, t: int) -> Poly:
    """Multiply by X^t for any integer t (X^-m == -X^(N-m))."""
    n = a.params.N
    t %= 2 * n
    coeffs = a.coeffs
    if t >= n:
        coeffs = -coeffs
        t -= n
    out = np.roll(coeffs, t)
    out[:t] = -out[:t]
    return Poly(a.params, out % a.modulus, a.level)


# -- sampling ----------------------------------------------------------------

def _uniform_ints(rng: np.random.Generator, modulus: int, size: int) -> np.ndarray:
    if modulus <= 1 << 62:
        return rng.integers(0, modulus, size=size, dtype=np.int64).astype(object)
    words = -(-(modulus.bit_length() + 64) // 64)
    acc = np.zeros(size, dtype=np.int64).astype(object)
    for _ in range(words):
        acc = (acc << 64) + rng.integers(0, 1 << 64, size=size, dtype=np.uint64).astype(object)
    return acc % modulus


def _rounded_normal(rng: np.random.Generator, stddev: float, size: int) -> np.ndarray:
    draws = np.rint(rng.normal(0.0, stddev, size=size))
    if stddev < 2.0 ** 55:
        return draws.astype(np.int64).astype(object)
    return np.array([int(x) for x in draws], dtype=object)


def sample_gaussian(params: RingParams, rng: np.random.Generator, stddev: Optional[float] = None,
                    level: str = LEVEL_Q) -> Poly:
    """Rounded Gaussian coefficients (round-half-even); default stddev is sigma."""
    stddev = params.sigma if stddev is None else stddev
    if not stddev > 0:
        raise ParameterError(f"stddev must be positive, got {stddev}")
    return Poly(params, _rounded_normal(rng, stddev, params.N) % params.modulus(level), level)


def sample_ternary_v(params: RingParams, rng: np.random.Generator, level: str = LEVEL_Q) -> Poly:
    """Coefficients 0, 1, -1 with probabilities 1/2, 1/4, 1/4."""
    vals = rng.choice(np.array([0, 1, -1]), size=params.N, p=[0.5, 0.25, 0.25])
    return Poly.from_ints(params, vals, level)


def sample_sparse_secret(params: RingParams, rng: np.random.Generator) -> Poly:
    """Exactly ``h`` coefficients set to +-1, the rest zero."""
    vals = np.zeros(params.N, dtype=np.int64)
    pos = rng.choice(params.N, size=params.h, replace=False)
    vals[pos] = rng.choice(np.array([-1, 1]), size=params.h)
    return Poly.from_ints(params, vals)


def sample_uniform(params: RingParams, rng: np.random.Generator, level: str = LEVEL_Q) -> Poly:
    m = params.modulus(level)
    return Poly(params, _uniform_ints(rng, m, params.N), level)


# -- rescale -----------------------------------------------------------------

def div_round_half_even(values: np.ndarray, d: int) -> np.ndarray:
    """Exact integer division rounding ties to even, on an object array."""
    q = values // d
    r = values - q * d
    twice = 2 * r
    up = (twice > d) | ((twice == d) & (q % 2 == 1))
    return q + up.astype(np.int64)


def rescale_residues(values: np.ndarray, params: RingParams) -> np.ndarray:
    """Residues mod Q -> residues mod Qp, dividing the signed value by delta."""
    signed = center(np.asarray(values, dtype=object), params.Q)
    return div_round_half_even(signed, params.delta) % params.Qp


def rescale(a: Poly) -> Poly:
    if a.level != LEVEL_Q:
        raise StateError("polynomial has already been rescaled")
    return Poly(a.params, rescale_residues(a.coeffs, a.params), LEVEL_QP)
