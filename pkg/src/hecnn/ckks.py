"""Minimal CKKS: key generation, encryption, decryption, addition and
ciphertext-plaintext multiplication, plus the c0-only encryption used by the
rotation-free protocols.

Scale is tracked as an integer power of delta: 1 after encryption, 2 after
one multiplication by a delta-scaled plaintext, back to 1 after rescale.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import ring
from .errors import EncodingError, ParameterError, ProtocolError, StateError
from .ring import LEVEL_Q, Poly, RingParams


@dataclass(frozen=True)
class SecretKey:
    s: Poly


@dataclass(frozen=True)
class PublicKey:
    b: Poly
    a: Poly

    @property
    def params(self) -> RingParams:
        return self.a.params


@dataclass(frozen=True)
class EncRandomness:
    """The ternary v(X) kept by the client after a c0-only encryption."""

    v: Poly
    created_for: str = ""


@dataclass(frozen=True)
class Ciphertext:
    c0: Poly
    c1: Poly
    scale: int = 1
    # noiseless test fixture (c0 = delta*m, c1 = 0); refused by protocol code
    synthetic: bool = False

    def __post_init__(self):
        if self.c0.params != self.c1.params or self.c0.level != self.c1.level:
            raise ParameterError("ciphertext halves disagree on ring or modulus")

    @property
    def params(self) -> RingParams:
        return self.c0.params

    @property
    def level(self) -> str:
        return self.c0.level


@dataclass(frozen=True)
class HalfCiphertext:
    """Only the c0 half; ``v_id`` names the client-side randomness."""

    c0: Poly
    v_id: int
    scale: int = 1

    @property
    def params(self) -> RingParams:
        return self.c0.params

    @property
    def level(self) -> str:
        return self.c0.level


class RandomnessStore:
    """Client-side map from handles to stored v(X); the one mutable structure."""

    def __init__(self):
        self._items: dict[int, EncRandomness] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def put(self, rnd: EncRandomness) -> int:
        with self._lock:
            v_id = next(self._ids)
            self._items[v_id] = rnd
        return v_id

    def get(self, v_id: int) -> EncRandomness:
        with self._lock:
            try:
                return self._items[v_id]
            except KeyError:
                raise ProtocolError(f"unknown randomness handle {v_id}") from None

    def pop(self, v_id: int) -> EncRandomness:
        with self._lock:
            try:
                return self._items.pop(v_id)
            except KeyError:
                raise ProtocolError(f"unknown randomness handle {v_id}") from None

    def __contains__(self, v_id) -> bool:
        return v_id in self._items

    def __len__(self) -> int:
        return len(self._items)


def _require_crypto(params: RingParams):
    if params.integer_mode:
        raise ParameterError("integer-mode rings cannot be used for encryption")


def keygen(params: RingParams, rng: np.random.Generator) -> tuple[SecretKey, PublicKey]:
    """s sparse ternary with weight h, a uniform, b = -a*s + e."""
    _require_crypto(params)
    s = ring.sample_sparse_secret(params, rng)
    a = ring.sample_uniform(params, rng)
    e = ring.sample_gaussian(params, rng)
    b = -(a * s) + e
    return SecretKey(s), PublicKey(b, a)


def encode(values, params: RingParams, scale_power: int = 1, level: str = LEVEL_Q) -> Poly:
    """Round delta**scale_power * values to integers (ties to even) as a poly.

    Shorter inputs are zero-padded to N.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size > params.N:
        raise ParameterError(f"{vals.size} values do not fit N={params.N} coefficients")
    scaled = np.zeros(params.N)
    scaled[:vals.size] = np.rint(vals * float(params.delta) ** scale_power)
    limit = params.modulus(level) // 2
    if np.any(np.abs(scaled) >= limit):
        raise EncodingError("scaled message exceeds the signed range of the modulus")
    return Poly.from_ints(params, scaled, level)


def _check_encoded(m: Poly):
    if m.level != LEVEL_Q:
        raise ParameterError("messages are encrypted at the fresh modulus Q")
    if np.any(np.abs(m.centered()) >= m.modulus // 4):
        raise EncodingError("encoded message too close to the modulus bound")


def _message_poly(m, params: RingParams) -> Poly:
    if isinstance(m, Poly):
        _check_encoded(m)
        return m
    return encode(m, params)


def encrypt(m: Union[Poly, np.ndarray], pk: PublicKey, rng: np.random.Generator,
            created_for: str = "") -> tuple[Ciphertext, EncRandomness]:
    """Encrypt reals (scaled here) or an already-scaled integer poly.

    Returns the ciphertext and the v(X) used, for half-ciphertext workflows.
    """
    params = pk.params
    _require_crypto(params)
    msg = _message_poly(m, params)
    v = ring.sample_ternary_v(params, rng)
    e0 = ring.sample_gaussian(params, rng)
    e1 = ring.sample_gaussian(params, rng)
    c0 = v * pk.b + msg + e0
    c1 = v * pk.a + e1
    return Ciphertext(c0, c1, scale=1), EncRandomness(v, created_for)


def encrypt_c0_only(m: Union[Poly, np.ndarray], pk: PublicKey, rng: np.random.Generator,
                    store: RandomnessStore, created_for: str = "") -> HalfCiphertext:
    """Compute only c0 = v*b + round(delta*m) + e0 and park v in ``store``.

    Draws randomness in the same order as :func:`encrypt`, so equal seeds
    give an identical c0.
    """
    params = pk.params
    _require_crypto(params)
    msg = _message_poly(m, params)
    v = ring.sample_ternary_v(params, rng)
    e0 = ring.sample_gaussian(params, rng)
    c0 = v * pk.b + msg + e0
    v_id = store.put(EncRandomness(v, created_for))
    return HalfCiphertext(c0, v_id, scale=1)


def decrypt_centered(ct: Ciphertext, sk: SecretKey) -> np.ndarray:
    """Signed residues of c0 + c1*s at the ciphertext's modulus (no division)."""
    s = sk.s if ct.level == LEVEL_Q else Poly(sk.s.params, sk.s.centered() % ct.c0.modulus, ct.level)
    return (ct.c0 + ct.c1 * s).centered()


def decrypt(ct: Ciphertext, sk: SecretKey) -> np.ndarray:
    """Decrypted reals: centered (c0 + c1*s) divided by delta**scale."""
    return to_reals(decrypt_centered(ct, sk), ct.params.delta ** ct.scale)


def to_reals(signed: np.ndarray, divisor: int) -> np.ndarray:
    return np.array([int(x) / divisor for x in signed], dtype=np.float64)


def ct_add(x: Ciphertext, y: Ciphertext) -> Ciphertext:
    if x.scale != y.scale:
        raise ParameterError(f"scale mismatch: {x.scale} vs {y.scale}")
    return Ciphertext(x.c0 + y.c0, x.c1 + y.c1, x.scale, x.synthetic and y.synthetic)


def ct_pt_mul(ct: Union[Ciphertext, HalfCiphertext], p: Poly, p_scale: int = 1,
              indices=None, tally=None):
    """Multiply every present half by plaintext ``p``.

    ``p_scale`` is the power of delta carried by ``p`` (0 for raw integers).
    With ``indices`` only those output coefficients are computed; the rest
    of each result half is left zero.
    """

    def times(c: Poly) -> Poly:
        if indices is None:
            return c * p
        idx = np.asarray(indices, dtype=np.int64)
        out = Poly.zero(c.params, c.level)
        out.coeffs[idx] = ring.negacyclic_mul_partial(c, p, idx, tally)
        return out

    if isinstance(ct, HalfCiphertext):
        return HalfCiphertext(times(ct.c0), ct.v_id, ct.scale + p_scale)
    return Ciphertext(times(ct.c0), times(ct.c1), ct.scale + p_scale, ct.synthetic)


def rescale_ct(ct: Ciphertext) -> Ciphertext:
    if ct.scale < 2:
        raise StateError("nothing to rescale: ciphertext is at scale delta")
    return Ciphertext(ring.rescale(ct.c0), ring.rescale(ct.c1), ct.scale - 1, ct.synthetic)


def noiseless_ciphertext(m, params: RingParams) -> Ciphertext:
    """Test fixture (delta*m, 0); decrypts exactly, never valid in a protocol."""
    msg = m if isinstance(m, Poly) else encode(m, params)
    return Ciphertext(msg, Poly.zero(params, msg.level), scale=1, synthetic=True)


def reject_synthetic(ct) -> None:
    if getattr(ct, "synthetic", False):
        raise StateError("synthetic noiseless ciphertexts are test-only")


def public_error(sk: SecretKey, pk: PublicKey) -> np.ndarray:
    """Recover e = b + a*s (signed); only possible with the secret key."""
    return (pk.b + pk.a * sk.s).centered()
