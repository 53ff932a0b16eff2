"""Masked ReLU hand-off between two linear layers.

The server adds a fresh mask phi1 to its rescaled share; the client's sum
is then r + phi1.  ReLU runs inside a garbled-circuit stand-in that knows
both masks and outputs ReLU(r) + phi2; the client encrypts that, and the
server subtracts phi2 from c0 to get a fresh encryption of ReLU(r).

NOT SECURE: :class:`TrustedGC` evaluates in the clear.  It keeps the
inputs and outputs of a real garbled circuit, and the mask transfer it
replaces would be an oblivious transfer.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ckks
from .errors import ParameterError, ProtocolError
from .ring import LEVEL_Q, LEVEL_QP, Poly, RingParams, center
from .transport import MsgType, WireMessage, pack_masked, unpack_masked


@dataclass(frozen=True)
class MaskPair:
    phi1: Poly  # at Qp, added to the rescaled share
    phi2: Poly  # at Q, removed from the re-encrypted c0
    nonce: int


def _uniform_mask(params: RingParams, rng: np.random.Generator, support) -> np.ndarray:
    d = int(params.delta)
    out = np.zeros(params.N, dtype=np.int64).astype(object)
    idx = np.arange(params.N) if support is None else np.asarray(support)
    out[idx] = [int(x) for x in rng.integers(-d, d, size=len(idx), endpoint=True)]
    return out


class MaskRegistry:
    """Server-side nonce book-keeping: each pair masks once and unmasks once."""

    def __init__(self):
        self._ids = itertools.count(1)
        self._live: dict[int, MaskPair] = {}
        self._masked: set[int] = set()
        self._lock = threading.Lock()

    def sample(self, params: RingParams, rng: np.random.Generator, support=None) -> MaskPair:
        """Fresh masks with coefficients uniform in [-delta, delta].

        phi1 is drawn only on ``support`` (the positions that travel), phi2
        on all N coefficients.
        """
        phi1 = _uniform_mask(params, rng, support)
        phi2 = _uniform_mask(params, rng, None)
        with self._lock:
            pair = MaskPair(Poly.from_ints(params, phi1, LEVEL_QP),
                            Poly.from_ints(params, phi2, LEVEL_Q), next(self._ids))
            self._live[pair.nonce] = pair
        return pair

    def mark_masked(self, pair: MaskPair) -> None:
        with self._lock:
            if pair.nonce not in self._live:
                raise ProtocolError(f"mask {pair.nonce} is unknown or already consumed")
            if pair.nonce in self._masked:
                raise ProtocolError(f"mask {pair.nonce} was already used")
            self._masked.add(pair.nonce)

    def consume(self, nonce: int) -> MaskPair:
        with self._lock:
            try:
                return self._live.pop(nonce)
            except KeyError:
                raise ProtocolError(f"mask {nonce} is unknown or already consumed") from None


def server_mask(share: np.ndarray, masks: MaskPair, positions,
                registry: Optional[MaskRegistry] = None) -> np.ndarray:
    """share + phi1 (mod Qp) at the given wire positions."""
    if registry is not None:
        registry.mark_masked(masks)
    positions = np.asarray(positions)
    if len(share) != len(positions):
        raise ParameterError("share and positions differ in length")
    qp = masks.phi1.modulus
    return (np.asarray(share, dtype=object) + masks.phi1.coeffs[positions]) % qp


def masked_message(masked: np.ndarray, masks: MaskPair, params: RingParams) -> WireMessage:
    return WireMessage(MsgType.RELU_MASKED, pack_masked(masks.nonce, masked, params))


def read_masked(msg: WireMessage, params: RingParams) -> tuple[int, np.ndarray]:
    if msg.msg_type != MsgType.RELU_MASKED:
        raise ProtocolError(f"expected RELU_MASKED, got {msg.msg_type.name}")
    return unpack_masked(msg.payload, params)


def unmask_share(masked_r: Poly, masks: MaskPair) -> np.ndarray:
    """Signed r = masked_r - phi1 at scale delta (inside the stub only)."""
    qp = masked_r.params.Qp
    return center((masked_r.coeffs - masks.phi1.coeffs) % qp, qp)


def gc_stub_relu(masked_r: Poly, masks: MaskPair,
                 repack: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Poly:
    """ReLU(masked_r - phi1) + phi2, evaluated in the clear (trusted stub).

    ``repack`` optionally maps the signed length-N ReLU output to the next
    layer's input layout before phi2 is added.
    """
    params = masked_r.params
    r = unmask_share(masked_r, masks)
    out = (r + np.sign(r) * r) // 2  # exact on big integers
    if repack is not None:
        out = np.asarray(repack(out), dtype=object)
        if out.shape != (params.N,):
            raise ParameterError("repack must return N coefficients")
    return Poly.from_ints(params, out) + masks.phi2


class TrustedGC:
    """In-process stand-in for the garbled circuit and the mask transfer."""

    def __init__(self, trace: Optional[Callable[[np.ndarray], None]] = None):
        self._masks: dict[int, MaskPair] = {}
        self._lock = threading.Lock()
        # debugging tap: sees each unmasked r, as a real circuit never would
        self.trace = trace

    def receive_masks(self, masks: MaskPair) -> None:
        with self._lock:
            self._masks[masks.nonce] = masks

    def evaluate(self, masked_r: Poly, nonce: int, repack=None) -> Poly:
        with self._lock:
            try:
                masks = self._masks.pop(nonce)
            except KeyError:
                raise ProtocolError(f"no masks delivered for nonce {nonce}") from None
        if self.trace is not None:
            self.trace(unmask_share(masked_r, masks))
        return gc_stub_relu(masked_r, masks, repack)


def client_reencrypt(gc_out: Poly, pk: ckks.PublicKey, rng: np.random.Generator,
                     created_for: str = "relu") -> tuple[ckks.Ciphertext, ckks.EncRandomness]:
    """Fresh full encryption of the already-scaled GC output."""
    return ckks.encrypt(gc_out, pk, rng, created_for)


def reenc_message(ct: ckks.Ciphertext) -> WireMessage:
    """Only c0 travels; the client keeps v for the next layer."""
    return WireMessage(MsgType.RELU_REENC, ct.c0.to_bytes())


def server_unmask(ct, masks: MaskPair, registry: Optional[MaskRegistry] = None):
    """Subtract phi2 from c0; works on full or c0-only ciphertexts and bare c0 polys."""
    if registry is not None:
        masks = registry.consume(masks.nonce)
    if isinstance(ct, Poly):
        return ct - masks.phi2
    if isinstance(ct, ckks.HalfCiphertext):
        return ckks.HalfCiphertext(ct.c0 - masks.phi2, ct.v_id, ct.scale)
    ckks.reject_synthetic(ct)
    return ckks.Ciphertext(ct.c0 - masks.phi2, ct.c1, ct.scale)
