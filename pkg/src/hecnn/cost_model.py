"""Closed-form cost formulas for four conv/FC evaluation schemes, live
counters incremented by the protocol code, and a reconciler that checks the
two agree for the rotation-free scheme.
"""

from __future__ import annotations

import enum
import json
import math
import threading
from dataclasses import asdict, dataclass, field
from typing import Union

from .conv_pack import ConvShape
from .errors import ParameterError, ReconciliationError
from .fc_pack import FcShape, plan_tiles
from .ring import LEVEL_Q, LEVEL_QP, RingParams
from .transport import HEADER_SIZE, NONCE_SIZE


class SchemeId(str, enum.Enum):
    GAZELLE = "gazelle"
    CHEETAH = "cheetah"
    CONVFHE = "convfhe"
    PROPOSED = "proposed"


def _scheme(s) -> SchemeId:
    try:
        return SchemeId(s)
    except ValueError:
        raise ParameterError(f"unknown scheme {s!r}") from None


# -- live counters -----------------------------------------------------------

@dataclass
class PartyTally:
    """Per-party operation counts; only ever incremented."""

    coeff_outputs: int = 0
    coeff_mults: int = 0
    rotations: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add_products(self, outputs: int, mults: int) -> None:
        with self._lock:
            self.coeff_outputs += outputs
            self.coeff_mults += mults

    def snapshot(self) -> dict:
        return {"coeff_outputs": self.coeff_outputs, "coeff_mults": self.coeff_mults,
                "rotations": self.rotations}


@dataclass
class CostCounters:
    """Session-wide tallies: one tally per party plus per-direction wire use.

    Wire totals exclude the one-off initialization messages, which are
    tracked in ``init_bytes``.
    """

    server: PartyTally = field(default_factory=PartyTally)
    client: PartyTally = field(default_factory=PartyTally)
    bytes_c2s: int = 0
    bytes_s2c: int = 0
    residues_c2s: int = 0
    residues_s2c: int = 0
    init_bytes: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add_wire(self, direction: str, nbytes: int, residues: int, init: bool = False) -> None:
        with self._lock:
            if init:
                self.init_bytes += nbytes
            elif direction == "c2s":
                self.bytes_c2s += nbytes
                self.residues_c2s += residues
            elif direction == "s2c":
                self.bytes_s2c += nbytes
                self.residues_s2c += residues
            else:
                raise ParameterError(f"unknown direction {direction!r}")

    @property
    def coeff_outputs_server(self) -> int:
        return self.server.coeff_outputs

    @property
    def coeff_outputs_client(self) -> int:
        return self.client.coeff_outputs

    @property
    def rotations(self) -> int:
        return self.server.rotations + self.client.rotations

    def snapshot(self) -> dict:
        return {
            "coeff_outputs_server": self.server.coeff_outputs,
            "coeff_outputs_client": self.client.coeff_outputs,
            "coeff_mults_server": self.server.coeff_mults,
            "coeff_mults_client": self.client.coeff_mults,
            "rotations_server": self.server.rotations,
            "rotations_client": self.client.rotations,
            "bytes_c2s": self.bytes_c2s,
            "bytes_s2c": self.bytes_s2c,
            "residues_c2s": self.residues_c2s,
            "residues_s2c": self.residues_s2c,
        }


def counter_delta(after: dict, before: dict) -> dict:
    return {k: after[k] - before.get(k, 0) for k in after}


# -- closed forms ------------------------------------------------------------

@dataclass(frozen=True)
class CostRecord:
    """One column of a complexity table.  Tuples are (server, client)."""

    scheme: str
    coeff_outputs: Union[int, tuple]
    rotations: Union[int, tuple]
    data_per_poly: int = 0
    memory: Union[int, tuple] = 0

    def as_dict(self) -> dict:
        return asdict(self)


def conv_cost(scheme, shape: ConvShape, N: int, strict: bool = True) -> CostRecord:
    """Per-input Conv-layer costs with f^2 = f_w*f_h and w^2 = w_i*h_i.

    The tabulated forms assume ``N == c_i * w^2``; ``strict=False`` skips
    that check, which is valid for the proposed scheme whose counts only
    depend on N, c_i and c_o.
    """
    scheme = _scheme(scheme)
    c_i, c_o = shape.c_i, shape.c_o
    f2 = shape.f_w * shape.f_h
    if strict and N != c_i * shape.w_i * shape.h_i:
        raise ParameterError(f"table forms assume N = c_i*w^2 = {c_i * shape.w_i * shape.h_i}, got {N}")
    if scheme is SchemeId.GAZELLE:
        rot = 2 * (f2 - 3 + c_o)
        return CostRecord(scheme.value, 4 * f2 * c_o * N, rot, N // 2, f2 * c_o + 2 * rot)
    if scheme is SchemeId.CHEETAH:
        return CostRecord(scheme.value, 2 * c_o * N, 0, N, c_o)
    if scheme is SchemeId.CONVFHE:
        return CostRecord(scheme.value, N * (6 * c_o - 4), c_o - 1, N,
                          2 * int(math.log2(c_i)) + c_o)
    per_side = N * c_o // c_i
    return CostRecord(scheme.value, (per_side, per_side), (0, 0), N, (c_o, c_o + 1))


def _rows_per_poly(N: int, n_i: int) -> int:
    rows = N // n_i
    if rows < 1:
        raise ParameterError(f"n_i = {n_i} exceeds N = {N}")
    return rows


def fc_cost(scheme, shape: FcShape, N: int) -> CostRecord:
    """Per-input FC-layer costs; memory is counted in coefficients."""
    scheme = _scheme(scheme)
    n_i, n_o = shape.n_i, shape.n_o
    rows = _rows_per_poly(N, n_i)
    polys = -(-n_o // rows)
    ratio = n_o / rows
    if scheme is SchemeId.GAZELLE:
        rot = math.ceil(ratio - 1 + math.log2(N / n_o))
        mem = N * math.ceil(3 * n_o / rows - 2 + 2 * math.log2(N / n_o))
        return CostRecord(scheme.value, 2 * N * polys, rot, N // 2, mem)
    if scheme is SchemeId.CHEETAH:
        return CostRecord(scheme.value, 2 * N * polys, 0, N, N * polys)
    if scheme is SchemeId.CONVFHE:
        # exponent clamped at zero when a single poly holds every row
        e = max(0, math.ceil(math.log2(ratio)))
        return CostRecord(scheme.value, 2 * N * polys, 2 ** e, N, N * polys + 2 * N * e)
    return CostRecord(scheme.value, (n_o, n_o), (0, 0), N, (N * polys, N * polys + n_o))


@dataclass(frozen=True)
class Bandwidth:
    scheme: str
    bits_c2s: int
    bits_s2c: int

    @property
    def bytes_c2s(self) -> float:
        return self.bits_c2s / 8

    @property
    def bytes_s2c(self) -> float:
        return self.bits_s2c / 8

    @property
    def total_bytes(self) -> float:
        return (self.bits_c2s + self.bits_s2c) / 8

    @property
    def megabytes(self) -> float:
        """Total in MB, 1 MB = 10**6 bytes."""
        return self.total_bytes / 1e6


def relu_bandwidth(scheme, w: int, c_i: int, c_o: int, N: int = 1 << 13,
                   qbits: int = 104, qpbits: int = 55) -> Bandwidth:
    """Wire volume of one Conv layer followed by a garbled-circuit ReLU."""
    scheme = _scheme(scheme)
    w2 = w * w

    def polys(x):
        return -(-x // N)

    if scheme is SchemeId.GAZELLE:
        return Bandwidth(scheme.value, 2 * N * polys(2 * w2 * c_i) * qbits,
                         2 * N * polys(2 * w2 * c_o) * qpbits)
    if scheme is SchemeId.CHEETAH:
        return Bandwidth(scheme.value, 2 * N * polys(w2 * c_i) * qbits, 2 * N * c_o * qpbits)
    if scheme is SchemeId.CONVFHE:
        return Bandwidth(scheme.value, 2 * N * polys(w2 * c_i) * qbits,
                         2 * N * polys(w2 * c_o) * qpbits)
    return Bandwidth(scheme.value, N * polys(w2 * c_i) * qbits,
                     -(-(w2 * c_o * c_o) // c_i) * qpbits)


# (w, c_i, c_o) rows and the published MB figures, with N = 2**13, 104/55-bit moduli
REFERENCE_RELU_ROWS = [(7, 256, 256), (15, 128, 128), (31, 64, 64), (63, 32, 32)]
REFERENCE_RELU_MB = {
    "gazelle": [1.3, 2.6, 5.21, 10.42],
    "cheetah": [29.26, 15.27, 8.91, 7.01],
    "convfhe": [0.65, 1.3, 2.61, 5.21],
    "proposed": [0.3, 0.62, 1.27, 2.58],
}


# -- predicted counters for executed runs ------------------------------------

def predict_conv_run(shape: ConvShape, params: RingParams, inferences: int = 1,
                     masked: bool = False) -> dict:
    """Exact counters for ``inferences`` rotation-free conv evaluations.

    ``masked`` selects the ReLU hand-off, whose reply frame also carries a
    mask handle.
    """
    N = params.N
    out = N * shape.c_o // shape.c_i
    wq, wqp = params.width(LEVEL_Q), params.width(LEVEL_QP)
    extra = NONCE_SIZE if masked else 0
    return {
        "coeff_outputs_server": out * inferences,
        "coeff_outputs_client": out * inferences,
        "rotations_server": 0,
        "rotations_client": 0,
        "residues_c2s": N * inferences,
        "residues_s2c": out * inferences,
        "bytes_c2s": (HEADER_SIZE + N * wq) * inferences,
        "bytes_s2c": (HEADER_SIZE + extra + out * wqp) * inferences,
    }


def predict_fc_run(shape: FcShape, params: RingParams, inferences: int = 1,
                   masked: bool = False) -> dict:
    N = params.N
    plan = plan_tiles(shape.n_i, shape.n_o, N)
    outs = plan.col_tiles * shape.n_o
    wq, wqp = params.width(LEVEL_Q), params.width(LEVEL_QP)
    extra = NONCE_SIZE if masked else 0
    return {
        "coeff_outputs_server": outs * inferences,
        "coeff_outputs_client": outs * inferences,
        "rotations_server": 0,
        "rotations_client": 0,
        "residues_c2s": N * plan.col_tiles * inferences,
        "residues_s2c": outs * inferences,
        "bytes_c2s": (HEADER_SIZE + N * plan.col_tiles * wq) * inferences,
        "bytes_s2c": (HEADER_SIZE + extra + outs * wqp) * inferences,
    }


_RECONCILED = ("coeff_outputs_server", "coeff_outputs_client", "rotations_server",
               "rotations_client", "residues_c2s", "residues_s2c", "bytes_c2s", "bytes_s2c")


def reconcile(measured: Union[CostCounters, dict], predicted: dict, shape=None,
              scheme: str = "proposed", raise_on_fail: bool = True) -> dict:
    """Compare measured counters with predictions field by field.

    Returns ``{scheme, shape, predicted, measured, pass, diff}``; raises
    :class:`ReconciliationError` on any mismatch unless told not to.
    """
    if _scheme(scheme) is not SchemeId.PROPOSED:
        raise ParameterError("only the executed rotation-free scheme can be reconciled")
    meas = measured.snapshot() if isinstance(measured, CostCounters) else dict(measured)
    keys = [k for k in _RECONCILED if k in predicted]
    diff = {k: {"predicted": predicted[k], "measured": meas.get(k)}
            for k in keys if meas.get(k) != predicted[k]}
    if meas.get("rotations_server", 0) or meas.get("rotations_client", 0):
        diff.setdefault("rotations", {"predicted": 0, "measured": meas.get("rotations_server", 0)
                                      + meas.get("rotations_client", 0)})
    report = {
        "scheme": scheme,
        "shape": asdict(shape) if shape is not None and hasattr(shape, "__dataclass_fields__") else shape,
        "predicted": {k: predicted[k] for k in keys},
        "measured": {k: meas.get(k) for k in keys},
        "pass": not diff,
        "diff": diff,
    }
    if diff and raise_on_fail:
        raise ReconciliationError(f"counter mismatch in {sorted(diff)}", diff)
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
