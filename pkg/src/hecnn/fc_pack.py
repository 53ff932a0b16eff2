"""Coefficient packing for fully connected layers.

With output spacing ``sp`` (``n_o`` by default):

* input ``I_l`` sits at exponent ``l*sp``;
* weight ``W[k, 0]`` sits at ``k`` and ``-W[k, j]`` (j >= 1) at ``N - j*sp + k``;
* bias ``B_k`` sits at ``k``.

Then coefficient ``k < n_o`` of ``i*w + b`` is ``sum_l W[k, l]*I_l + B_k``.
When ``N == n_i*n_o`` the weight layout is the column-reversed form
``-W[k, n_i - l]`` at ``l*n_o + k``.  Any ``N >= n_i*sp`` works, which is
how a small layer is zero-padded.

Layers that do not fit one polynomial are cut into tiles: column tiles
split the inputs, row tiles split the outputs, and all row tiles of one
column tile share the same packed input.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParameterError
from .ring import Poly, RingParams


@dataclass(frozen=True)
class FcShape:
    n_i: int
    n_o: int

    def __post_init__(self):
        if self.n_i < 1 or self.n_o < 1:
            raise ParameterError("n_i and n_o must be positive")

    def fits(self, N: int) -> bool:
        return self.n_i * self.n_o <= N


def _spacing(shape: FcShape, N: int, spacing: int | None) -> int:
    sp = shape.n_o if spacing is None else spacing
    if sp < shape.n_o:
        raise ParameterError(f"spacing {sp} smaller than n_o = {shape.n_o}")
    if shape.n_i * sp > N:
        raise ParameterError(f"n_i*spacing = {shape.n_i * sp} exceeds N = {N}; use plan_tiles")
    return sp


def _scaled(values: np.ndarray, params: RingParams, power: int, name: str,
            bounded: bool = True) -> np.ndarray:
    if params.integer_mode:
        if not np.all(np.equal(np.mod(values, 1), 0)):
            raise ParameterError(f"integer mode needs integral {name}")
        return values
    if bounded and np.any(np.abs(values) > 1.0):
        raise ParameterError(f"{name} values must lie in [-1, 1]")
    return np.rint(values * float(params.delta) ** power)


def _from_signed(params: RingParams, signed: np.ndarray) -> Poly:
    return Poly.from_ints(params, signed)


def input_values_poly(values: np.ndarray, shape: FcShape, params: RingParams,
                      spacing: int | None = None) -> Poly:
    """Place already-scaled integers I_l at l*spacing."""
    values = np.asarray(values).ravel()
    if values.size != shape.n_i:
        raise ParameterError(f"expected {shape.n_i} inputs, got {values.size}")
    sp = _spacing(shape, params.N, spacing)
    out = np.zeros(params.N, dtype=np.int64).astype(object)
    out[np.arange(shape.n_i) * sp] = [int(x) for x in values]
    return _from_signed(params, out)


def pack_fc_input(I: np.ndarray, shape: FcShape, params: RingParams,
                  spacing: int | None = None) -> Poly:
    """i(X) = sum I_l X^(l*n_o); scaled by delta unless the ring is integer-mode."""
    I = np.asarray(I, dtype=np.float64).ravel()
    if I.size != shape.n_i:
        raise ParameterError(f"expected {shape.n_i} inputs, got {I.size}")
    return input_values_poly(_scaled(I, params, 1, "input"), shape, params, spacing)


def pack_fc_weights(W: np.ndarray, shape: FcShape, params: RingParams,
                    spacing: int | None = None) -> Poly:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (shape.n_o, shape.n_i):
        raise ParameterError(f"weight shape {W.shape} does not match (n_o, n_i) = "
                             f"{(shape.n_o, shape.n_i)}")
    N = params.N
    sp = _spacing(shape, N, spacing)
    Wq = _scaled(W, params, 1, "weight")
    out = np.zeros(N, dtype=np.int64).astype(object)
    k = np.arange(shape.n_o)
    out[k] = [int(x) for x in Wq[:, 0]]
    for j in range(1, shape.n_i):
        out[N - j * sp + k] = [-int(x) for x in Wq[:, j]]
    return _from_signed(params, out)


def pack_fc_bias(B: np.ndarray, params: RingParams) -> Poly:
    """b(X) = sum B_k X^k at product scale (delta squared)."""
    B = np.asarray(B, dtype=np.float64).ravel()
    if B.size > params.N:
        raise ParameterError("bias longer than N")
    out = np.zeros(params.N, dtype=np.int64).astype(object)
    out[:B.size] = [int(x) for x in _scaled(B, params, 2, "bias", bounded=False)]
    return _from_signed(params, out)


def decode_fc(r, n_o: int) -> np.ndarray:
    """Coefficients 0..n_o-1 of a product polynomial (Poly or array)."""
    coeffs = r.centered() if isinstance(r, Poly) else np.asarray(r)
    return coeffs[:n_o]


@dataclass(frozen=True)
class FcTile:
    row_start: int
    row_stop: int
    col_start: int
    col_stop: int
    col_index: int

    @property
    def shape(self) -> FcShape:
        return FcShape(self.col_stop - self.col_start, self.row_stop - self.row_start)


@dataclass(frozen=True)
class FcTilePlan:
    """Row/column decomposition of an (n_o, n_i) weight matrix.

    Every tile uses output spacing ``rows_per``; unused exponents are the
    explicit zero padding.
    """

    n_i: int
    n_o: int
    N: int
    col_tiles: int
    width: int
    rows_per: int

    @property
    def row_tiles(self) -> int:
        return -(-self.n_o // self.rows_per)

    @cached_property
    def tiles(self) -> tuple:
        out = []
        for c in range(self.col_tiles):
            c0, c1 = c * self.width, min(self.n_i, (c + 1) * self.width)
            for r in range(self.row_tiles):
                r0, r1 = r * self.rows_per, min(self.n_o, (r + 1) * self.rows_per)
                out.append(FcTile(r0, r1, c0, c1, c))
        return tuple(out)

    def col_range(self, c: int) -> tuple[int, int]:
        return c * self.width, min(self.n_i, (c + 1) * self.width)

    @property
    def padding(self) -> int:
        """Zero coefficients per tile set: unused exponents summed over tiles."""
        return len(self.tiles) * self.N - self.n_i * self.n_o

    def __len__(self) -> int:
        return len(self.tiles)


def plan_tiles(n_i: int, n_o: int, N: int) -> FcTilePlan:
    """Cut W into tiles whose input count times spacing fits N.

    Inputs are split into the fewest equal column tiles of at most N
    entries; each tile then holds floor(N / width) output rows.
    """
    if n_i < 1 or n_o < 1:
        raise ParameterError("n_i and n_o must be positive")
    col_tiles = -(-n_i // N)
    width = -(-n_i // col_tiles)
    rows_per = min(n_o, N // width)
    return FcTilePlan(n_i, n_o, N, col_tiles, width, rows_per)


def tile_weights(W: np.ndarray, tile: FcTile, plan: FcTilePlan, params: RingParams) -> Poly:
    sub = np.asarray(W)[tile.row_start:tile.row_stop, tile.col_start:tile.col_stop]
    return pack_fc_weights(sub, tile.shape, params, spacing=plan.rows_per)


def tile_input_values(values: np.ndarray, c: int, plan: FcTilePlan, params: RingParams) -> Poly:
    c0, c1 = plan.col_range(c)
    sub = np.asarray(values).ravel()[c0:c1]
    return input_values_poly(sub, FcShape(c1 - c0, min(plan.rows_per, plan.n_o)), params,
                             spacing=plan.rows_per)


def tile_bias(B, tile: FcTile, params: RingParams) -> Poly:
    if B is None or tile.col_index != 0:
        return Poly.zero(params)
    return pack_fc_bias(np.asarray(B, dtype=np.float64).ravel()[tile.row_start:tile.row_stop], params)


def combine_tiles(partials: list, plan: FcTilePlan) -> np.ndarray:
    """Sum per-tile decoded outputs (same order as ``plan.tiles``) into n_o values."""
    out = np.zeros(plan.n_o, dtype=np.asarray(partials[0]).dtype if partials else np.float64)
    for tile, part in zip(plan.tiles, partials):
        out[tile.row_start:tile.row_stop] += np.asarray(part)[:tile.row_stop - tile.row_start]
    return out
