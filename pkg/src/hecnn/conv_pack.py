"""Coefficient packing for convolution layers.

Layout, for a shape with ``c_i`` input and ``c_o`` output channels (stride 1,
valid padding, ``s = c_i``):

* input channel ``m`` pixel ``(k, l)`` sits at exponent
  ``c_i*((k - f_w)*h_i + l) + m``;
* weight ``F[m, n, k, l]`` (scaled by delta) of output channel ``n`` sits at
  ``c_i*(h_i*f_w - (k*h_i + l)) - m + n*c_i/c_o``;
* the product's coefficient ``c_i*(k*h_i + l) + n*c_i/c_o`` then carries the
  batched convolution output ``(n, k, l)``.

Negative exponents are reduced with X^-t = -X^(N-t).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParameterError
from .ring import Poly, RingParams, embed_power, monomial_shift


@dataclass(frozen=True)
class ConvShape:
    c_i: int
    c_o: int
    w_i: int
    h_i: int
    f_w: int
    f_h: int
    stride: int = 1

    def __post_init__(self):
        for name in ("c_i", "c_o", "w_i", "h_i", "f_w", "f_h"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.stride != 1:
            raise ParameterError("only stride 1 is supported")
        if self.c_i % self.c_o:
            raise ParameterError(f"c_i not multiple of c_o ({self.c_i} vs {self.c_o})")
        if self.w_o < 1 or self.h_o < 1:
            raise ParameterError("filter larger than the input image")

    @classmethod
    def square(cls, c_i: int, c_o: int, w: int, f: int) -> "ConvShape":
        return cls(c_i, c_o, w, w, f, f)

    @property
    def w_o(self) -> int:
        return self.w_i - self.f_w + 1

    @property
    def h_o(self) -> int:
        return self.h_i - self.f_h + 1

    @property
    def group(self) -> int:
        """Spacing between output channels inside one group of c_i slots."""
        return self.c_i // self.c_o

    def check_ring(self, N: int) -> None:
        if self.c_i * self.w_i * self.h_i > N:
            raise ParameterError(
                f"c_i*w_i*h_i = {self.c_i * self.w_i * self.h_i} exceeds N = {N}")
        if N % self.c_i:
            raise ParameterError(f"N = {N} is not a multiple of c_i = {self.c_i}")


@dataclass(frozen=True)
class SlotMap:
    """Valid output slots: (k, l, n) -> c_i*(k*h_i + l) + n*c_i/c_o."""

    shape: ConvShape

    @cached_property
    def indices(self) -> np.ndarray:
        """Array of shape (c_o, w_o, h_o) holding coefficient indices."""
        sh = self.shape
        k = np.arange(sh.w_o)[None, :, None]
        l = np.arange(sh.h_o)[None, None, :]
        n = np.arange(sh.c_o)[:, None, None]
        return sh.c_i * (k * sh.h_i + l) + n * sh.group

    def index(self, k: int, l: int, n: int) -> int:
        return int(self.indices[n, k, l])

    def channel(self, n: int) -> np.ndarray:
        return self.indices[n].ravel()

    def __len__(self) -> int:
        return self.indices.size

    @property
    def entries(self) -> dict:
        return {(k, l, n): self.index(k, l, n)
                for n in range(self.shape.c_o)
                for k in range(self.shape.w_o)
                for l in range(self.shape.h_o)}


def valid_slots(shape: ConvShape) -> SlotMap:
    return SlotMap(shape)


def group_positions(shape: ConvShape, N: int, n: int | None = None) -> np.ndarray:
    """Positions j + n*c_i/c_o for j = 0, c_i, 2*c_i, ... < N.

    These are the coefficients computed per inference; with ``n`` omitted,
    all output channels are returned in ascending (wire) order.
    """
    base = np.arange(0, N, shape.c_i)
    if n is not None:
        return base + n * shape.group
    offs = np.arange(shape.c_o) * shape.group
    return (base[:, None] + offs[None, :]).ravel()


def _check_values(arr: np.ndarray, name: str):
    if np.any(np.abs(arr) > 1.0):
        raise ParameterError(f"{name} values must lie in [-1, 1]")


def place_monomials(exponents: np.ndarray, values: np.ndarray, N: int) -> np.ndarray:
    """Sum values[j] * X**exponents[j] reduced mod X^N + 1, as signed integers."""
    out = np.zeros(N, dtype=np.int64).astype(object)
    for e, x in zip(np.ravel(exponents), np.ravel(values)):
        q, r = divmod(int(e), N)
        out[r] += -int(x) if q & 1 else int(x)
    return out


def input_exponents(shape: ConvShape) -> np.ndarray:
    """Unreduced exponent of each input value, shape (c_i, w_i, h_i)."""
    m = np.arange(shape.c_i)[:, None, None]
    k = np.arange(shape.w_i)[None, :, None]
    l = np.arange(shape.h_i)[None, None, :]
    return shape.c_i * ((k - shape.f_w) * shape.h_i + l) + m


def pack_input_values(values: np.ndarray, shape: ConvShape, N: int) -> np.ndarray:
    """Place already-scaled integer inputs of any magnitude; signed, length N."""
    values = np.asarray(values)
    if values.shape != (shape.c_i, shape.w_i, shape.h_i):
        raise ParameterError(f"image shape {values.shape} does not match {shape}")
    shape.check_ring(N)
    return place_monomials(input_exponents(shape), values, N)


def pack_input(img: np.ndarray, shape: ConvShape, params: RingParams,
               scale: bool = False) -> Poly:
    """Pack all input channels into one polynomial.

    Each channel is laid out with non-negative exponents k*h_i + l, spread
    by ``embed_power(., c_i)``, then shifted by ``m - c_i*f_w*h_i``.  The
    values are raw unless ``scale`` is set, in which case they are rounded
    at delta.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (shape.c_i, shape.w_i, shape.h_i):
        raise ParameterError(f"image shape {img.shape} does not match {shape}")
    shape.check_ring(params.N)
    _check_values(img, "input")
    if scale:
        img = np.rint(img * params.delta)
    total = Poly.zero(params)
    for m in range(shape.c_i):
        flat = np.zeros(params.N)
        flat[:shape.w_i * shape.h_i] = img[m].ravel()
        chan = embed_power(Poly.from_ints(params, flat), shape.c_i)
        total = total + monomial_shift(chan, m - shape.c_i * shape.f_w * shape.h_i)
    return total


def filter_exponents(shape: ConvShape, shift: int = 0) -> np.ndarray:
    """Unreduced exponent of each weight, shape (c_i, f_w, f_h), plus ``shift``."""
    m = np.arange(shape.c_i)[:, None, None]
    k = np.arange(shape.f_w)[None, :, None]
    l = np.arange(shape.f_h)[None, None, :]
    return shape.c_i * (shape.h_i * shape.f_w - (k * shape.h_i + l)) - m + shift


def quantize_filters(filters: np.ndarray, params: RingParams) -> np.ndarray:
    return np.rint(np.asarray(filters, dtype=np.float64) * params.delta)


def _filter_poly(weights: np.ndarray, shape: ConvShape, params: RingParams, shift: int) -> Poly:
    return Poly.from_ints(params, place_monomials(filter_exponents(shape, shift), weights, params.N))


def _check_filters(filters: np.ndarray, shape: ConvShape, params: RingParams, n: int):
    if filters.shape != (shape.c_i, shape.c_o, shape.f_w, shape.f_h):
        raise ParameterError(f"filter shape {filters.shape} does not match {shape}")
    if not 0 <= n < shape.c_o:
        raise ParameterError(f"output channel {n} out of range [0, {shape.c_o})")
    shape.check_ring(params.N)


def pack_filters(filters: np.ndarray, shape: ConvShape, params: RingParams, n: int,
                 scale: bool = True) -> Poly:
    """Baseline (unshifted) packing f^(n)(X) of all filters of output channel n."""
    filters = np.asarray(filters, dtype=np.float64)
    _check_filters(filters, shape, params, n)
    if scale:
        _check_values(filters, "filter")
    w = quantize_filters(filters[:, n], params) if scale else filters[:, n]
    return _filter_poly(w, shape, params, 0)


def pack_filters_hat(filters: np.ndarray, shape: ConvShape, params: RingParams, n: int,
                     scale: bool = True) -> Poly:
    """Shifted packing X^(n*c_i/c_o) * f^(n)(X) placing channel n at offset n*c_i/c_o."""
    filters = np.asarray(filters, dtype=np.float64)
    _check_filters(filters, shape, params, n)
    if scale:
        _check_values(filters, "filter")
    w = quantize_filters(filters[:, n], params) if scale else filters[:, n]
    return _filter_poly(w, shape, params, n * shape.group)


def decode_output(r: np.ndarray, shape: ConvShape) -> np.ndarray:
    """Read the (c_o, w_o, h_o) tensor out of a length-N coefficient vector."""
    r = np.asarray(r)
    return r[SlotMap(shape).indices]


def plant_output(values: np.ndarray, shape: ConvShape, N: int, fill=0.0) -> np.ndarray:
    """Inverse of :func:`decode_output`: put a (c_o, w_o, h_o) tensor into slots."""
    out = np.full(N, fill, dtype=np.asarray(values).dtype)
    out[SlotMap(shape).indices] = values
    return out
