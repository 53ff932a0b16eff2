"""Plaintext reference computations in double precision."""

from __future__ import annotations

import numpy as np

from .conv_pack import ConvShape


def conv2d_ref(img: np.ndarray, filters: np.ndarray, shape: ConvShape) -> np.ndarray:
    """Valid, stride-1 batched convolution.

    ``img`` is (c_i, w_i, h_i), ``filters`` is (c_i, c_o, f_w, f_h); the
    result is (c_o, w_o, h_o) with out[n, k, l] = sum over m, k', l' of
    F[m, n, k', l'] * I[m, k + k', l + l'].
    """
    img = np.asarray(img, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    out = np.zeros((shape.c_o, shape.w_o, shape.h_o))
    for n in range(shape.c_o):
        for k in range(shape.w_o):
            for l in range(shape.h_o):
                window = img[:, k:k + shape.f_w, l:l + shape.f_h]
                out[n, k, l] = np.sum(window * filters[:, n])
    return out


def fc_ref(W: np.ndarray, I: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    W = np.asarray(W)
    out = W @ np.asarray(I)
    if B is not None:
        out = out + np.asarray(B)
    return out


def relu_ref(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    return (t + np.sign(t) * t) / 2


def quantize(t: np.ndarray, delta: int) -> np.ndarray:
    """Round delta * t to the nearest integer, ties to even."""
    return np.rint(np.asarray(t, dtype=np.float64) * delta)


def dequantize(q: np.ndarray, delta: int) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / delta


def fixed_point(t: np.ndarray, delta: int) -> np.ndarray:
    """The value the encrypted path actually sees after encoding at ``delta``."""
    return dequantize(quantize(t, delta), delta)


def conv_lipschitz(filters: np.ndarray) -> float:
    """Largest per-output-channel sum of absolute weights (max-norm gain)."""
    f = np.abs(np.asarray(filters))
    return float(f.sum(axis=(0, 2, 3)).max())


def fc_lipschitz(W: np.ndarray) -> float:
    return float(np.abs(np.asarray(W)).sum(axis=1).max())
