"""Binary tensor and key files.

Tensor file: u32 ndim, ndim x u64 dims, row-major float64 values, all
little-endian.

Key file: b"HECK", u8 version, u8 kind (1 secret, 2 public), u32 N,
u16 log2 Q, u16 log2 Qp, u16 log2 delta, u32 sigma * 2**16 (read back to 4
decimals), u32 h, then the
key polynomials at Q width (s for a secret key, b then a for a public key).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .ckks import PublicKey, SecretKey
from .errors import FrameError, ParameterError
from .ring import Poly, RingParams

KEY_MAGIC = b"HECK"
KEY_VERSION = 1
KIND_SECRET = 1
KIND_PUBLIC = 2
_KEY_HEADER = struct.Struct("<4sBBIHHHII")


def write_tensor(path, arr) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FrameError("tensor file too short")
    (ndim,) = struct.unpack_from("<I", data)
    off = 4 + 8 * ndim
    if len(data) < off:
        raise FrameError("tensor file truncated in header")
    dims = struct.unpack_from(f"<{ndim}Q", data, 4)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(data) != off + 8 * count:
        raise FrameError(f"tensor file holds {len(data) - off} value bytes, expected {8 * count}")
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(dims).astype(np.float64)


def _log2_exact(x: int, name: str) -> int:
    if x < 1 or x & (x - 1):
        raise ParameterError(f"key files need a power-of-two {name}")
    return x.bit_length() - 1


def _header(kind: int, p: RingParams) -> bytes:
    return _KEY_HEADER.pack(KEY_MAGIC, KEY_VERSION, kind, p.N, _log2_exact(p.Q, "Q"),
                            _log2_exact(p.Qp, "Qp"), _log2_exact(p.delta, "delta"),
                            int(round(p.sigma * 65536)), p.h)


def write_secret_key(path, sk: SecretKey) -> None:
    Path(path).write_bytes(_header(KIND_SECRET, sk.s.params) + sk.s.to_bytes())


def write_public_key(path, pk: PublicKey) -> None:
    Path(path).write_bytes(_header(KIND_PUBLIC, pk.params) + pk.b.to_bytes() + pk.a.to_bytes())


def _read_key(path):
    data = Path(path).read_bytes()
    if len(data) < _KEY_HEADER.size:
        raise FrameError("key file too short")
    magic, version, kind, N, qb, qpb, db, sig, h = _KEY_HEADER.unpack_from(data)
    if magic != KEY_MAGIC or version != KEY_VERSION:
        raise FrameError("not a key file or unsupported version")
    params = RingParams(N, 1 << qb, 1 << qpb, 1 << db, sigma=round(sig / 65536, 4), h=h)
    size = N * params.width("Q")
    body = data[_KEY_HEADER.size:]
    polys = [Poly.from_bytes(params, body[j * size:(j + 1) * size]) for j in range(len(body) // size)]
    if len(body) % size:
        raise FrameError("key file has a partial polynomial")
    return kind, params, polys


def read_secret_key(path) -> SecretKey:
    kind, _, polys = _read_key(path)
    if kind != KIND_SECRET or len(polys) != 1:
        raise FrameError("not a secret key file")
    return SecretKey(polys[0])


def read_public_key(path) -> PublicKey:
    kind, _, polys = _read_key(path)
    if kind != KIND_PUBLIC or len(polys) != 2:
        raise FrameError("not a public key file")
    return PublicKey(polys[0], polys[1])
