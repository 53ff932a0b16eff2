"""Two-party rotation-free convolution.

The server publishes p_n = f_n*a + e (e flooded at stddev delta*sigma) once
per layer.  Per inference the client sends only c0 of a fresh encryption,
the server returns the needed coefficients of c0*f_n, and the client adds
the matching coefficients of v*(s*p_n), which it can compute because it
kept v.  Each party rescales its own share before the sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ckks, ring
from .conv_pack import ConvShape, decode_output, group_positions, pack_filters_hat, pack_input
from .errors import ParameterError, StateError
from .ring import LEVEL_Q, LEVEL_QP, Poly, RingParams
from .transport import MsgType, WireMessage, pack_polys, pack_residues, unpack_polys, unpack_residues


@dataclass
class ServerConvContext:
    shape: ConvShape
    f_hat: list
    a: Poly
    p_list: list
    tally: object = None

    @property
    def params(self) -> RingParams:
        return self.a.params

    @property
    def positions(self) -> np.ndarray:
        return group_positions(self.shape, self.params.N)

    @property
    def memory_polys(self) -> int:
        return len(self.f_hat)


@dataclass
class ClientConvContext:
    shape: ConvShape
    sk: ckks.SecretKey
    p_list: list = field(default_factory=list)
    sp_cache: list = field(default_factory=list)
    v_store: ckks.RandomnessStore = field(default_factory=ckks.RandomnessStore)
    tally: object = None
    result: Poly | None = None

    def load(self, p_list: list) -> None:
        """Install new p polynomials and rebuild the s*p cache once."""
        self.p_list = list(p_list)
        self.sp_cache = [self.sk.s * p for p in self.p_list]

    @property
    def params(self) -> RingParams:
        return self.sk.s.params

    @property
    def memory_polys(self) -> int:
        return len(self.sp_cache) + (self.result is not None)


def _check_shape(shape: ConvShape, params: RingParams):
    shape.check_ring(params.N)


def server_init(filters, shape: ConvShape, pk: ckks.PublicKey, rng: np.random.Generator,
                tally=None) -> tuple[ServerConvContext, WireMessage]:
    """Pack shifted filters, flood each f_n*a with fresh noise, emit CONV_INIT."""
    params = pk.params
    _check_shape(shape, params)
    filters = np.asarray(filters, dtype=np.float64)
    f_hat = [pack_filters_hat(filters, shape, params, n) for n in range(shape.c_o)]
    stddev = params.delta * params.sigma
    p_list = [f * pk.a + ring.sample_gaussian(params, rng, stddev=stddev) for f in f_hat]
    ctx = ServerConvContext(shape, f_hat, pk.a, p_list, tally)
    return ctx, WireMessage(MsgType.CONV_INIT, pack_polys(p_list))


def client_init(msg: WireMessage, shape: ConvShape, sk: ckks.SecretKey, tally=None,
                ctx: ClientConvContext | None = None) -> ClientConvContext:
    params = sk.s.params
    _check_shape(shape, params)
    if msg.msg_type != MsgType.CONV_INIT:
        raise StateError(f"expected CONV_INIT, got {msg.msg_type.name}")
    p_list = unpack_polys(msg.payload, params)
    if len(p_list) != shape.c_o:
        raise ParameterError(f"expected {shape.c_o} p polynomials, got {len(p_list)}")
    ctx = ctx or ClientConvContext(shape, sk, tally=tally)
    ctx.load(p_list)
    return ctx


def client_round1(img, shape: ConvShape, pk: ckks.PublicKey, ctx: ClientConvContext,
                  rng: np.random.Generator) -> tuple[WireMessage, int]:
    """Encrypt the packed image c0-only; returns the message and the v handle."""
    return encrypt_values(pack_input(img, shape, pk.params, scale=True), pk, ctx, rng,
                          MsgType.CONV_C0)


def encrypt_values(m: Poly, pk: ckks.PublicKey, ctx, rng, msg_type: MsgType,
                   created_for: str = "conv") -> tuple[WireMessage, int]:
    half = ckks.encrypt_c0_only(m, pk, rng, ctx.v_store, created_for)
    return WireMessage(msg_type, half.c0.to_bytes()), half.v_id


def _interleave(parts: list, c_o: int) -> np.ndarray:
    out = np.empty(len(parts[0]) * c_o, dtype=object)
    for n, part in enumerate(parts):
        out[n::c_o] = part
    return out


def server_products(c0: Poly, ctx: ServerConvContext) -> np.ndarray:
    """c0*f_hat_n at j + n*c_i/c_o for every group j, wire order, mod Q."""
    sh, N = ctx.shape, ctx.params.N
    parts = [ring.negacyclic_mul_partial(c0, f, group_positions(sh, N, n), ctx.tally)
             for n, f in enumerate(ctx.f_hat)]
    return _interleave(parts, sh.c_o)


def _require_server(ctx):
    if ctx is None or not getattr(ctx, "f_hat", None):
        raise StateError("server context is not initialized")


def server_eval_residues(msg: WireMessage, ctx: ServerConvContext) -> np.ndarray:
    """Rescaled server share (mod Qp) in wire order."""
    _require_server(ctx)
    if msg.msg_type not in (MsgType.CONV_C0,):
        raise StateError(f"expected CONV_C0, got {msg.msg_type.name}")
    c0 = Poly.from_bytes(ctx.params, msg.payload, LEVEL_Q)
    return ring.rescale_residues(server_products(c0, ctx), ctx.params)


def server_eval(msg: WireMessage, ctx: ServerConvContext) -> WireMessage:
    vals = server_eval_residues(msg, ctx)
    return WireMessage(MsgType.CONV_RESULT, pack_residues(vals, ctx.params, LEVEL_QP))


def client_products(v: Poly, ctx: ClientConvContext) -> np.ndarray:
    """v*(s*p_n) at the same positions as the server share, mod Q."""
    sh, N = ctx.shape, ctx.params.N
    if len(ctx.sp_cache) != sh.c_o:
        raise StateError("client context has no p polynomials loaded")
    parts = [ring.negacyclic_mul_partial(v, sp, group_positions(sh, N, n), ctx.tally)
             for n, sp in enumerate(ctx.sp_cache)]
    return _interleave(parts, sh.c_o)


def client_combine(server_share: np.ndarray, ctx: ClientConvContext, v_id: int) -> Poly:
    """Add both rescaled shares into the length-N result poly at Qp, scale delta."""
    params = ctx.params
    positions = group_positions(ctx.shape, params.N)
    if len(server_share) != len(positions):
        raise ParameterError(f"expected {len(positions)} residues, got {len(server_share)}")
    v = ctx.v_store.pop(v_id).v
    mine = ring.rescale_residues(client_products(v, ctx), params)
    coeffs = np.zeros(params.N, dtype=np.int64).astype(object)
    coeffs[positions] = (np.asarray(server_share, dtype=object) + mine) % params.Qp
    ctx.result = Poly(params, coeffs, LEVEL_QP)
    return ctx.result


def decode_result(r: Poly, shape: ConvShape) -> np.ndarray:
    reals = ckks.to_reals(r.centered(), r.params.delta)
    return decode_output(reals, shape)


def client_round2(msg: WireMessage, ctx: ClientConvContext, v_id: int) -> np.ndarray:
    """Decode the (c_o, w_o, h_o) output from a CONV_RESULT message."""
    if msg.msg_type != MsgType.CONV_RESULT:
        raise StateError(f"expected CONV_RESULT, got {msg.msg_type.name}")
    share = unpack_residues(msg.payload, ctx.params, LEVEL_QP)
    return decode_result(client_combine(share, ctx, v_id), ctx.shape)


def run_conv_local(img, filters, shape: ConvShape, sk, pk, rng, counters=None,
                   channel=None) -> np.ndarray:
    """Both parties in one thread over an optional channel; returns the output."""
    from .transport import duplex_channel

    params = pk.params
    client_end, server_end = channel or duplex_channel(params, counters)
    s_tally = counters.server if counters is not None else None
    c_tally = counters.client if counters is not None else None
    sctx, init = server_init(filters, shape, pk, rng, s_tally)
    server_end.send(init)
    cctx = client_init(client_end.recv(MsgType.CONV_INIT), shape, sk, c_tally)
    msg, v_id = client_round1(img, shape, pk, cctx, rng)
    client_end.send(msg)
    server_end.send(server_eval(server_end.recv(MsgType.CONV_C0), sctx))
    return client_round2(client_end.recv(MsgType.CONV_RESULT), cctx, v_id)
