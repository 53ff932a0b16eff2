"""Two-party rotation-free fully connected layer.

Same flow as the convolution protocol, except that each tile needs only
its first few product coefficients, and the bias is added on the server at
product scale before rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ckks, ring
from .errors import ParameterError, StateError
from .fc_pack import (FcShape, FcTilePlan, combine_tiles, plan_tiles, tile_bias,
                      tile_input_values, tile_weights)
from .ring import LEVEL_Q, LEVEL_QP, Poly, RingParams
from .transport import MsgType, WireMessage, pack_polys, pack_residues, unpack_polys, unpack_residues


@dataclass
class ServerFcContext:
    shape: FcShape
    plan: FcTilePlan
    w: list
    b: list
    a: Poly
    p: list
    tally: object = None

    @property
    def params(self) -> RingParams:
        return self.a.params


@dataclass
class ClientFcContext:
    shape: FcShape
    plan: FcTilePlan
    sk: ckks.SecretKey
    sp_cache: list = field(default_factory=list)
    v_store: ckks.RandomnessStore = field(default_factory=ckks.RandomnessStore)
    tally: object = None
    result: np.ndarray | None = None

    @property
    def params(self) -> RingParams:
        return self.sk.s.params

    @property
    def memory_coeffs(self) -> int:
        held = len(self.sp_cache) * self.params.N
        return held + (self.shape.n_o if self.result is not None else 0)


def fc_server_init(W, B, shape: FcShape, pk: ckks.PublicKey, rng: np.random.Generator,
                   tally=None) -> tuple[ServerFcContext, WireMessage]:
    params = pk.params
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (shape.n_o, shape.n_i):
        raise ParameterError(f"weight shape {W.shape} does not match {(shape.n_o, shape.n_i)}")
    if B is not None and np.asarray(B).size != shape.n_o:
        raise ParameterError(f"bias needs {shape.n_o} entries")
    plan = plan_tiles(shape.n_i, shape.n_o, params.N)
    w = [tile_weights(W, t, plan, params) for t in plan.tiles]
    b = [tile_bias(B, t, params) for t in plan.tiles]
    stddev = params.delta * params.sigma
    p = [wt * pk.a + ring.sample_gaussian(params, rng, stddev=stddev) for wt in w]
    ctx = ServerFcContext(shape, plan, w, b, pk.a, p, tally)
    return ctx, WireMessage(MsgType.FC_INIT, pack_polys(p))


def fc_client_init(msg: WireMessage, shape: FcShape, sk: ckks.SecretKey,
                   tally=None) -> ClientFcContext:
    if msg.msg_type != MsgType.FC_INIT:
        raise StateError(f"expected FC_INIT, got {msg.msg_type.name}")
    params = sk.s.params
    plan = plan_tiles(shape.n_i, shape.n_o, params.N)
    p = unpack_polys(msg.payload, params)
    if len(p) != len(plan):
        raise ParameterError(f"expected {len(plan)} p polynomials, got {len(p)}")
    return ClientFcContext(shape, plan, sk, [sk.s * q for q in p], tally=tally)


def fc_client_round1(I, pk: ckks.PublicKey, ctx: ClientFcContext,
                     rng: np.random.Generator) -> tuple[WireMessage, list]:
    """Encrypt reals in [-1, 1]; one c0 per column tile."""
    I = np.asarray(I, dtype=np.float64).ravel()
    if I.size != ctx.shape.n_i:
        raise ParameterError(f"expected {ctx.shape.n_i} inputs, got {I.size}")
    if np.any(np.abs(I) > 1.0):
        raise ParameterError("input values must lie in [-1, 1]")
    return fc_encrypt_values(np.rint(I * ctx.params.delta), pk, ctx, rng)


def fc_encrypt_values(values: np.ndarray, pk: ckks.PublicKey, ctx: ClientFcContext,
                      rng: np.random.Generator) -> tuple[WireMessage, list]:
    """Encrypt already-scaled integer inputs."""
    halves = [ckks.encrypt_c0_only(tile_input_values(values, c, ctx.plan, ctx.params), pk,
                                   rng, ctx.v_store, "fc")
              for c in range(ctx.plan.col_tiles)]
    payload = b"".join(h.c0.to_bytes() for h in halves)
    return WireMessage(MsgType.FC_C0, payload), [h.v_id for h in halves]


def _split_c0(msg: WireMessage, ctx) -> list:
    params = ctx.params
    size = params.N * params.width(LEVEL_Q)
    if len(msg.payload) != size * ctx.plan.col_tiles:
        raise ParameterError(f"FC_C0 payload must hold {ctx.plan.col_tiles} polynomials")
    return [Poly.from_bytes(params, msg.payload[c * size:(c + 1) * size])
            for c in range(ctx.plan.col_tiles)]


def fc_server_products(c0s: list, ctx: ServerFcContext) -> np.ndarray:
    """c0*w + b on each tile's first rows, concatenated in tile order, mod Q."""
    out = []
    Q = ctx.params.Q
    for t, w, b in zip(ctx.plan.tiles, ctx.w, ctx.b):
        rows = np.arange(t.row_stop - t.row_start)
        part = ring.negacyclic_mul_partial(c0s[t.col_index], w, rows, ctx.tally)
        out.append((part + b.coeffs[rows]) % Q)
    return np.concatenate(out)


def fc_server_eval_residues(msg: WireMessage, ctx: ServerFcContext) -> np.ndarray:
    if ctx is None or not getattr(ctx, "w", None):
        raise StateError("server context is not initialized")
    if msg.msg_type != MsgType.FC_C0:
        raise StateError(f"expected FC_C0, got {msg.msg_type.name}")
    return ring.rescale_residues(fc_server_products(_split_c0(msg, ctx), ctx), ctx.params)


def fc_server_eval(msg: WireMessage, ctx: ServerFcContext) -> WireMessage:
    vals = fc_server_eval_residues(msg, ctx)
    return WireMessage(MsgType.FC_RESULT, pack_residues(vals, ctx.params, LEVEL_QP))


def fc_client_products(vs: list, ctx: ClientFcContext) -> np.ndarray:
    out = []
    for t, sp in zip(ctx.plan.tiles, ctx.sp_cache):
        rows = np.arange(t.row_stop - t.row_start)
        out.append(ring.negacyclic_mul_partial(vs[t.col_index], sp, rows, ctx.tally))
    return np.concatenate(out)


def fc_client_combine(server_share: np.ndarray, ctx: ClientFcContext, v_ids: list) -> np.ndarray:
    """Signed outputs at scale delta, summed over column tiles."""
    params = ctx.params
    expected = ctx.plan.col_tiles * ctx.shape.n_o
    if len(server_share) != expected:
        raise ParameterError(f"expected {expected} residues, got {len(server_share)}")
    vs = [ctx.v_store.pop(v).v for v in v_ids]
    mine = ring.rescale_residues(fc_client_products(vs, ctx), params)
    total = ring.center((np.asarray(server_share, dtype=object) + mine) % params.Qp, params.Qp)
    parts, pos = [], 0
    for t in ctx.plan.tiles:
        n = t.row_stop - t.row_start
        parts.append(total[pos:pos + n])
        pos += n
    ctx.result = combine_tiles(parts, ctx.plan)
    return ctx.result


def fc_client_round2(msg: WireMessage, ctx: ClientFcContext, v_ids: list) -> np.ndarray:
    if msg.msg_type != MsgType.FC_RESULT:
        raise StateError(f"expected FC_RESULT, got {msg.msg_type.name}")
    share = unpack_residues(msg.payload, ctx.params, LEVEL_QP)
    return ckks.to_reals(fc_client_combine(share, ctx, v_ids), ctx.params.delta)


def run_fc_local(I, W, B, shape: FcShape, sk, pk, rng, counters=None) -> np.ndarray:
    from .transport import duplex_channel

    client_end, server_end = duplex_channel(pk.params, counters)
    s_tally = counters.server if counters is not None else None
    c_tally = counters.client if counters is not None else None
    sctx, init = fc_server_init(W, B, shape, pk, rng, s_tally)
    server_end.send(init)
    cctx = fc_client_init(client_end.recv(MsgType.FC_INIT), shape, sk, c_tally)
    msg, v_ids = fc_client_round1(I, pk, cctx, rng)
    client_end.send(msg)
    server_end.send(fc_server_eval(server_end.recv(MsgType.FC_C0), sctx))
    return fc_client_round2(client_end.recv(MsgType.FC_RESULT), cctx, v_ids)
