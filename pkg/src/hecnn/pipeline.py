"""Multi-layer private inference: config parsing, the two party state
machines, a plaintext reference chain and the run report.

Each party is a generator that yields the endpoint it is about to read
from.  In threaded mode the yields are ignored and reads block; in
sequential mode a round-robin scheduler only resumes a party whose inbox
has data, which gives a deterministic interleaving in one thread.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ckks
from . import conv_protocol as cp
from . import fc_protocol as fp
from . import relu_bridge as rb
from .conv_pack import ConvShape, decode_output, group_positions, pack_input_values
from .cost_model import CostCounters, predict_conv_run, predict_fc_run, reconcile
from .errors import HEError, ParameterError, ProtocolError
from .fc_pack import FcShape, plan_tiles, tile_input_values
from .fileio import read_tensor
from .oracle import conv_lipschitz, conv2d_ref, fc_lipschitz, fixed_point, relu_ref
from .ring import LEVEL_Q, LEVEL_QP, Poly, RingParams, rescale_residues
from .transport import MsgType, WireMessage, duplex_channel, pack_residues, socket_channel

PRESETS = {
    "paper": lambda: RingParams.paper(),
    "paper16": lambda: RingParams.paper(N=1 << 16),
    "desk": lambda: RingParams.desk(),
}


def resolve_params(choice) -> RingParams:
    """A preset name or a dict with N, qbits, qpbits and optional sigma, h."""
    if choice is None:
        return RingParams.desk()
    if isinstance(choice, str):
        try:
            return PRESETS[choice]()
        except KeyError:
            raise ParameterError(f"unknown parameter preset {choice!r}; use one of {sorted(PRESETS)}") from None
    d = dict(choice)
    if "preset" in d:
        base = resolve_params(d.pop("preset"))
        d = {"N": base.N, "qbits": base.Q.bit_length() - 1, "qpbits": base.Qp.bit_length() - 1,
             "sigma": base.sigma, "h": base.h, **d}
    q, qp = 1 << int(d["qbits"]), 1 << int(d["qpbits"])
    if qp >= q:
        raise ParameterError("qpbits must be smaller than qbits")
    return RingParams(int(d["N"]), q, qp, q // qp, sigma=float(d.get("sigma", 3.2)),
                      h=int(d.get("h", 64)))


# -- network description -----------------------------------------------------

@dataclass
class Layer:
    kind: str
    shape: object = None
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    @property
    def linear(self) -> bool:
        return self.kind in ("conv", "fc")

    def describe(self) -> dict:
        if self.shape is None:
            return {"type": self.kind}
        return {"type": self.kind, **{k: getattr(self.shape, k) for k in self.shape.__dataclass_fields__}}


@dataclass
class Network:
    params: RingParams
    input_shape: tuple
    layers: list
    image: np.ndarray
    seed: int = 0

    def predicted(self, index: int) -> dict:
        layer = self.layers[index]
        masked = index + 1 < len(self.layers) and self.layers[index + 1].kind == "relu"
        if layer.kind == "conv":
            return predict_conv_run(layer.shape, self.params, masked=masked)
        return predict_fc_run(layer.shape, self.params, masked=masked)


def _load_or_draw(entry: dict, key: str, shape: tuple, rng: np.random.Generator, base: Path):
    if key in entry and entry[key] is not None and not isinstance(entry[key], bool):
        arr = read_tensor(base / entry[key])
        if arr.shape != shape:
            raise ParameterError(f"{key} file holds shape {arr.shape}, expected {shape}")
        return arr
    sub = np.random.default_rng(entry["seed"]) if "seed" in entry else rng
    return sub.uniform(-1.0, 1.0, size=shape)


def build_network(config: dict, seed: Optional[int] = None, params: Optional[RingParams] = None,
                  base_dir=".") -> Network:
    """Validate a config and materialize weights and the input image.

    Conv entries take ``c_i, c_o`` and either ``w, f`` or ``w_i, h_i, f_w,
    f_h``; FC entries take ``n_o`` and optionally ``n_i`` and ``bias``.
    Missing weight files are replaced by seeded uniform [-1, 1] draws.
    """
    base = Path(base_dir)
    params = params or resolve_params(config.get("params"))
    seed = int(config.get("seed", 0) if seed is None else seed)
    model_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    entries = config.get("layers") or []
    if not entries:
        raise ParameterError("config has no layers")
    cur = None
    if config.get("input", {}).get("shape"):
        cur = tuple(int(x) for x in config["input"].get("shape", []))
    layers = []
    for idx, e in enumerate(entries):
        kind = e.get("type")
        where = f"layer {idx} ({kind})"
        try:
            if kind == "conv":
                w_i = e.get("w_i", e.get("w"))
                h_i = e.get("h_i", e.get("w"))
                f_w = e.get("f_w", e.get("f"))
                f_h = e.get("f_h", e.get("f"))
                shape = ConvShape(int(e["c_i"]), int(e["c_o"]), int(w_i), int(h_i), int(f_w), int(f_h))
                shape.check_ring(params.N)
                want = (shape.c_i, shape.w_i, shape.h_i)
                if cur is not None and math.prod(cur) != math.prod(want):
                    raise ParameterError(f"expects {want} inputs but receives {cur}")
                W = _load_or_draw(e, "weights", (shape.c_i, shape.c_o, shape.f_w, shape.f_h), model_rng, base)
                layers.append(Layer("conv", shape, W))
                cur = (shape.c_o, shape.w_o, shape.h_o)
            elif kind == "fc":
                n_i = int(e.get("n_i", math.prod(cur) if cur else 0))
                shape = FcShape(n_i, int(e["n_o"]))
                if cur is not None and math.prod(cur) != n_i:
                    raise ParameterError(f"expects {n_i} inputs but receives {cur}")
                W = _load_or_draw(e, "weights", (shape.n_o, shape.n_i), model_rng, base)
                B = _load_or_draw(e, "bias", (shape.n_o,), model_rng, base) if e.get("bias") else None
                layers.append(Layer("fc", shape, W, B))
                cur = (shape.n_o,)
            elif kind == "relu":
                if not layers or not layers[-1].linear:
                    raise ParameterError("relu must follow a linear layer")
                layers.append(Layer("relu"))
            else:
                raise ParameterError(f"unknown layer type {kind!r}")
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"{where}: missing or malformed field {exc}") from None
        except ParameterError as exc:
            raise ParameterError(f"{where}: {exc}") from None
    _check_relu_neighbours(layers, params)
    first = layers[0]
    if not first.linear:
        raise ParameterError("the first layer must be conv or fc")
    in_shape = ((first.shape.c_i, first.shape.w_i, first.shape.h_i) if first.kind == "conv"
                else (first.shape.n_i,))
    inp = config.get("input", {})
    if inp.get("file"):
        image = read_tensor(base / inp["file"]).reshape(in_shape)
    else:
        image = np.random.default_rng(np.random.SeedSequence([seed, 2])).uniform(-1, 1, in_shape)
    return Network(params, in_shape, layers, image, seed)


def _check_relu_neighbours(layers: list, params: RingParams) -> None:
    for i, layer in enumerate(layers):
        if layer.kind != "relu":
            continue
        prev = layers[i - 1]
        if prev.kind == "fc" and len(plan_tiles(prev.shape.n_i, prev.shape.n_o, params.N)) != 1:
            raise ParameterError(f"layer {i}: relu needs the preceding FC layer to fit one polynomial")
        if i + 1 >= len(layers) or not layers[i + 1].linear:
            raise ParameterError(f"layer {i}: relu must be followed by conv or fc")
        nxt = layers[i + 1]
        if nxt.kind == "fc" and plan_tiles(nxt.shape.n_i, nxt.shape.n_o, params.N).col_tiles != 1:
            raise ParameterError(f"layer {i + 1}: FC after relu must take a single input polynomial")


# -- plaintext reference -----------------------------------------------------

def reference_chain(net: Network) -> list:
    """Layer outputs computed in double precision on fixed-point weights."""
    d = net.params.delta
    x = fixed_point(net.image, d)
    outs = []
    for layer in net.layers:
        if layer.kind == "conv":
            x = conv2d_ref(x.reshape(layer.shape.c_i, layer.shape.w_i, layer.shape.h_i),
                           fixed_point(layer.weights, d), layer.shape)
        elif layer.kind == "fc":
            x = fixed_point(layer.weights, d) @ x.ravel()
            if layer.bias is not None:
                x = x + fixed_point(layer.bias, d * d)
        else:
            x = relu_ref(x)
        outs.append(x)
    return outs


def _noise_sigma(layer: Layer, params: RingParams) -> float:
    """Predicted decryption-noise stddev of one linear layer at message scale.

    The (v*e + e0)*w term scales with the energy of the whole packed weight
    polynomial: one output channel's filters for conv, a full tile for FC.
    """
    N, h, sig = params.N, params.h, params.sigma
    W = np.asarray(layer.weights)
    if layer.kind == "conv":
        energy, parts = float((W ** 2).sum(axis=(0, 2, 3)).max()), 1
    else:
        plan = plan_tiles(layer.shape.n_i, layer.shape.n_o, N)
        energy = max(float((W[t.row_start:t.row_stop, t.col_start:t.col_stop] ** 2).sum())
                     for t in plan.tiles)
        parts = plan.col_tiles
    return sig * math.sqrt(parts * (h * N / 2 + (N / 2 + 1) * energy)) / params.delta


def tolerances(net: Network, k: float = 7.0) -> list:
    """Per-layer max-error envelopes propagated through each layer's gain."""
    p = net.params
    fresh = k * p.sigma * math.sqrt(p.N / 2 + 1 + p.h) / p.delta
    tol, out = 0.0, []
    after_relu = False
    for layer in net.layers:
        if layer.linear:
            gain = conv_lipschitz(layer.weights) if layer.kind == "conv" else fc_lipschitz(layer.weights)
            inp = tol + (fresh if after_relu else 0.0) + 1.0 / p.delta
            tol = gain * inp + k * _noise_sigma(layer, p) + 3.0 / p.delta
            after_relu = False
        else:
            after_relu = True
        out.append(tol)
    return out


def _check_headroom(net: Network, ref: list) -> None:
    limit = net.params.Qp / (4 * net.params.delta)
    for i, x in enumerate(ref):
        if np.max(np.abs(x)) >= limit:
            raise ParameterError(f"layer {i}: activations reach {np.max(np.abs(x)):.3g}, beyond the "
                                 f"modulus headroom {limit:.3g}; use smaller weights or larger Q'")


# -- parties -----------------------------------------------------------------

@dataclass
class Session:
    net: Network
    sk: ckks.SecretKey
    pk: ckks.PublicKey
    layer_counters: list
    gc: rb.TrustedGC = field(default_factory=rb.TrustedGC)
    registry: rb.MaskRegistry = field(default_factory=rb.MaskRegistry)
    outputs: dict = field(default_factory=dict)
    abort: threading.Event = field(default_factory=threading.Event)
    threaded: bool = False


def _recv(sess: Session, ep, mtype: MsgType):
    yield ep
    if not sess.threaded:
        return ep.recv(mtype)
    while True:
        try:
            return ep.recv(mtype, timeout=0.2)
        except ProtocolError as exc:
            if "timed out" not in str(exc):
                raise
            if sess.abort.is_set():
                raise ProtocolError("peer aborted") from None


def _positions(layer: Layer, N: int) -> np.ndarray:
    if layer.kind == "conv":
        return group_positions(layer.shape, N)
    return np.arange(layer.shape.n_o)


def _repack(prev: Layer, nxt: Layer, params: RingParams):
    """Map a ReLU output in ``prev``'s result layout to ``nxt``'s input layout."""

    def run(signed: np.ndarray) -> np.ndarray:
        if prev.kind == "conv":
            vals = decode_output(signed, prev.shape)
        else:
            vals = signed[:prev.shape.n_o]
        if nxt.kind == "conv":
            sh = nxt.shape
            return pack_input_values(np.asarray(vals).reshape(sh.c_i, sh.w_i, sh.h_i), sh, params.N)
        plan = plan_tiles(nxt.shape.n_i, nxt.shape.n_o, params.N)
        return tile_input_values(np.asarray(vals).ravel(), 0, plan, params).centered()

    return run


def server_party(sess: Session, ep, rng: np.random.Generator):
    net, pk = sess.net, sess.pk
    layers = net.layers
    pending = None  # masks whose phi2 must be removed from the next input
    for i, layer in enumerate(layers):
        if not layer.linear:
            continue
        ep.counters = sess.layer_counters[i]
        tally = sess.layer_counters[i].server
        if layer.kind == "conv":
            ctx, init = cp.server_init(layer.weights, layer.shape, pk, rng, tally)
        else:
            ctx, init = fp.fc_server_init(layer.weights, layer.bias, layer.shape, pk, rng, tally)
        ep.send(init)
        if pending is None:
            msg = yield from _recv(sess, ep, MsgType.CONV_C0 if layer.kind == "conv" else MsgType.FC_C0)
            if layer.kind == "conv":
                share = cp.server_eval_residues(msg, ctx)
            else:
                share = fp.fc_server_eval_residues(msg, ctx)
        else:
            msg = yield from _recv(sess, ep, MsgType.RELU_REENC)
            c0 = rb.server_unmask(Poly.from_bytes(net.params, msg.payload, LEVEL_Q), pending, sess.registry)
            pending = None
            prods = cp.server_products(c0, ctx) if layer.kind == "conv" else fp.fc_server_products([c0], ctx)
            share = rescale_residues(prods, net.params)
        if i + 1 < len(layers) and layers[i + 1].kind == "relu":
            pos = _positions(layer, net.params.N)
            pending = sess.registry.sample(net.params, rng, pos)
            sess.gc.receive_masks(pending)
            ep.send(rb.masked_message(rb.server_mask(share, pending, pos, sess.registry), pending, net.params))
        else:
            rtype = MsgType.CONV_RESULT if layer.kind == "conv" else MsgType.FC_RESULT
            ep.send(WireMessage(rtype, pack_residues(share, net.params, LEVEL_QP)))


def client_party(sess: Session, ep, rng: np.random.Generator):
    net, pk, sk = sess.net, sess.pk, sess.sk
    params = net.params
    layers = net.layers
    x = net.image
    carried = None  # randomness of the re-encrypted ReLU output
    for i, layer in enumerate(layers):
        if not layer.linear:
            continue
        ep.counters = sess.layer_counters[i]
        tally = sess.layer_counters[i].client
        if layer.kind == "conv":
            init = yield from _recv(sess, ep, MsgType.CONV_INIT)
            ctx = cp.client_init(init, layer.shape, sk, tally)
        else:
            init = yield from _recv(sess, ep, MsgType.FC_INIT)
            ctx = fp.fc_client_init(init, layer.shape, sk, tally)
        if carried is None:
            if layer.kind == "conv":
                msg, handle = cp.client_round1(x, layer.shape, pk, ctx, rng)
            else:
                msg, handle = fp.fc_client_round1(x, pk, ctx, rng)
            ep.send(msg)
        else:
            vid = ctx.v_store.put(carried)
            handle = vid if layer.kind == "conv" else [vid]
            carried = None
        relu_next = i + 1 < len(layers) and layers[i + 1].kind == "relu"
        if relu_next:
            msg = yield from _recv(sess, ep, MsgType.RELU_MASKED)
            nonce, vals = rb.read_masked(msg, params)
            if layer.kind == "conv":
                masked_r = cp.client_combine(vals, ctx, handle)
            else:
                signed = fp.fc_client_combine(vals, ctx, handle)
                coeffs = np.zeros(params.N, dtype=np.int64).astype(object)
                coeffs[:len(signed)] = signed
                masked_r = Poly.from_ints(params, coeffs, LEVEL_QP)
            gc_out = sess.gc.evaluate(masked_r, nonce, _repack(layer, layers[i + 2], params))
            ct, carried = rb.client_reencrypt(gc_out, pk, rng)
            ep.counters = sess.layer_counters[i + 2]
            ep.send(rb.reenc_message(ct))
        else:
            if layer.kind == "conv":
                msg = yield from _recv(sess, ep, MsgType.CONV_RESULT)
                x = cp.client_round2(msg, ctx, handle)
            else:
                msg = yield from _recv(sess, ep, MsgType.FC_RESULT)
                x = fp.fc_client_round2(msg, ctx, handle)
            sess.outputs[i] = x


def _debug_taps(sess: Session):
    """Record the plaintext the trusted stub sees, for per-layer error reports."""
    layers = sess.net.layers
    relu_idx = iter([i for i, l in enumerate(layers) if l.kind == "relu"])
    delta = sess.net.params.delta

    def tap(r: np.ndarray):
        i = next(relu_idx)
        prev = layers[i - 1]
        reals = ckks.to_reals(r, delta)
        pre = decode_output(reals, prev.shape) if prev.kind == "conv" else reals[:prev.shape.n_o]
        sess.outputs[i - 1] = pre
        sess.outputs[i] = relu_ref(pre)

    sess.gc.trace = tap


def _drive_sequential(parties: list) -> None:
    pending = [[g, None] for g in parties]
    for item in pending:
        item[1] = next(item[0], StopIteration)
    while True:
        live = [p for p in pending if p[1] is not StopIteration]
        if not live:
            return
        progressed = False
        for item in live:
            ep = item[1]
            if ep.poll():
                item[1] = next(item[0], StopIteration)
                progressed = True
        if not progressed:
            raise ProtocolError("both parties are waiting: protocol deadlock")


def _drive_threaded(sess: Session, parties: list) -> None:
    errors = []

    def run(gen):
        try:
            for _ in gen:
                pass
        except BaseException as exc:  # re-raised in the caller
            errors.append(exc)
            sess.abort.set()

    threads = [threading.Thread(target=run, args=(g,), daemon=True) for g in parties]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def run_network(net: Network, threaded: bool = True, use_socket: bool = False) -> dict:
    """Execute the network privately and return the JSON-ready report."""
    seeds = np.random.SeedSequence([net.seed, 3]).spawn(3)
    key_rng, client_rng, server_rng = (np.random.default_rng(s) for s in seeds)
    params = net.params
    ref = reference_chain(net)
    _check_headroom(net, ref)
    sk, pk = ckks.keygen(params, key_rng)
    counters = [CostCounters() for _ in net.layers]
    sess = Session(net, sk, pk, counters, threaded=threaded)
    _debug_taps(sess)
    if use_socket:
        client_end, server_end = socket_channel(params)
    else:
        client_end, server_end = duplex_channel(params)
    parties = [client_party(sess, client_end, client_rng), server_party(sess, server_end, server_rng)]
    if threaded:
        _drive_threaded(sess, parties)
    else:
        _drive_sequential(parties)
    return build_report(net, sess, ref)


def build_report(net: Network, sess: Session, ref: list) -> dict:
    tols = tolerances(net)
    rows, ok = [], True
    total = CostCounters()
    for i, layer in enumerate(net.layers):
        got = np.asarray(sess.outputs.get(i), dtype=np.float64)
        want = np.asarray(ref[i], dtype=np.float64).reshape(got.shape)
        err = float(np.max(np.abs(got - want)))
        row = {"index": i, **layer.describe(), "max_error": err, "tolerance": tols[i],
               "within_tolerance": err <= tols[i]}
        ok &= row["within_tolerance"]
        if layer.linear:
            rec = reconcile(sess.layer_counters[i], net.predicted(i), layer.shape, raise_on_fail=False)
            row["reconciliation"] = rec
            ok &= rec["pass"]
            _accumulate(total, sess.layer_counters[i])
        rows.append(row)
    snap = total.snapshot()
    rot_ok = snap["rotations_server"] == 0 and snap["rotations_client"] == 0
    return {
        "params": {"N": net.params.N, "qbits": net.params.Q.bit_length() - 1,
                   "qpbits": net.params.Qp.bit_length() - 1, "delta_bits": net.params.delta.bit_length() - 1,
                   "sigma": net.params.sigma, "h": net.params.h},
        "seed": net.seed,
        "layers": rows,
        "counters": {**snap, "init_bytes": total.init_bytes},
        "zero_rotations": rot_ok,
        "pass": bool(ok and rot_ok),
    }


def _accumulate(total: CostCounters, part: CostCounters) -> None:
    total.server.add_products(part.server.coeff_outputs, part.server.coeff_mults)
    total.client.add_products(part.client.coeff_outputs, part.client.coeff_mults)
    total.server.rotations += part.server.rotations
    total.client.rotations += part.client.rotations
    total.add_wire("c2s", part.bytes_c2s, part.residues_c2s)
    total.add_wire("s2c", part.bytes_s2c, part.residues_s2c)
    total.add_wire("c2s", part.init_bytes, 0, init=True)


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config is not valid JSON: {exc}") from None


def run_config(config: dict, seed=None, params=None, threaded: bool = True, base_dir=".") -> dict:
    return run_network(build_network(config, seed, params, base_dir), threaded=threaded)


__all__ = ["Network", "Layer", "build_network", "run_network", "run_config", "reference_chain",
           "tolerances", "resolve_params", "load_config", "PRESETS", "HEError"]
