"""Command-line driver: ``hecnn <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ckks
from .acceptance import run_all
from .conv_pack import ConvShape
from .cost_model import (REFERENCE_RELU_MB, REFERENCE_RELU_ROWS, SchemeId, conv_cost, fc_cost,
                         relu_bandwidth)
from .errors import HEError
from .fc_pack import FcShape
from .fileio import write_public_key, write_secret_key
from .pipeline import PRESETS, build_network, load_config, resolve_params, run_network


def _params(args, config=None):
    if args.params:
        return resolve_params(args.params)
    return resolve_params((config or {}).get("params"))


def _emit(report: dict, path) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def cmd_keygen(args) -> int:
    params = _params(args)
    rng = np.random.default_rng(args.seed)
    sk, pk = ckks.keygen(params, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_secret_key(out / "secret.key", sk)
    write_public_key(out / "public.key", pk)
    print(f"wrote {out / 'secret.key'} and {out / 'public.key'} (N={params.N})")
    return 0


def _run(args, config: dict) -> int:
    base = Path(args.config).parent if getattr(args, "config", None) else Path(".")
    net = build_network(config, seed=args.seed, params=_params(args, config), base_dir=base)
    report = run_network(net, threaded=not args.sequential)
    _emit(report, args.report)
    return 0 if report["pass"] else 1


def cmd_run_conv(args) -> int:
    c_i, c_o, w, f = args.shape
    layer = {"type": "conv", "c_i": c_i, "c_o": c_o, "w": w, "f": f}
    if args.weights:
        layer["weights"] = str(Path(args.weights).resolve())
    cfg = {"layers": [layer]}
    if args.input:
        cfg["input"] = {"file": str(Path(args.input).resolve())}
    return _run(args, cfg)


def cmd_run_fc(args) -> int:
    layer = {"type": "fc", "n_i": args.n_i, "n_o": args.n_o, "bias": args.bias}
    if args.weights:
        layer["weights"] = str(Path(args.weights).resolve())
    cfg = {"layers": [layer]}
    if args.input:
        cfg["input"] = {"file": str(Path(args.input).resolve())}
    return _run(args, cfg)


def cmd_run_net(args) -> int:
    return _run(args, load_config(args.config))


def _fmt(v) -> str:
    return f"({v[0]}, {v[1]})" if isinstance(v, tuple) else str(v)


def cost_report(schemes, conv_shapes, fc_shapes, N: int) -> dict:
    conv_rows = [{"shape": list(s), "N": n, "costs": {sc.value: conv_cost(sc, ConvShape.square(*s), n, strict=False).as_dict()
                                                      for sc in schemes}}
                 for s, n in conv_shapes]
    fc_rows = [{"shape": list(s), "N": N, "costs": {sc.value: fc_cost(sc, FcShape(*s), N).as_dict()
                                                    for sc in schemes}}
               for s in fc_shapes]
    relu_rows = []
    for j, (w, c_i, c_o) in enumerate(REFERENCE_RELU_ROWS):
        row = {"w": w, "c_i": c_i, "c_o": c_o}
        for sc in schemes:
            mb = relu_bandwidth(sc, w, c_i, c_o).megabytes
            row[sc.value] = {"mb": round(mb, 4), "reference_mb": REFERENCE_RELU_MB[sc.value][j],
                             "match": abs(mb - REFERENCE_RELU_MB[sc.value][j]) <= 0.01}
        relu_rows.append(row)
    return {"conv": conv_rows, "fc": fc_rows, "relu_bandwidth": relu_rows}


def _print_cost(rep: dict, schemes) -> None:
    print("Conv layer complexity (coeff outputs | rotations | data/poly | memory polys)")
    for row in rep["conv"]:
        print(f"  c_i,c_o,w,f = {tuple(row['shape'])}, N = {row['N']}")
        for name, c in row["costs"].items():
            print(f"    {name:9s} {_fmt(c['coeff_outputs']):>22s} | {_fmt(c['rotations']):>7s} | "
                  f"{c['data_per_poly']:>6d} | {_fmt(c['memory'])}")
    print("FC layer complexity (coeff outputs | rotations | memory coeffs)")
    for row in rep["fc"]:
        print(f"  n_i,n_o = {tuple(row['shape'])}, N = {row['N']}")
        for name, c in row["costs"].items():
            print(f"    {name:9s} {_fmt(c['coeff_outputs']):>22s} | {_fmt(c['rotations']):>7s} | {_fmt(c['memory'])}")
    print("GC ReLU bandwidth, MB = 1e6 bytes (N = 8192, 104/55-bit moduli)")
    print("  w,c_i,c_o     " + "".join(f"{s.value:>18s}" for s in schemes))
    for row in rep["relu_bandwidth"]:
        cells = "".join(f"{row[s.value]['mb']:>9.3f} ({row[s.value]['reference_mb']:>5})"
                        for s in schemes)
        print(f"  {row['w']:>2},{row['c_i']:>3},{row['c_o']:>3}   {cells}")


def cmd_cost_report(args) -> int:
    schemes = list(SchemeId) if args.scheme == "all" else [SchemeId(args.scheme)]
    params = resolve_params(args.params or "paper")
    conv_shapes = [((c_i, c_i, w, 3), c_i * w * w) for w, c_i, _ in REFERENCE_RELU_ROWS]
    fc_shapes = [(64, 64), (256, 16), (1024, 10), (4096, 2)]
    if args.config:
        cfg = load_config(args.config)
        net = build_network(cfg, params=params)
        conv_shapes = [((l.shape.c_i, l.shape.c_o, l.shape.w_i, l.shape.f_w), params.N)
                       for l in net.layers if l.kind == "conv"]
        fc_shapes = [(l.shape.n_i, l.shape.n_o) for l in net.layers if l.kind == "fc"]
    rep = cost_report(schemes, conv_shapes, fc_shapes, params.N)
    if args.report:
        Path(args.report).write_text(json.dumps(rep, indent=2) + "\n")
    _print_cost(rep, schemes)
    ok = all(row[s.value]["match"] for row in rep["relu_bandwidth"] for s in schemes)
    return 0 if ok else 1


def cmd_verify(args) -> int:
    results = run_all()
    if args.report:
        Path(args.report).write_text(json.dumps(
            [{"criterion": r.number, "title": r.title, "pass": r.passed, "detail": r.detail,
              "seconds": r.seconds, "metrics": r.metrics} for r in results], indent=2, default=str) + "\n")
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" +
          (f"; failing: {failed}" if failed else ""))
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (u64)")
    common.add_argument("--params", choices=sorted(PRESETS), default=None, help="ring parameter preset")
    common.add_argument("--report", help="write the JSON report here as well")

    runner = argparse.ArgumentParser(add_help=False)
    runner.add_argument("--sequential", action="store_true",
                        help="interleave both parties in one thread instead of two")

    p = argparse.ArgumentParser(prog="hecnn", description="Rotation-free private CNN inference")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", parents=[common], help="generate and store a key pair")
    k.add_argument("--out", default="keys")
    k.set_defaults(func=cmd_keygen)

    c = sub.add_parser("run-conv", parents=[common, runner], help="run one private conv layer")
    c.add_argument("--shape", type=int, nargs=4, metavar=("C_I", "C_O", "W", "F"), default=[4, 4, 8, 2])
    c.add_argument("--weights", help="filter tensor file (c_i, c_o, f, f)")
    c.add_argument("--input", help="image tensor file (c_i, w, w)")
    c.set_defaults(func=cmd_run_conv)

    f = sub.add_parser("run-fc", parents=[common, runner], help="run one private FC layer")
    f.add_argument("--n-i", type=int, default=64)
    f.add_argument("--n-o", type=int, default=16)
    f.add_argument("--bias", action="store_true")
    f.add_argument("--weights", help="weight tensor file (n_o, n_i)")
    f.add_argument("--input", help="input tensor file (n_i,)")
    f.set_defaults(func=cmd_run_fc)

    n = sub.add_parser("run-net", parents=[common, runner], help="run a network from a JSON config")
    n.add_argument("--config", required=True)
    n.set_defaults(func=cmd_run_net)

    r = sub.add_parser("cost-report", parents=[common], help="print closed-form cost tables")
    r.add_argument("--scheme", default="all", choices=["all"] + [s.value for s in SchemeId])
    r.add_argument("--config", help="take conv/FC shapes from a network config")
    r.set_defaults(func=cmd_cost_report)

    v = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
