#!/usr/bin/env python3
"""Side-by-side bound comparison across the four analysis methods.

Runs ibp / crown / crown-ibp / alpha-crown on one network and prints a
per-row table of bounds, widths, and wall time.  Point it at an ONNX
file (optionally with a VNN-LIB specification), or let it draw a random
ReLU net of a requested shape — handy for eyeballing how much each
refinement buys on a given size.

    python3 scripts/compare_methods.py --shape 5,50,6,5 --radius 0.3
    python3 scripts/compare_methods.py --input net.onnx --vnnlib prop.vnnlib
"""

import argparse
import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))

from boundprop.alpha import OptimizerConfig, run_alpha_crown
from boundprop.engine import AnalysisMode, preprocess_C, run_crown, run_ibp
from boundprop.onnx_import import parse_onnx
from boundprop.tensors import BoundedTensor
from boundprop.vnnlib import load_specification


def build_random(shape, seed):
    from make_random_onnx import random_layers
    n_in, width, hidden, n_out = shape
    rng = np.random.default_rng(seed)
    layers = random_layers(rng, n_in, n_out, hidden, width)

    from boundprop.graph import GraphNode, InputRole, NetworkGraph, NodeKind
    nodes = [GraphNode(0, NodeKind.INPUT, {}, [], (n_in,))]
    prev = 0
    for i, (w, b) in enumerate(layers):
        attrs = {"weight": w, "bias": b} if b is not None else {"weight": w}
        nodes.append(GraphNode(len(nodes), NodeKind.GEMM, attrs,
                               [(prev, InputRole.ACTIVATION)], (w.shape[0],)))
        prev = len(nodes) - 1
        if i < len(layers) - 1:
            nodes.append(GraphNode(len(nodes), NodeKind.RELU, {},
                                   [(prev, InputRole.ACTIVATION)], (w.shape[0],)))
            prev = len(nodes) - 1
    return NetworkGraph(nodes, 0, prev)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--input", help="ONNX model (omit to draw a random net)")
    ap.add_argument("--vnnlib", help="specification file (box + output rows)")
    ap.add_argument("--shape", default="3,12,2,2",
                    help="random net as n_in,width,hidden_layers,n_out")
    ap.add_argument("--radius", type=float, default=0.5,
                    help="box half-width around 0 when no spec is given")
    ap.add_argument("--iterations", type=int, default=20)
    ap.add_argument("--lr", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if args.input:
        try:
            graph = parse_onnx(args.input)
        except Exception as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
    else:
        shape = tuple(int(s) for s in args.shape.split(","))
        if len(shape) != 4:
            ap.error("--shape wants n_in,width,hidden_layers,n_out")
        graph = build_random(shape, args.seed)

    n = graph.input_size
    m = graph.nodes[graph.output_id].size
    spec = None
    box = BoundedTensor(np.full(n, -args.radius), np.full(n, args.radius))
    if args.vnnlib:
        try:
            parsed_box, spec = load_specification(args.vnnlib, n, m)
        except Exception as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        if parsed_box is not None:
            box = parsed_box
    branches = preprocess_C(spec, m)

    runs = [
        ("ibp", lambda: run_ibp(graph, box, branches)),
        ("crown", lambda: run_crown(graph, box, branches,
                                    mode=AnalysisMode.CROWN_STANDARD)),
        ("crown-ibp", lambda: run_crown(graph, box, branches,
                                        mode=AnalysisMode.CROWN_IBP)),
        ("alpha-crown", lambda: run_alpha_crown(
            graph, box, branches,
            OptimizerConfig(iterations=args.iterations, lr=args.lr))),
    ]

    timed = []
    for name, call in runs:
        t0 = time.perf_counter()
        result = call()
        timed.append((name, result, time.perf_counter() - t0))

    print(f"network: {n} inputs -> {m} outputs, "
          f"{sum(1 for _ in graph)} nodes; {len(branches)} branch(es)")
    header = f"{'method':<12} {'row':>3} {'lower':>14} {'upper':>14} {'width':>12} {'time':>9}"
    for bidx in range(len(branches)):
        if len(branches) > 1:
            print(f"-- branch {bidx} --")
        print(header)
        for name, result, dt in timed:
            bb = result.branch_bounds[bidx]
            for i, (lo, hi) in enumerate(zip(bb.lower, bb.upper)):
                stamp = f"{dt*1e3:8.2f}ms" if i == 0 and bidx == 0 else ""
                print(f"{name if i == 0 else '':<12} {i:>3} {lo:>14.6f} "
                      f"{hi:>14.6f} {hi - lo:>12.6f} {stamp:>9}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
