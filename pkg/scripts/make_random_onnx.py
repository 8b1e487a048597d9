#!/usr/bin/env python3
"""Generate small random feedforward ReLU networks as ONNX files.

The weights are drawn at float64, rounded through float32 (the on-disk
element type), and handed back so callers can evaluate the exact same
numbers the file stores.  Used by the test suites to get reproducible
fixtures without a training framework.
"""

import argparse
import sys

import numpy as np

from boundprop.onnx_proto import (
    DT_FLOAT,
    PAttr,
    PGraph,
    PModel,
    PNode,
    PValueInfo,
    save_model,
    tensor_from_array,
)


def random_layers(rng, n_in, n_out, depth, width, bias=True):
    """[(W, b), ...] with W of shape (fan_out, fan_in); b may be None."""
    sizes = [n_in] + [width] * depth + [n_out]
    layers = []
    for i in range(len(sizes) - 1):
        fan_in = sizes[i]
        w = rng.standard_normal((sizes[i + 1], fan_in)) / np.sqrt(fan_in)
        w = w.astype(np.float32).astype(np.float64)
        b = None
        if bias:
            b = (0.1 * rng.standard_normal(sizes[i + 1])).astype(np.float32).astype(np.float64)
        layers.append((w, b))
    return layers


def reference_forward(layers, x):
    """Evaluate the layer stack (ReLU between layers, none after the last)."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(layers):
        h = h @ w.T
        if b is not None:
            h = h + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def build_model(layers, flavor="gemm", name="random-net"):
    """ONNX model for a layer stack.

    flavor: "gemm" (Gemm with transB=1), "matmul" (MatMul + Add),
    or "mixed" (alternating).
    """
    nodes = []
    inits = []
    n_in = layers[0][0].shape[1]
    prev = "x"
    for i, (w, b) in enumerate(layers):
        last = i == len(layers) - 1
        use_matmul = flavor == "matmul" or (flavor == "mixed" and i % 2 == 1)
        if use_matmul:
            inits.append(tensor_from_array(
                f"W{i}", np.ascontiguousarray(w.T).astype(np.float32)))
            out = f"mm{i}"
            nodes.append(PNode("MatMul", f"matmul_{i}", [prev, f"W{i}"], [out]))
            if b is not None:
                inits.append(tensor_from_array(f"b{i}", b.astype(np.float32)))
                nodes.append(PNode("Add", f"add_{i}", [out, f"b{i}"], [f"lin{i}"]))
                out = f"lin{i}"
        else:
            inits.append(tensor_from_array(f"W{i}", w.astype(np.float32)))
            ins = [prev, f"W{i}"]
            if b is not None:
                inits.append(tensor_from_array(f"b{i}", b.astype(np.float32)))
                ins.append(f"b{i}")
            out = f"lin{i}"
            nodes.append(PNode("Gemm", f"gemm_{i}", ins, [out],
                               {"transB": PAttr(name="transB", i=1)}))
        if not last:
            nodes.append(PNode("Relu", f"relu_{i}", [out], [f"act{i}"]))
            prev = f"act{i}"
        else:
            prev = out
    graph = PGraph(
        name=name,
        nodes=nodes,
        initializers=inits,
        inputs=[PValueInfo("x", DT_FLOAT, [1, n_in])],
        outputs=[PValueInfo(prev, DT_FLOAT, [1, layers[-1][0].shape[0]])],
    )
    return PModel(ir_version=8, opset_version=13, graph=graph)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", help="path of the .onnx file to write")
    p.add_argument("--inputs", type=int, default=2)
    p.add_argument("--outputs", type=int, default=2)
    p.add_argument("--hidden", type=int, default=2, help="number of hidden layers")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flavor", choices=("gemm", "matmul", "mixed"), default="gemm")
    p.add_argument("--no-bias", dest="bias", action="store_false")
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    layers = random_layers(rng, args.inputs, args.outputs, args.hidden,
                           args.width, bias=args.bias)
    model = build_model(layers, flavor=args.flavor)
    save_model(model, args.out)
    print(f"wrote {args.out}: {args.inputs} -> "
          + " -> ".join(str(w.shape[0]) for w, _ in layers)
          + f" ({args.flavor})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
