"""Shared fixtures and small builders used across the test suite."""

import importlib.util
import itertools
import pathlib
import sys

import numpy as np
import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load_script(name: str):
    """Import a module from scripts/ by file path (they are not a package)."""
    path = ROOT / "scripts" / f"{name}.py"
    spec = importlib.util.spec_from_file_location(name, path)
    mod = importlib.util.module_from_spec(spec)
    sys.modules[name] = mod
    spec.loader.exec_module(mod)
    return mod


netgen = load_script("make_random_onnx")


# ---------------------------------------------------------------------------
# in-process graph builders (no ONNX round trip)
# ---------------------------------------------------------------------------

def tiny_graph():
    """2 -> 2 -> 1 ReLU net: W1 = [[1,1],[1,-1]], W2 = [1,1], no biases."""
    from boundprop.graph import GraphNode, InputRole, NetworkGraph, NodeKind

    w1 = np.array([[1.0, 1.0], [1.0, -1.0]])
    w2 = np.array([[1.0, 1.0]])
    nodes = [
        GraphNode(0, NodeKind.INPUT, {}, [], (2,)),
        GraphNode(1, NodeKind.GEMM, {"weight": w1}, [(0, InputRole.ACTIVATION)], (2,)),
        GraphNode(2, NodeKind.RELU, {}, [(1, InputRole.ACTIVATION)], (2,)),
        GraphNode(3, NodeKind.GEMM, {"weight": w2}, [(2, InputRole.ACTIVATION)], (1,)),
    ]
    return NetworkGraph(nodes, 0, 3)


def layers_graph(layers, relu_after_last=False):
    """NetworkGraph from [(W, b), ...] with ReLU between layers."""
    from boundprop.graph import GraphNode, InputRole, NetworkGraph, NodeKind

    n_in = layers[0][0].shape[1]
    nodes = [GraphNode(0, NodeKind.INPUT, {}, [], (n_in,))]
    prev = 0
    for i, (w, b) in enumerate(layers):
        attrs = {"weight": np.asarray(w, dtype=np.float64)}
        if b is not None:
            attrs["bias"] = np.asarray(b, dtype=np.float64)
        nid = len(nodes)
        nodes.append(GraphNode(nid, NodeKind.GEMM, attrs,
                               [(prev, InputRole.ACTIVATION)], (w.shape[0],)))
        prev = nid
        if i < len(layers) - 1 or relu_after_last:
            nid = len(nodes)
            nodes.append(GraphNode(nid, NodeKind.RELU, {},
                                   [(prev, InputRole.ACTIVATION)], (w.shape[0],)))
            prev = nid
    return NetworkGraph(nodes, 0, prev)


def random_graph(rng, n_in=None, n_out=None, depth=None, width=None):
    """Random ReLU net as a NetworkGraph (sizes drawn when not given)."""
    n_in = n_in or int(rng.integers(1, 5))
    n_out = n_out or int(rng.integers(1, 4))
    depth = depth or int(rng.integers(1, 4))
    width = width or int(rng.integers(2, 9))
    layers = netgen.random_layers(rng, n_in, n_out, depth, width)
    return layers_graph(layers), layers


def random_box(rng, n, center_scale=1.0, radius_scale=1.0):
    from boundprop.tensors import BoundedTensor

    center = center_scale * rng.standard_normal(n)
    radius = radius_scale * rng.uniform(0.05, 1.0, size=n)
    return BoundedTensor(center - radius, center + radius)


def sample_box(rng, box, k):
    """k points drawn uniformly inside a finite box, corners included."""
    lo = box.lower.reshape(-1)
    hi = box.upper.reshape(-1)
    pts = rng.uniform(lo, hi, size=(k, lo.size))
    pts[0] = lo
    if k > 1:
        pts[1] = hi
    return pts


def corner_outputs(graph, box):
    """Network outputs at every corner of the box (exact extrema when the
    network is affine over the whole box)."""
    lo = box.lower.reshape(-1)
    hi = box.upper.reshape(-1)
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    return graph.evaluate_batch(corners)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Re-print the acceptance scoreboard outside capture, one line per
    criterion, whenever the acceptance module ran."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "SCOREBOARD", None) if mod else None
    if lines:
        terminalreporter.section("acceptance scoreboard")
        for line in lines:
            terminalreporter.write_line(line)
