"""Model-handle bindings over the bound-propagation engine.

Thin scripting-facing layer: load a network once, pin an input box on
the handle, then ask for per-output bounds by method name.  All analysis
happens in :mod:`boundprop`; this package only validates arguments,
copies arrays at the boundary, and surfaces engine errors unchanged, so
its results are bit-identical to what the CLI reports for the same
inputs.  Heavy numeric work runs inside numpy kernels, which release
the interpreter lock for their duration.

    import lirpapy
    handle = lirpapy.load_model("net.onnx")
    lirpapy.set_input_bounds(handle, lower, upper)
    lo, hi = lirpapy.compute_bounds(handle, "alphaCROWN", {"iterations": 30})
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from boundprop.alpha import OptimizerConfig, run_alpha_crown
from boundprop.engine import AnalysisMode, preprocess_C, run_crown, run_ibp
from boundprop.graph import NetworkGraph
from boundprop.onnx_import import parse_onnx
from boundprop.tensors import BoundedTensor

__all__ = [
    "BoundModelHandle",
    "load_model",
    "get_input_size",
    "set_input_bounds",
    "compute_bounds",
]

_OPTIMIZER_FIELDS = {f.name for f in dataclasses.fields(OptimizerConfig)}


@dataclass
class BoundModelHandle:
    """One loaded network plus its current input box and last result.

    A handle is not safe for concurrent use; distinct handles are
    fully independent.
    """

    graph: NetworkGraph
    box: BoundedTensor | None = None
    last_result: object | None = None

    # method-style sugar over the module-level operations
    def get_input_size(self) -> int:
        return get_input_size(self)

    def set_input_bounds(self, lower, upper) -> None:
        set_input_bounds(self, lower, upper)

    def compute_bounds(self, method: str, options=None):
        return compute_bounds(self, method, options)


def load_model(path: str) -> BoundModelHandle:
    """Import an ONNX file and wrap it in a fresh handle.

    Import problems (unreadable file, unsupported operator, malformed
    graph) raise the importer's own exceptions unchanged.
    """
    return BoundModelHandle(parse_onnx(path))


def get_input_size(handle: BoundModelHandle) -> int:
    return handle.graph.input_size


def set_input_bounds(handle: BoundModelHandle, lower, upper) -> None:
    """Validate and store the box [lower, upper]; both arrays length n.

    Arrays are copied into contiguous 64-bit buffers, so the caller's
    buffers are never retained.
    """
    n = handle.graph.input_size
    lo = np.array(lower, dtype=np.float64, copy=True).reshape(-1)
    hi = np.array(upper, dtype=np.float64, copy=True).reshape(-1)
    if lo.size != n or hi.size != n:
        raise ValueError(
            f"input bounds must have length {n} (got {lo.size} and {hi.size})")
    if np.any(lo > hi):
        bad = int(np.argmax(lo > hi))
        raise ValueError(
            f"lower bound exceeds upper bound at index {bad} "
            f"({lo[bad]!r} > {hi[bad]!r})")
    handle.box = BoundedTensor(lo, hi)


def compute_bounds(handle: BoundModelHandle, method: str, options=None):
    """Per-output (lower, upper) arrays for the handle's current box.

    ``method`` is one of "IBP", "CROWN", or "alphaCROWN" (any casing).
    ``options`` mirrors the optimizer configuration fields and only
    influences "alphaCROWN"; unknown keys are rejected either way.
    """
    if handle.box is None:
        raise ValueError("input bounds must be set before computing bounds")
    opts = dict(options or {})
    unknown = sorted(set(opts) - _OPTIMIZER_FIELDS)
    if unknown:
        raise ValueError(f"unknown option(s): {', '.join(unknown)}")

    m = handle.graph.nodes[handle.graph.output_id].size
    branches = preprocess_C(None, m)     # identity rows, same as the CLI
    key = str(method).lower()
    if key == "ibp":
        result = run_ibp(handle.graph, handle.box, branches)
    elif key == "crown":
        result = run_crown(handle.graph, handle.box, branches,
                           mode=AnalysisMode.CROWN_STANDARD)
    elif key == "alphacrown":
        result = run_alpha_crown(handle.graph, handle.box, branches,
                                 OptimizerConfig(**opts))
    else:
        raise ValueError(
            f"unknown method: {method!r} (expected IBP, CROWN, or alphaCROWN)")

    handle.last_result = result
    bounds = result.branch_bounds[0]
    return bounds.lower.copy(), bounds.upper.copy()
