"""High-level handle: load a network once, set a box, query output bounds."""

from __future__ import annotations

import numpy as np

from .alpha import OptimizerConfig, run_alpha_crown
from .engine import AnalysisMode, Deadline, preprocess_C, run_crown, run_ibp
from .errors import ShapeError
from .graph import NetworkGraph
from .onnx_import import parse_onnx
from .tensors import BoundedTensor, make_bounded_tensor


def _method_key(method: str) -> str:
    return method.lower().replace("-", "").replace("_", "").replace(" ", "")


class BoundModel:
    """A loaded network plus a current input box.

    Methods are named case-insensitively: "IBP", "CROWN", "alphaCROWN"
    (hyphen/underscore variants accepted).
    """

    def __init__(self, graph: NetworkGraph):
        self.graph = graph
        self._box: BoundedTensor | None = None

    @classmethod
    def from_onnx(cls, path) -> "BoundModel":
        return cls(parse_onnx(path))

    @property
    def input_size(self) -> int:
        return self.graph.input_size

    @property
    def output_size(self) -> int:
        return self.graph.nodes[self.graph.output_id].size

    def set_input_bounds(self, lower, upper) -> None:
        box = make_bounded_tensor(lower, upper).flat()
        if box.size != self.input_size:
            raise ShapeError(
                f"expected bounds of size {self.input_size}, got {box.size}")
        self._box = box

    def compute_bounds(self, method: str = "CROWN", ibp_intermediates: bool = False,
                       config: OptimizerConfig | None = None,
                       timeout: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Elementwise output bounds under the current input box."""
        if self._box is None:
            raise ValueError("set_input_bounds must be called before compute_bounds")
        branches = preprocess_C(None, self.output_size)
        deadline = Deadline(timeout)
        key = _method_key(method)
        if key == "ibp":
            result = run_ibp(self.graph, self._box, branches, deadline)
        elif key == "crown":
            mode = AnalysisMode.CROWN_IBP if ibp_intermediates else AnalysisMode.CROWN_STANDARD
            result = run_crown(self.graph, self._box, branches, mode, deadline=deadline)
        elif key == "alphacrown":
            result = run_alpha_crown(self.graph, self._box, branches, config, deadline)
        else:
            raise ValueError(
                f"unknown method {method!r}; expected one of IBP, CROWN, alphaCROWN")
        box = result.branch_bounds[0]
        return box.lower.copy(), box.upper.copy()
