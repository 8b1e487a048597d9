"""Bound-aware operator DAG: nodes, dependency maps, bound slots.

The graph structure is immutable after construction; the per-node bound
slots (ibp / concrete) are per-analysis state and are cleared between
analyses.  All node values are conceptually row-major flat vectors; the
shape metadata exists so reshape/flatten stay checkable.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import GraphError, ShapeError
from .tensors import (
    BoundedTensor,
    Tensor,
    as_tensor,
    interval_affine,
    interval_elementwise,
    interval_monotone_unary,
    point_box,
)


class NodeKind(Enum):
    INPUT = "Input"
    CONSTANT = "Constant"
    GEMM = "Gemm"
    MATMUL = "MatMul"
    ADD = "Add"
    SUB = "Sub"
    RELU = "ReLU"
    FLATTEN = "Flatten"
    RESHAPE = "Reshape"


LINEAR_KINDS = (NodeKind.GEMM, NodeKind.MATMUL)
ELEMENTWISE_KINDS = (NodeKind.ADD, NodeKind.SUB, NodeKind.RELU,
                     NodeKind.FLATTEN, NodeKind.RESHAPE)


class InputRole(Enum):
    ACTIVATION = "activation"
    CONSTANT = "constant"


@dataclass
class GraphNode:
    """One operator with its attrs, dependencies, and bound slots.

    attrs by kind:
      Gemm/MatMul: "weight" (m x n, already oriented as y = W x), Gemm also "bias" (m)
      Constant:    "value"
      Add/Sub with a folded constant operand: value read from the Constant node
    """

    id: int
    kind: NodeKind
    attrs: dict
    inputs: list[tuple[int, InputRole]]
    output_shape: tuple[int, ...]

    # per-analysis bound slots
    ibp: BoundedTensor | None = None
    concrete: BoundedTensor | None = None
    has_concrete: bool = False

    @property
    def size(self) -> int:
        return int(np.prod(self.output_shape)) if self.output_shape else 1

    def activation_inputs(self) -> list[int]:
        return [i for i, role in self.inputs if role is InputRole.ACTIVATION]

    def constant_inputs(self) -> list[int]:
        return [i for i, role in self.inputs if role is InputRole.CONSTANT]

    def clear_bounds(self) -> None:
        self.ibp = None
        self.concrete = None
        self.has_concrete = False


def build_dependency_graph(nodes: list[GraphNode]) -> tuple[dict[int, list[int]], dict[int, list[int]]]:
    """Forward (node -> bound-dependency inputs) and reverse (node -> successors)
    maps.  Constant-role inputs are not bound dependencies and never appear.
    """
    ids = {n.id for n in nodes}
    forward: dict[int, list[int]] = {}
    reverse: dict[int, list[int]] = {n.id: [] for n in nodes}
    for node in nodes:
        deps = []
        for i, role in node.inputs:
            if i not in ids:
                raise GraphError(f"node {node.id} references missing node {i}")
            if i >= node.id:
                raise GraphError(f"node {node.id} references node {i} out of order")
            if role is InputRole.ACTIVATION:
                deps.append(i)
                reverse[i].append(node.id)
        forward[node.id] = deps
    return forward, reverse


def topological_order(forward_deps: dict[int, list[int]]) -> list[int]:
    """Kahn's algorithm with stable tie-breaking by original node id."""
    remaining = {n: len(deps) for n, deps in forward_deps.items()}
    succs: dict[int, list[int]] = {n: [] for n in forward_deps}
    for n, deps in forward_deps.items():
        for d in deps:
            succs[d].append(n)
    ready = [n for n, c in remaining.items() if c == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for s in succs[n]:
            remaining[s] -= 1
            if remaining[s] == 0:
                heapq.heappush(ready, s)
    if len(order) != len(forward_deps):
        raise GraphError("cycle detected in node dependencies")
    return order


@dataclass
class BoundRequirements:
    needs_input_bounds: list[bool]
    ibp_sufficient: bool


class NetworkGraph:
    """Topologically ordered operator DAG with a single input and output."""

    def __init__(self, nodes: list[GraphNode], input_id: int, output_id: int):
        self.nodes = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise GraphError("duplicate node ids")
        self.forward_deps, self.reverse_deps = build_dependency_graph(nodes)
        self.order = topological_order(self.forward_deps)
        inputs = [n for n in nodes if n.kind is NodeKind.INPUT]
        if len(inputs) != 1 or inputs[0].id != input_id:
            raise GraphError("graph must have exactly one Input node")
        self.input_id = input_id
        self.output_id = output_id
        if output_id not in self.nodes:
            raise GraphError(f"output node {output_id} missing")
        self.input_size = self.nodes[input_id].size
        self.output_size = self.nodes[output_id].size
        self._validate_shapes()

    def node(self, node_id: int) -> GraphNode:
        return self.nodes[node_id]

    def __iter__(self):
        return (self.nodes[i] for i in self.order)

    def clear_bounds(self) -> None:
        for n in self.nodes.values():
            n.clear_bounds()

    # ---- static validation ------------------------------------------------

    def _validate_shapes(self) -> None:
        for node in self:
            sizes = [self.nodes[i].size for i, _ in node.inputs]
            kind = node.kind
            if kind in LINEAR_KINDS:
                w = node.attrs["weight"]
                if w.ndim != 2:
                    raise GraphError(f"node {node.id}: weight must be 2-D, got {w.shape}")
                act = node.activation_inputs()
                if len(act) != 1:
                    raise GraphError(f"node {node.id}: {kind.value} needs one activation input")
                if w.shape[1] != self.nodes[act[0]].size:
                    raise GraphError(
                        f"node {node.id}: weight {w.shape} does not match input size "
                        f"{self.nodes[act[0]].size}")
                if w.shape[0] != node.size:
                    raise GraphError(
                        f"node {node.id}: weight {w.shape} does not match output size {node.size}")
                bias = node.attrs.get("bias")
                if bias is not None and bias.size != node.size:
                    raise GraphError(f"node {node.id}: bias size {bias.size} != {node.size}")
            elif kind in (NodeKind.ADD, NodeKind.SUB):
                if len(node.inputs) != 2:
                    raise GraphError(f"node {node.id}: {kind.value} needs two inputs")
                for s in sizes:
                    if s != node.size and s != 1:
                        raise GraphError(
                            f"node {node.id}: operand size {s} incompatible with {node.size}")
            elif kind in (NodeKind.RELU, NodeKind.FLATTEN, NodeKind.RESHAPE):
                if len(node.inputs) != 1:
                    raise GraphError(f"node {node.id}: {kind.value} needs one input")
                if sizes[0] != node.size:
                    raise GraphError(
                        f"node {node.id}: size {sizes[0]} -> {node.size} not a relabeling")
            elif kind is NodeKind.CONSTANT:
                v = node.attrs["value"]
                if v.size != node.size:
                    raise GraphError(f"node {node.id}: constant value size mismatch")

    # ---- bound metadata -----------------------------------------------------

    def bound_requirements(self, node: GraphNode) -> BoundRequirements:
        """Which inputs need precomputed bounds, and whether IBP suffices.

        A ReLU whose dependency chain back to the input crosses a linear
        layer needs a dedicated backward pass for tight pre-activation
        bounds; everything else is fine with plain interval propagation.
        """
        needs = [role is InputRole.ACTIVATION for _, role in node.inputs]
        if node.kind is not NodeKind.RELU:
            return BoundRequirements(needs, True)
        seen = set()
        stack = list(self.forward_deps[node.id])
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            if self.nodes[i].kind in LINEAR_KINDS:
                return BoundRequirements(needs, False)
            stack.extend(self.forward_deps[i])
        return BoundRequirements(needs, True)

    # ---- concrete evaluation (the soundness oracle) -------------------------

    def _operand_value(self, node: GraphNode, values: dict[int, Tensor], slot: int) -> Tensor:
        node_id, _role = node.inputs[slot]
        return values[node_id]

    def evaluate(self, x) -> Tensor:
        """Evaluate the network at one point (flat input -> flat output)."""
        return self.evaluate_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]

    def evaluate_batch(self, xs) -> Tensor:
        """Evaluate at a (batch, n) array of points; returns (batch, m)."""
        xs = as_tensor(xs)
        if xs.ndim != 2 or xs.shape[1] != self.input_size:
            raise ShapeError(f"expected (batch, {self.input_size}) inputs, got {xs.shape}")
        values: dict[int, Tensor] = {}
        for node in self:
            kind = node.kind
            if kind is NodeKind.INPUT:
                values[node.id] = xs
            elif kind is NodeKind.CONSTANT:
                values[node.id] = node.attrs["value"].reshape(1, -1)
            elif kind in LINEAR_KINDS:
                w = node.attrs["weight"]
                bias = node.attrs.get("bias")
                act = values[node.activation_inputs()[0]]
                out = act @ w.T
                if bias is not None:
                    out = out + bias.reshape(1, -1)
                values[node.id] = out
            elif kind in (NodeKind.ADD, NodeKind.SUB):
                a = self._operand_value(node, values, 0)
                b = self._operand_value(node, values, 1)
                values[node.id] = a + b if kind is NodeKind.ADD else a - b
            elif kind is NodeKind.RELU:
                values[node.id] = np.maximum(values[node.inputs[0][0]], 0.0)
            else:  # Flatten / Reshape: relabeling only under flat storage
                values[node.id] = values[node.inputs[0][0]]
        return values[self.output_id].reshape(xs.shape[0], self.output_size)

    # ---- forward interval step (used by the IBP pass) ------------------------

    def interval_step(self, node: GraphNode, boxes: dict[int, BoundedTensor],
                      input_box: BoundedTensor) -> BoundedTensor:
        """One node's output box given its operand boxes."""
        kind = node.kind
        if kind is NodeKind.INPUT:
            return input_box.flat()
        if kind is NodeKind.CONSTANT:
            return point_box(node.attrs["value"].reshape(-1))
        if kind in LINEAR_KINDS:
            return interval_affine(node.attrs["weight"], node.attrs.get("bias"),
                                   boxes[node.activation_inputs()[0]])
        if kind in (NodeKind.ADD, NodeKind.SUB):
            a = boxes[node.inputs[0][0]]
            b = boxes[node.inputs[1][0]]
            return interval_elementwise("add" if kind is NodeKind.ADD else "sub", a, b)
        if kind is NodeKind.RELU:
            return interval_monotone_unary("relu", boxes[node.inputs[0][0]])
        return interval_monotone_unary("reshape", boxes[node.inputs[0][0]],
                                       {"shape": (node.size,)})
