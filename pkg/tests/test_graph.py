"""Graph construction, validation, evaluation, and interval steps."""

import numpy as np
import pytest

from boundprop.errors import GraphError, ShapeError
from boundprop.graph import (
    GraphNode,
    InputRole,
    NetworkGraph,
    NodeKind,
    build_dependency_graph,
    topological_order,
)
from boundprop.tensors import BoundedTensor

from conftest import layers_graph, netgen, tiny_graph

ACT = InputRole.ACTIVATION
CONST = InputRole.CONSTANT


def test_dependency_graph_rejects_dangling_and_forward_refs():
    with pytest.raises(GraphError, match="missing node"):
        build_dependency_graph([
            GraphNode(0, NodeKind.INPUT, {}, [], (1,)),
            GraphNode(1, NodeKind.RELU, {}, [(7, ACT)], (1,)),
        ])
    with pytest.raises(GraphError, match="out of order"):
        build_dependency_graph([
            GraphNode(0, NodeKind.INPUT, {}, [], (1,)),
            GraphNode(1, NodeKind.RELU, {}, [(2, ACT)], (1,)),
            GraphNode(2, NodeKind.RELU, {}, [(0, ACT)], (1,)),
        ])


def test_topological_order_detects_cycle():
    with pytest.raises(GraphError, match="cycle"):
        topological_order({0: [1], 1: [0]})


def test_graph_requires_single_input_and_output():
    nodes = [GraphNode(0, NodeKind.INPUT, {}, [], (2,))]
    with pytest.raises(GraphError, match="output node"):
        NetworkGraph(nodes, 0, 5)
    two_inputs = [
        GraphNode(0, NodeKind.INPUT, {}, [], (2,)),
        GraphNode(1, NodeKind.INPUT, {}, [], (2,)),
    ]
    with pytest.raises(GraphError, match="exactly one Input"):
        NetworkGraph(two_inputs, 0, 1)


def test_shape_validation_per_kind():
    inp = GraphNode(0, NodeKind.INPUT, {}, [], (3,))
    bad_weight = GraphNode(1, NodeKind.GEMM, {"weight": np.zeros((2, 4))}, [(0, ACT)], (2,))
    with pytest.raises(GraphError, match="does not match input size"):
        NetworkGraph([inp, bad_weight], 0, 1)

    bad_rows = GraphNode(1, NodeKind.GEMM, {"weight": np.zeros((5, 3))}, [(0, ACT)], (2,))
    with pytest.raises(GraphError, match="does not match output size"):
        NetworkGraph([inp, bad_rows], 0, 1)

    bad_bias = GraphNode(1, NodeKind.GEMM, {"weight": np.zeros((2, 3)), "bias": np.zeros(7)},
                         [(0, ACT)], (2,))
    with pytest.raises(GraphError, match="bias size"):
        NetworkGraph([inp, bad_bias], 0, 1)

    bad_add = GraphNode(1, NodeKind.ADD,
                        {}, [(0, ACT), (0, ACT)], (5,))
    with pytest.raises(GraphError, match="operand size"):
        NetworkGraph([inp, bad_add], 0, 1)

    bad_relu = GraphNode(1, NodeKind.RELU, {}, [(0, ACT)], (4,))
    with pytest.raises(GraphError, match="not a relabeling"):
        NetworkGraph([inp, bad_relu], 0, 1)


def test_evaluate_matches_hand_composition(rng):
    layers = netgen.random_layers(rng, 3, 2, 2, 5)
    g = layers_graph(layers)
    xs = rng.uniform(-2, 2, size=(50, 3))
    want = netgen.reference_forward(layers, xs)
    got = g.evaluate_batch(xs)
    np.testing.assert_array_equal(got, want)
    one = g.evaluate(xs[0])
    np.testing.assert_array_equal(one, want[0])
    with pytest.raises(ShapeError):
        g.evaluate_batch(np.zeros((5, 7)))


def test_evaluate_handles_add_sub_constant_and_reshape():
    # y = reshape(relu(W x) - c) + x  (diamond: input feeds two consumers)
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    c = np.array([0.5, -0.5])
    nodes = [
        GraphNode(0, NodeKind.INPUT, {}, [], (2,)),
        GraphNode(1, NodeKind.GEMM, {"weight": w}, [(0, ACT)], (2,)),
        GraphNode(2, NodeKind.RELU, {}, [(1, ACT)], (2,)),
        GraphNode(3, NodeKind.CONSTANT, {"value": c}, [], (2,)),
        GraphNode(4, NodeKind.SUB, {}, [(2, ACT), (3, CONST)], (2,)),
        GraphNode(5, NodeKind.RESHAPE, {"shape": (1, 2)}, [(4, ACT)], (1, 2)),
        GraphNode(6, NodeKind.ADD, {}, [(5, ACT), (0, ACT)], (2,)),
    ]
    g = NetworkGraph(nodes, 0, 6)
    x = np.array([1.0, -2.0])
    want = (np.maximum(w @ x, 0.0) - c) + x
    np.testing.assert_array_equal(g.evaluate(x), want)


def test_interval_steps_cover_all_kinds():
    g = tiny_graph()
    box = BoundedTensor(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    boxes = {}
    for node in g:
        boxes[node.id] = g.interval_step(node, boxes, box)
    np.testing.assert_array_equal(boxes[1].lower, [-2.0, -2.0])
    np.testing.assert_array_equal(boxes[1].upper, [2.0, 2.0])
    np.testing.assert_array_equal(boxes[2].lower, [0.0, 0.0])
    np.testing.assert_array_equal(boxes[3].upper, [4.0])


def test_bound_requirements_flags_relu_behind_linear():
    g = tiny_graph()
    relu = g.nodes[2]
    req = g.bound_requirements(relu)
    assert req.needs_input_bounds == [True]
    assert req.ibp_sufficient is False  # Gemm sits between input and the ReLU
    gemm = g.nodes[1]
    assert g.bound_requirements(gemm).ibp_sufficient is True


def test_bound_requirements_elementwise_chain_is_ibp_sufficient():
    # input -> add(const) -> relu: no linear layer, IBP box is already exact
    c = GraphNode(1, NodeKind.CONSTANT, {"value": np.array([1.0, 1.0])}, [], (2,))
    nodes = [
        GraphNode(0, NodeKind.INPUT, {}, [], (2,)),
        c,
        GraphNode(2, NodeKind.ADD, {}, [(0, ACT), (1, CONST)], (2,)),
        GraphNode(3, NodeKind.RELU, {}, [(2, ACT)], (2,)),
    ]
    g = NetworkGraph(nodes, 0, 3)
    assert g.bound_requirements(g.nodes[3]).ibp_sufficient is True


def test_clear_bounds_resets_slots():
    g = tiny_graph()
    box = BoundedTensor(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    from boundprop.engine import compute_ibp_bounds

    compute_ibp_bounds(g, box)
    assert all(g.nodes[i].ibp is not None for i in g.order)
    g.clear_bounds()
    assert all(g.nodes[i].ibp is None for i in g.order)
    assert not any(g.nodes[i].has_concrete for i in g.order)


def test_iteration_follows_topological_order():
    g = tiny_graph()
    seen = [n.id for n in g]
    assert seen == sorted(seen)
    assert seen[0] == g.input_id and seen[-1] == g.output_id
